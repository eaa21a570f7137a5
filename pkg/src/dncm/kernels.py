"""Hot numeric kernels: squared-distance matrices and brute-force KNN scans.

Every kernel has two implementations with identical semantics: a numba
``@njit`` version and a pure-numpy version. The numpy path is selected by
setting the environment variable ``DNCM_PURE_NUMPY=1`` before import (or
automatically when numba is not importable); ``using_numba`` reports which
path is active. ``benchmarks/kernel_bench.py`` compares the two.
"""

import os

import numpy as np

_FORCE_NUMPY = os.environ.get("DNCM_PURE_NUMPY", "") not in ("", "0")

if not _FORCE_NUMPY:
    try:
        from numba import njit

        using_numba = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        using_numba = False
else:
    using_numba = False


def _as_matrix_f64(a, name):
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {a.shape}")
    return a


# ---------------------------------------------------------------------------
# squared Euclidean distance matrix
# ---------------------------------------------------------------------------

def _sq_dist_matrix_numpy(x, centers):
    n = x.shape[0]
    out = np.empty((n, centers.shape[0]), dtype=np.float64)
    # chunked so the (chunk, k, d) temporary stays small
    step = max(1, 2_000_000 // max(1, centers.size))
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        diff = x[lo:hi, None, :] - centers[None, :, :]
        out[lo:hi] = np.einsum("qkd,qkd->qk", diff, diff)
    return out


if using_numba:

    @njit(cache=True)
    def _sq_dist_matrix_jit(x, centers):
        n, d = x.shape
        k = centers.shape[0]
        out = np.empty((n, k), dtype=np.float64)
        for i in range(n):
            for j in range(k):
                s = 0.0
                for c in range(d):
                    t = x[i, c] - centers[j, c]
                    s += t * t
                out[i, j] = s
        return out


def sq_dist_matrix(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between rows of `x` and rows of `centers`.

    Returns an (n, k) float64 matrix.
    """
    x = _as_matrix_f64(x, "x")
    centers = _as_matrix_f64(centers, "centers")
    if x.shape[1] != centers.shape[1]:
        raise ValueError(
            f"dimension mismatch: vectors are {x.shape[1]}-dim, "
            f"centers are {centers.shape[1]}-dim"
        )
    if using_numba:
        return _sq_dist_matrix_jit(x, centers)
    return _sq_dist_matrix_numpy(x, centers)


# ---------------------------------------------------------------------------
# brute-force k-nearest-neighbour vote
# ---------------------------------------------------------------------------
#
# Tie rules (both paths implement them exactly):
#   * equal distances: earlier training sample (insertion order) wins a slot
#   * equal vote counts: smallest label wins

def _knn_labels_numpy(train_x, train_y, queries, k):
    uniq, inv = np.unique(train_y, return_inverse=True)
    nlab = uniq.shape[0]
    nq = queries.shape[0]
    out = np.empty(nq, dtype=np.int64)
    step = max(1, 4_000_000 // max(1, train_x.shape[0]))
    for lo in range(0, nq, step):
        hi = min(nq, lo + step)
        d2 = _sq_dist_matrix_numpy(queries[lo:hi], train_x)
        if k >= train_x.shape[0]:
            kth = np.full(hi - lo, np.inf)
        else:
            kth = np.partition(d2, k - 1, axis=1)[:, k - 1]
        lt = d2 < kth[:, None]
        eq = d2 <= kth[:, None]
        n_lt = lt.sum(axis=1)
        n_le = eq.sum(axis=1)
        counts = np.zeros((hi - lo, nlab), dtype=np.int64)
        for r in range(hi - lo):
            if n_le[r] == k or kth[r] == np.inf:
                members = np.flatnonzero(eq[r])
            else:
                # boundary tie: keep earliest-inserted samples at the kth distance
                need = k - n_lt[r]
                ties = np.flatnonzero(d2[r] == kth[r])[:need]
                members = np.concatenate([np.flatnonzero(lt[r]), ties])
            counts[r] = np.bincount(inv[members], minlength=nlab)
        out[lo:hi] = uniq[np.argmax(counts, axis=1)]
    return out


if using_numba:

    @njit(cache=True)
    def _knn_labels_jit(train_x, train_y, queries, k):
        n, d = train_x.shape
        nq = queries.shape[0]
        kk = min(k, n)
        out = np.empty(nq, dtype=np.int64)
        bestd = np.empty(kk, dtype=np.float64)
        besty = np.empty(kk, dtype=np.int64)
        for q in range(nq):
            filled = 0
            for i in range(n):
                s = 0.0
                for c in range(d):
                    t = train_x[i, c] - queries[q, c]
                    s += t * t
                if filled < kk:
                    p = filled
                    while p > 0 and s < bestd[p - 1]:
                        bestd[p] = bestd[p - 1]
                        besty[p] = besty[p - 1]
                        p -= 1
                    bestd[p] = s
                    besty[p] = train_y[i]
                    filled += 1
                elif s < bestd[kk - 1]:
                    p = kk - 1
                    while p > 0 and s < bestd[p - 1]:
                        bestd[p] = bestd[p - 1]
                        besty[p] = besty[p - 1]
                        p -= 1
                    bestd[p] = s
                    besty[p] = train_y[i]
            best_label = -1
            best_count = 0
            for a in range(kk):
                la = besty[a]
                cnt = 0
                for b in range(kk):
                    if besty[b] == la:
                        cnt += 1
                if cnt > best_count or (cnt == best_count and la < best_label):
                    best_count = cnt
                    best_label = la
            out[q] = best_label
        return out


def knn_labels(
    train_x: np.ndarray, train_y: np.ndarray, queries: np.ndarray, k: int
) -> np.ndarray:
    """Majority label among the k nearest training rows, per query row.

    Full scan over the training set, squared Euclidean distance. Distance
    ties are broken by insertion order, vote ties by smallest label.
    """
    train_x = _as_matrix_f64(train_x, "train_x")
    queries = _as_matrix_f64(queries, "queries")
    train_y = np.ascontiguousarray(train_y, dtype=np.int64)
    if train_x.shape[0] == 0:
        raise ValueError("no training samples")
    if train_x.shape[1] != queries.shape[1]:
        raise ValueError(
            f"dimension mismatch: queries are {queries.shape[1]}-dim, "
            f"training samples are {train_x.shape[1]}-dim"
        )
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if using_numba:
        return _knn_labels_jit(train_x, train_y, queries, int(k))
    return _knn_labels_numpy(train_x, train_y, queries, int(k))
