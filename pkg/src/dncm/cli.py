"""Command-line workflows: gen-data, train, update, eval, bench, project.

Every subcommand is deterministic given its flags and --seed (latency fields
excepted). Exit codes: 0 success, 1 usage/validation problem, 2 runtime
failure (training divergence, I/O).
"""

import argparse
import os
import sys
from dataclasses import asdict

from . import bench, ncm
from . import data as datakit
from . import training
from .network import TrainingDivergedError


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _require_file(path: str, what: str) -> str:
    if not os.path.isfile(path):
        raise ValueError(f"{what} {path!r} does not exist")
    return path


def _require_model_dir(path: str) -> str:
    if not os.path.isdir(path) or not os.path.isfile(os.path.join(path, training.META_FILE)):
        raise ValueError(f"model directory {path!r} does not exist or is not a model")
    return path


def build_parser() -> _Parser:
    parser = _Parser(prog="dncm", description=__doc__,
                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-data", help="generate a synthetic sensor-style dataset CSV",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--classes", type=int, required=True, help="number of classes")
    p.add_argument("--per-class", type=int, default=500, help="samples per class")
    p.add_argument("--dim", type=int, default=10, help="feature dimension")
    p.add_argument("--center-scale", type=float, default=10.0,
                   help="class centers drawn uniformly in [-scale, scale]^dim")
    p.add_argument("--noise-sigma", type=float, default=1.0,
                   help="per-coordinate Gaussian noise std")
    p.add_argument("--drift-slope", type=float, default=0.0,
                   help="per-sample-index drift along a class-specific direction")
    p.add_argument("--label-start", type=int, default=0,
                   help="first label (offset for incremental pools)")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("train", help="initial-phase training on a dataset CSV",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--data", required=True, help="training dataset CSV")
    p.add_argument("--out", required=True, help="model artifact directory")
    p.add_argument("--report", default=None, help="per-epoch report CSV path")
    p.add_argument("--save-splits", default=None, metavar="DIR",
                   help="also write train/validation/test CSVs to DIR")
    p.add_argument("--hidden", type=_ints, default=[64, 32, 20],
                   help="hidden layer widths, comma separated")
    p.add_argument("--split", type=_floats, default=[0.7, 0.1, 0.2],
                   help="train,validation,test fractions")
    p.add_argument("--batch-size", type=int, default=16, help="minibatch size")
    p.add_argument("--momentum", type=float, default=0.9, help="SGD momentum")
    p.add_argument("--lr", type=float, default=0.001, help="initial learning rate")
    p.add_argument("--lr-decay-factor", type=float, default=0.5,
                   help="learning-rate multiplier applied on the decay schedule")
    p.add_argument("--lr-decay-every", type=int, default=15,
                   help="epochs between learning-rate decays")
    p.add_argument("--max-epoch", type=int, default=50, help="number of epochs")
    p.add_argument("--metric", choices=ncm.METRICS, default="euclidean",
                   help="distance metric of the class-mean head")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for init, shuffling and the split")

    p = sub.add_parser("update", help="integrate new-class samples into a trained model",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--model", required=True, help="input model directory")
    p.add_argument("--data", required=True, help="update stream CSV")
    p.add_argument("--out", required=True, help="output model directory (may equal --model)")

    p = sub.add_parser("eval", help="evaluate a model on a dataset CSV",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--model", required=True, help="model directory")
    p.add_argument("--data", required=True, help="evaluation dataset CSV")
    p.add_argument("--per-class", action="store_true",
                   help="emit a per-class accuracy table CSV")
    p.add_argument("--out", default=None, help="per-class table CSV path (default: stdout)")

    p = sub.add_parser("bench", help="run an experiment sweep and write a report CSV",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--sweep", choices=bench.SWEEP_VARIABLES, required=True,
                   help="sweep variable")
    p.add_argument("--values", type=_ints, required=True,
                   help="sweep values, comma separated, strictly increasing")
    p.add_argument("--initial-data", required=True, help="initial-pool CSV")
    p.add_argument("--incremental-data", required=True, help="new-class-pool CSV")
    p.add_argument("--model", default=None,
                   help="pretrained model directory (otherwise trained here; "
                        "ignored by the initial-classes sweep)")
    p.add_argument("--out", default=None,
                   help="report CSV path (default: sweep_<variable>.csv)")
    p.add_argument("--trials", type=int, default=30, help="randomized trials per value")
    p.add_argument("--train-per-class", type=int, default=20,
                   help="training samples drawn per new class")
    p.add_argument("--methods", default="DNCM,KNN,RawNCM",
                   help="comma-separated subset of DNCM,KNN,RawNCM")
    p.add_argument("--new-class-values", type=_ints, default=None,
                   help="new-class counts for the initial-classes sweep "
                        "(default: all pool classes)")
    p.add_argument("--exclude-initial", action="store_true",
                   help="test only on new classes instead of the joint mix")
    p.add_argument("--min-test-pool", type=int, default=480,
                   help="warn when a class's test pool falls below this")
    p.add_argument("--hidden", type=_ints, default=[64, 32, 20],
                   help="hidden layer widths for internally trained models")
    p.add_argument("--split", type=_floats, default=[0.7, 0.1, 0.2],
                   help="train,validation,test fractions of the initial pool")
    p.add_argument("--batch-size", type=int, default=16, help="minibatch size")
    p.add_argument("--momentum", type=float, default=0.9, help="SGD momentum")
    p.add_argument("--lr", type=float, default=0.001, help="initial learning rate")
    p.add_argument("--lr-decay-factor", type=float, default=0.5,
                   help="learning-rate multiplier applied on the decay schedule")
    p.add_argument("--lr-decay-every", type=int, default=15,
                   help="epochs between learning-rate decays")
    p.add_argument("--max-epoch", type=int, default=50, help="number of epochs")
    p.add_argument("--metric", choices=ncm.METRICS, default="euclidean",
                   help="distance metric")
    p.add_argument("--seed", type=int, default=0,
                   help="root seed; per-trial seeds are derived from (seed, trial)")

    p = sub.add_parser("project", help="2-D PCA projection CSV of a dataset",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--space", choices=("raw", "feature"), default="raw",
                   help="project raw inputs or extractor features")
    p.add_argument("--model", default=None,
                   help="model directory (required with --space feature)")
    p.add_argument("--dims", type=int, default=2, help="projection dimensions")
    p.add_argument("--out", required=True, help="output CSV path")
    return parser


def _cmd_gen_data(args) -> int:
    spec = datakit.SyntheticSpec(
        num_classes=args.classes, samples_per_class=args.per_class,
        feature_dim=args.dim, center_scale=args.center_scale,
        noise_sigma=args.noise_sigma, drift_slope=args.drift_slope, seed=args.seed)
    dataset = datakit.generate_synthetic(spec)
    if args.label_start:
        dataset.labels = dataset.labels + args.label_start
    datakit.save_csv(dataset, args.out)
    print(f"wrote {len(dataset)} rows ({args.classes} classes x {args.per_class} "
          f"per class, labels {args.label_start}..{args.label_start + args.classes - 1}) "
          f"to {args.out}")
    return 0


def _training_config(args, seed: int) -> training.TrainingConfig:
    return training.TrainingConfig(
        batch_size=args.batch_size, momentum=args.momentum, learning_rate=args.lr,
        lr_decay_factor=args.lr_decay_factor, lr_decay_every_epochs=args.lr_decay_every,
        max_epoch=args.max_epoch, shuffle_seed=seed, metric=args.metric)


def _split_spec(fractions: list[float], seed: int) -> datakit.SplitSpec:
    if len(fractions) != 3:
        raise ValueError(f"--split needs three fractions, got {fractions}")
    return datakit.SplitSpec(*fractions, seed=seed)


def _cmd_train(args) -> int:
    dataset = datakit.load_csv(_require_file(args.data, "dataset"))
    train, val, test = datakit.split(dataset, _split_spec(args.split, args.seed))
    config = _training_config(args, args.seed)
    model, report = training.initial_train(train, config, args.seed,
                                           hidden_dims=tuple(args.hidden), validation=val)
    training.save_model(model, args.out, extra_meta={
        "config": asdict(config), "seed": args.seed, "hidden_dims": list(args.hidden),
        "split": list(args.split), "data": args.data})
    if args.report:
        report.save_csv(args.report)
    if args.save_splits:
        os.makedirs(args.save_splits, exist_ok=True)
        for name, part in (("train", train), ("validation", val), ("test", test)):
            datakit.save_csv(part, os.path.join(args.save_splits, f"{name}.csv"))
    if report.n_epochs():
        print(f"trained {report.n_epochs()} epochs: final mean loss "
              f"{report.mean_loss[-1]:.6f}, train accuracy {report.train_accuracy[-1]:.4f}, "
              f"validation accuracy {report.val_accuracy[-1]:.4f}")
    else:
        print("trained 0 epochs: model keeps its initialization")
    print(f"model written to {args.out}")
    return 0


def _cmd_update(args) -> int:
    model = training.load_model(_require_model_dir(args.model))
    stream = datakit.load_csv(_require_file(args.data, "update CSV"), allow_empty=True)
    before = set(model.registry.labels())
    training.updating_train(model, stream)
    meta = training.load_model_meta(args.model)
    meta.pop("format_version", None)
    meta.pop("metric", None)
    training.save_model(model, args.out, extra_meta=meta)
    new_labels = [l for l in model.registry.labels() if l not in before]
    print(f"integrated {len(stream)} samples; new classes: "
          + (", ".join(f"{l} (count {model.registry.count(l)})" for l in new_labels)
             if new_labels else "none"))
    print(f"model written to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    model = training.load_model(_require_model_dir(args.model))
    dataset = datakit.load_csv(_require_file(args.data, "dataset"))
    accuracy, per_class = training.evaluate(model, dataset)
    print(f"accuracy {accuracy:.6f} over {len(dataset)} samples, "
          f"{len(per_class)} classes")
    if args.per_class:
        table = bench.build_class_accuracy_table({"DNCM": model.predict_batch}, dataset)
        if args.out:
            table.save(args.out)
            print(f"per-class table written to {args.out}")
        else:
            sys.stdout.write(table.to_csv_text())
    return 0


def _cmd_bench(args) -> int:
    initial = datakit.load_csv(_require_file(args.initial_data, "initial-pool CSV"))
    incremental = datakit.load_csv(_require_file(args.incremental_data,
                                                 "incremental-pool CSV"))
    methods = tuple(m for m in args.methods.split(",") if m)
    spec = bench.SweepSpec(
        variable=args.sweep, values=list(args.values), trials=args.trials,
        train_samples_per_new_class=args.train_per_class, methods=methods,
        seed=args.seed, include_initial_classes=not args.exclude_initial,
        new_class_values=tuple(args.new_class_values) if args.new_class_values else None,
        min_test_pool=args.min_test_pool)
    config = _training_config(args, args.seed)
    if args.sweep == bench.SWEEP_INITIAL_CLASSES:
        report = bench.run_initial_class_sweep(spec, initial, incremental, config,
                                               hidden_dims=tuple(args.hidden))
    else:
        model = training.load_model(_require_model_dir(args.model)) if args.model else None
        setup = bench.prepare_setup(initial, incremental, config, args.seed,
                                    split_spec=_split_spec(args.split, args.seed),
                                    hidden_dims=tuple(args.hidden), model=model)
        if args.sweep == bench.SWEEP_NEW_CLASSES:
            report = bench.run_new_class_sweep(spec, setup)
        else:
            report = bench.run_sample_size_sweep(spec, setup)
    out = args.out or bench.default_report_name(args.sweep)
    report.save(out)
    for method in methods:
        means = report.lookup(method, "mean_accuracy")
        summary = ", ".join(f"{v}: {a:.4f}" for v, a in sorted(means.items()))
        print(f"{method} mean accuracy by {report.columns[1]} -> {summary}")
    print(f"report written to {out}")
    return 0


def _cmd_project(args) -> int:
    dataset = datakit.load_csv(_require_file(args.data, "dataset"))
    if args.space == "feature":
        if not args.model:
            raise ValueError("--space feature requires --model")
        model = training.load_model(_require_model_dir(args.model))
        points = model.features_of(dataset.features)
    else:
        points = dataset.features
    projected, ratios = datakit.pca_project(points, args.dims)
    datakit.save_projection_csv(args.out, dataset.labels, projected, ratios)
    print(f"projected {len(dataset)} points ({args.space} space) to {args.dims}-D; "
          "explained variance " + ", ".join(f"{r:.4f}" for r in ratios))
    print(f"projection written to {args.out}")
    return 0


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "update": _cmd_update,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "project": _cmd_project,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return _HANDLERS[args.command](args)
    except SystemExit as exc:  # argparse --help (0) or usage error (1)
        code = exc.code
        return 0 if code in (None, 0) else int(code)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingDivergedError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
