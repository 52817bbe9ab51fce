"""``daforge`` command line.

Exit codes:

    0  success
    1  unexpected internal error
    2  invalid input, bad config or unwritable output
    3  augmentation impossible (a class to be grown has no samples)
    4  numeric divergence during training
    5  shape mismatch between a model and a dataset
    6  gradient check failed
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import adversarial as da
from .baseline import build_vanilla, train_baseline
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, build_config, dump_config, read_kv
from .data import FormatError, generate_synth, load_wmd, save_wmd, stratified_split, subsample_target
from .errors import NumericError, ShapeError
from .experiment import (accuracy_table, augment_pool, leg_seed, load_data, results_csv,
                         run_grid, timing_csv)
from .metrics import MetricsReport, timed

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT, EXIT_EMPTY_CLASS, EXIT_DIVERGED, EXIT_SHAPE, EXIT_GRADCHECK = range(7)

log = logging.getLogger("daforge")


class CLIError(Exception):
    def __init__(self, message, code=EXIT_INPUT):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# helpers


def _out_dir(args, cfg):
    path = Path(args.out_dir or cfg.out_dir)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".daforge-write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise CLIError(f"output directory {path} is not writable: {exc}") from None
    return path


def _write(path, text):
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise CLIError(f"cannot write {path}: {exc}") from None


def _load(path):
    try:
        return load_wmd(path)
    except FileNotFoundError:
        raise CLIError(f"no such dataset: {path}") from None
    except (FormatError, OSError, ValueError) as exc:
        raise CLIError(f"cannot load {path}: {exc}") from None


def _settings(args, extra):
    """Config file values, then explicit flags (flags win)."""
    settings = read_kv(args.config) if args.config else {}
    if args.seed is not None:
        settings["seed"] = str(args.seed)
    settings.update({k: str(v) for k, v in extra.items() if v is not None})
    return settings


def _config(args, **extra):
    try:
        return build_config(_settings(args, extra))
    except ConfigError as exc:
        raise CLIError(str(exc)) from None


@contextlib.contextmanager
def _thread_limit(deterministic):
    if not deterministic:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=1):
        yield


def _max_workers(requested):
    cap = os.environ.get("DAFORGE_THREADS")
    if cap:
        try:
            cap = int(cap)
        except ValueError:
            raise CLIError(f"DAFORGE_THREADS must be an integer, got {cap!r}") from None
        if cap < 1:
            raise CLIError("DAFORGE_THREADS must be >= 1")
        return max(1, min(requested, cap))
    return max(1, requested)


def _counts_line(ds):
    return ", ".join(f"{n}={c}" for n, c in zip(ds.class_names, ds.class_counts()))


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    extra = {}
    if args.spec:
        try:
            extra = {(k if k.startswith("synth.") else f"synth.{k}"): v
                     for k, v in read_kv(args.spec).items()}
        except ConfigError as exc:
            raise CLIError(str(exc)) from None
    cfg = _config(args, **extra)
    spec = cfg.synth if args.seed is None else replace(cfg.synth, seed=args.seed)
    try:
        source, target = generate_synth(spec)
    except ValueError as exc:
        raise CLIError(f"invalid synthetic spec: {exc}") from None
    out = _out_dir(args, cfg)
    try:
        save_wmd(source, out / "source.wmd")
        save_wmd(target, out / "target.wmd")
    except OSError as exc:
        raise CLIError(f"cannot write datasets: {exc}") from None
    print(f"source {source.shape} {_counts_line(source)} -> {out / 'source.wmd'}")
    print(f"target {target.shape} {_counts_line(target)} -> {out / 'target.wmd'}")
    return EXIT_OK


def cmd_augment(args):
    cfg = _config(args, ae_epochs=args.ae_epochs, noise_std=args.noise_std,
                  augment_total=args.target_total, add_per_class=args.add_per_class)
    if args.skip_class:
        cfg = replace(cfg, skip_classes=tuple(args.skip_class))
    dataset = _load(args.input)
    out_path = Path(args.output) if args.output else _out_dir(args, cfg) / "augmented.wmd"
    seed = leg_seed(cfg.seed, 3)
    for c in cfg.skip_classes:
        if c not in dataset.class_names:
            raise CLIError(f"unknown class {c!r}; known: {', '.join(dataset.class_names)}")
    counts = dataset.class_counts()
    grow = [i for i, name in enumerate(dataset.class_names) if name not in cfg.skip_classes]
    empty = [dataset.class_names[i] for i in grow if counts[i] == 0]
    if empty:
        raise CLIError(f"cannot synthesise class(es) with no samples: {', '.join(empty)}",
                       EXIT_EMPTY_CLASS)
    try:
        augmented = augment_pool(dataset, cfg, seed)
    except ShapeError as exc:
        raise CLIError(f"autoencoder geometry: {exc}") from None
    try:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        save_wmd(augmented, out_path)
    except OSError as exc:
        raise CLIError(f"cannot write {out_path}: {exc}") from None
    print(f"{'class':<12s} {'before':>8s} {'after':>8s}")
    for name, a, b in zip(dataset.class_names, counts, augmented.class_counts()):
        print(f"{name:<12s} {a:8d} {b:8d}")
    print(f"wrote {out_path}")
    return EXIT_OK


def _prepare_training_data(cfg, args):
    if args.source or args.target:
        if not args.target or (args.method == "da" and not args.source):
            raise CLIError("give --target (and --source for method da), or neither for synthetic data")
        source = _load(args.source) if args.source else None
        target = _load(args.target)
        target_train, target_test = target, None
        if args.split:
            target_train, target_test = stratified_split(target, cfg.train_fraction,
                                                         leg_seed(cfg.seed, 2))
    else:
        source, target = load_data(cfg)
        source, _ = stratified_split(source, cfg.train_fraction, leg_seed(cfg.seed, 1))
        target_train, target_test = stratified_split(target, cfg.train_fraction,
                                                     leg_seed(cfg.seed, 2))
    if args.augment:
        target_train = augment_pool(target_train, cfg, leg_seed(cfg.seed, 3))
    if args.n is not None:
        if args.n > len(target_train):
            raise CLIError(f"--n {args.n} exceeds the {len(target_train)} target training samples")
        target_train = subsample_target(target_train, args.n, leg_seed(cfg.seed, 10, args.n))
    return source, target_train, target_test


def cmd_train(args):
    cfg = _config(args, iterations=args.iterations, epochs=args.epochs, lr=args.lr,
                  lam=args.lam, beta=args.beta, gamma=args.gamma, optimizer=args.optimizer,
                  batch_size=args.batch_size)
    out = _out_dir(args, cfg)
    source, target_train, target_test = _prepare_training_data(cfg, args)
    init_seed, batch_seed = leg_seed(cfg.seed, 20), leg_seed(cfg.seed, 30)
    seeds = {"master": cfg.seed, "init": init_seed, "batch": batch_seed}
    rows = []
    if args.method == "da":
        arch = cfg.arch_config()
        model = da.build_da_networks(source.input_shape, target_train.input_shape,
                                     target_train.n_classes, arch, seed=init_seed)
        result, seconds = timed(da.train, model, source, target_train, cfg.hyper, batch_seed)
        header = ["iteration", "l_c", "l_d", "l_g"]
        rows = [[i, f"{a:.8g}", f"{b:.8g}", f"{c:.8g}"] for i, (a, b, c) in enumerate(result.curves)]
        hyper = vars(cfg.hyper)
    else:
        model = build_vanilla(target_train.input_shape, target_train.n_classes,
                              cfg.vanilla_filters, hidden=cfg.vanilla_hidden, seed=init_seed)
        (_, history), seconds = timed(train_baseline, model, target_train, cfg.epochs,
                                      cfg.vanilla_batch, cfg.vanilla_lr, batch_seed)
        header = ["epoch", "loss"]
        rows = [[i, f"{v:.8g}"] for i, v in enumerate(history)]
        hyper = {"epochs": cfg.epochs, "batch_size": cfg.vanilla_batch, "lr": cfg.vanilla_lr}
    save_checkpoint(out / "model.ckpt", model, hyper, seeds)
    with open(out / "curves.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    if target_test is not None:
        save_wmd(target_test, out / "target_test.wmd")
    print(f"trained {args.method} on {len(target_train)} target samples in {seconds:.1f}s")
    print(f"wrote {out / 'model.ckpt'} and {out / 'curves.csv'}")
    return EXIT_OK


def cmd_eval(args):
    try:
        ck = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise CLIError(f"no such checkpoint: {args.checkpoint}") from None
    except CheckpointError as exc:
        raise CLIError(str(exc)) from None
    test = _load(args.test)
    if test.input_shape != ck.target_shape:
        raise CLIError(f"dataset shape {test.input_shape} does not match model input "
                       f"{ck.target_shape}", EXIT_SHAPE)
    n_out = ck.model.n_classes
    if test.n_classes != n_out:
        raise CLIError(f"dataset has {test.n_classes} classes, model predicts {n_out}", EXIT_SHAPE)
    probs, seconds = timed(ck.predict, test.x)
    report = MetricsReport.from_predictions(test.labels, probs.argmax(axis=1), n_out,
                                            test_seconds=seconds)
    header, row = report.csv_header(), report.csv_row()
    print(",".join(header))
    print(",".join(row))
    if args.csv:
        path = Path(args.csv)
        new = not path.exists() or path.stat().st_size == 0
        try:
            with open(path, "a", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                if new:
                    w.writerow(header)
                w.writerow(row)
        except OSError as exc:
            raise CLIError(f"cannot write {path}: {exc}") from None
    return EXIT_OK


def cmd_grid(args):
    extra = {"repeats": args.repeats, "iterations": args.iterations, "epochs": args.epochs}
    if args.sizes:
        extra["sizes"] = args.sizes
    if args.methods:
        extra["methods"] = args.methods
    cfg = _config(args, **extra)
    out = _out_dir(args, cfg)
    _write(out / "config.txt", dump_config(cfg))
    workers = _max_workers(args.workers)
    start = time.perf_counter()
    results = run_grid(cfg, workers=workers)
    _write(out / "results.csv", results_csv(results, include_timing=not args.deterministic))
    _write(out / "timings.csv", timing_csv(results))
    table = accuracy_table(results)
    _write(out / "table.txt", table + "\n")
    print(table)
    failed = [r for r in results if r.error]
    print(f"{len(results) - len(failed)}/{len(results)} legs succeeded in "
          f"{time.perf_counter() - start:.1f}s; results in {out / 'results.csv'}")
    for r in failed:
        print(f"  failed: {r.method} aug={int(r.augmented)} n={r.n} seed={r.repeat}: {r.error}",
              file=sys.stderr)
    if not failed:
        return EXIT_OK
    return EXIT_DIVERGED if all(r.error.startswith("NumericError") for r in failed) else EXIT_INTERNAL


def cmd_check_grad(args):
    from .nn import (Conv2D, ConvTranspose2D, Dense, MaxPool2D, Network, ReLU, Reshape, Sigmoid,
                     Softmax, Upsample2D, check_gradients)

    seed = 0 if args.seed is None else args.seed
    rng = np.random.default_rng(seed)
    cases = [
        ("Conv2D", [Conv2D(3, 3)], (5, 6, 2)),
        ("ConvTranspose2D", [ConvTranspose2D(3, 3)], (4, 5, 2)),
        ("MaxPool2D", [MaxPool2D(2)], (5, 7, 2)),
        ("Upsample2D", [Upsample2D(2)], (3, 3, 2)),
        ("Dense", [Dense(4)], (6,)),
        ("ReLU", [ReLU()], (6,)),
        ("Sigmoid", [Sigmoid()], (5,)),
        ("Softmax", [Softmax()], (5,)),
        ("Reshape", [Reshape((3, 4)), Reshape((-1,))], (12,)),
    ]
    failed = 0
    for name, layers, shape in cases:
        net = Network(layers, shape, name=name, rng=seed)
        w = rng.normal(size=(3,) + net.output_shape)
        report = check_gradients(net, lambda out, w=w: (float(np.sum(out * w)), w),
                                 rng.normal(size=(3,) + shape), tol=args.tol)
        failed += not report.passed
        print(f"{'ok' if report.passed else 'FAIL':4s} layer {name:<16s} "
              f"max rel. error {report.max_rel_error:.2e}")
        if args.verbose or not report.passed:
            print(report)
    model = da.tiny_check_model(seed)
    report = da.check_loss_gradients(model, da.tiny_check_batch(seed), lam=0.1, tol=args.tol)
    failed += not report.passed
    print(f"{'ok' if report.passed else 'FAIL':4s} DA losses x networks  "
          f"max rel. error {report.max_rel_error:.2e}")
    if args.verbose or not report.passed:
        print(report)
    return EXIT_OK if not failed else EXIT_GRADCHECK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    p = argparse.ArgumentParser(prog="daforge", description="Heterogeneous adversarial domain "
                                "adaptation experiments on wafer maps.",
                                epilog="exit codes: 0 ok, 2 invalid input, 3 empty class, "
                                       "4 divergence, 5 shape mismatch, 6 gradient check failed")
    p.add_argument("--seed", type=int, help="master seed (default from config, else 0)")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded BLAS; timing kept out of results.csv")
    p.add_argument("--out-dir", help="output directory (default: config out_dir)")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write synthetic source.wmd and target.wmd")
    s.add_argument("spec", nargs="?", help="key = value file of SynthSpec fields")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("augment", help="balance a WMD dataset with autoencoder samples")
    s.add_argument("input")
    s.add_argument("output", nargs="?", help="default: OUT_DIR/augmented.wmd")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--target-total", help="'max' or a per-class total")
    g.add_argument("--add-per-class", type=int, help="add N synthetic samples to every class")
    s.add_argument("--skip-class", action="append", help="class name to leave untouched")
    s.add_argument("--noise-std", type=float)
    s.add_argument("--ae-epochs", type=int)
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("train", help="train one model, write model.ckpt and curves.csv")
    s.add_argument("--method", choices=("da", "vanilla"), default="da")
    s.add_argument("--source", help="source WMD (default: synthetic data)")
    s.add_argument("--target", help="target WMD (default: synthetic data)")
    s.add_argument("--split", action="store_true",
                   help="hold out a stratified test split of --target")
    s.add_argument("--augment", action="store_true", help="balance the target training set first")
    s.add_argument("--n", type=int, help="subsample this many target training samples")
    for flag, typ in (("--iterations", int), ("--epochs", int), ("--lr", float), ("--lam", float),
                      ("--beta", float), ("--gamma", float), ("--batch-size", int)):
        s.add_argument(flag, type=typ)
    s.add_argument("--optimizer", choices=("adam", "sgd"))
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="score a checkpoint on a target test set")
    s.add_argument("checkpoint")
    s.add_argument("test")
    s.add_argument("--csv", help="append the metrics row to this file")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("grid", help="run the method x augmented x n x repeat grid")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--repeats", type=int)
    s.add_argument("--sizes", help="comma-separated target subsample sizes")
    s.add_argument("--methods", help="comma-separated subset of da,vanilla")
    s.add_argument("--iterations", type=int)
    s.add_argument("--epochs", type=int)
    s.set_defaults(func=cmd_grid)

    s = sub.add_parser("check-grad", help="finite-difference check of every layer and DA loss")
    s.add_argument("--tol", type=float, default=1e-6)
    s.set_defaults(func=cmd_check_grad)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit(args.deterministic):
            return args.func(args)
    except CLIError as exc:
        print(f"daforge: error: {exc}", file=sys.stderr)
        return exc.code
    except NumericError as exc:
        where = "" if exc.iteration is None else f" at iteration {exc.iteration}"
        print(f"daforge: error: training diverged{where}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ShapeError as exc:
        print(f"daforge: error: shape mismatch: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except ConfigError as exc:
        print(f"daforge: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
