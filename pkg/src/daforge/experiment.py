"""Experiment legs and the (method x augmented x n x repeat) grid."""
from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import adversarial as da
from .augment import AugmentPlan, balance_dataset, build_autoencoder, train_autoencoder
from .baseline import build_vanilla, train_baseline
from .data import SynthSpec, generate_synth, load_wmd, stratified_split, subsample_target
from .metrics import CSV_COLUMNS, MetricsReport, aggregate_runs, timed

log = logging.getLogger(__name__)

METHODS = ("da", "vanilla")


@dataclass
class ExperimentConfig:
    source: str | None = None          # WMD paths; both None -> synthetic data
    target: str | None = None
    synth: SynthSpec = field(default_factory=SynthSpec)
    methods: tuple = METHODS
    augmented: tuple = (True, False)
    sizes: tuple = (25, 50, 75, 100, 200, 500, 1000)
    repeats: int = 5
    train_fraction: float = 0.6
    seed: int = 0
    # adversarial DA
    hyper: da.HyperParams = field(default_factory=da.HyperParams)
    arch: str = "desk"                 # "desk" or "paper"
    # vanilla baseline
    epochs: int = 60
    vanilla_lr: float = 2e-4
    vanilla_batch: int = 32
    vanilla_filters: tuple = (16, 64, 128)
    vanilla_hidden: tuple = (512, 128)
    # augmentation
    ae_epochs: int = 20
    ae_lr: float = 1e-3
    ae_channels: int | None = None
    noise_std: float = 1.0
    augment_total: str = "max"         # "max" or an integer per-class total
    add_per_class: int | None = None   # +n per class, overrides augment_total
    skip_classes: tuple = ()
    out_dir: str = "out"

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if list(self.sizes) != sorted(self.sizes):
            raise ValueError("subsample sizes must be sorted ascending")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")

    def arch_config(self):
        return da.PAPER_ARCH if self.arch == "paper" else da.DESK_ARCH


@dataclass
class Pools:
    source_train: object
    source_test: object
    target_train: object
    target_test: object
    target_augmented: object | None = None

    def target_pool(self, augmented):
        return self.target_augmented if augmented else self.target_train


def leg_seed(master, *keys):
    """Independent sub-seed for a grid cell; stable across processes and runs."""
    return int(np.random.SeedSequence([int(master)] + [int(k) for k in keys]).generate_state(1)[0])


def load_data(cfg):
    if cfg.source and cfg.target:
        return load_wmd(cfg.source), load_wmd(cfg.target)
    return generate_synth(cfg.synth)


def augment_pool(target_train, cfg, seed):
    ae = build_autoencoder(target_train.input_shape, channels=cfg.ae_channels, seed=seed)
    ae, _ = train_autoencoder(ae, target_train, epochs=cfg.ae_epochs, lr=cfg.ae_lr, seed=seed)
    if cfg.add_per_class is not None:
        plan = AugmentPlan.add_per_class(target_train, cfg.add_per_class, skip=cfg.skip_classes,
                                         noise_std=cfg.noise_std, seed=seed)
    else:
        plan = AugmentPlan.to_total(target_train, cfg.augment_total, skip=cfg.skip_classes,
                                    noise_std=cfg.noise_std, seed=seed)
    return balance_dataset(target_train, plan, ae)


def prepare_pools(cfg, source=None, target=None):
    """Split both domains and, if any leg needs it, augment the target training set once."""
    if source is None or target is None:
        source, target = load_data(cfg)
    s_train, s_test = stratified_split(source, cfg.train_fraction, leg_seed(cfg.seed, 1))
    t_train, t_test = stratified_split(target, cfg.train_fraction, leg_seed(cfg.seed, 2))
    pools = Pools(s_train, s_test, t_train, t_test)
    if True in cfg.augmented:
        pools.target_augmented = augment_pool(t_train, cfg, leg_seed(cfg.seed, 3))
    return pools


@dataclass
class LegResult:
    method: str
    augmented: bool
    n: int
    repeat: int
    report: MetricsReport | None = None
    domain_accuracy: float | None = None
    error: str | None = None


def _held_out_domain_accuracy(model, pools, seed):
    xs, xt = pools.source_test, pools.target_test
    k = min(len(xs), len(xt))
    rng = np.random.default_rng(seed)
    xs = xs.subset(rng.permutation(len(xs))[:k]).x
    xt = xt.subset(rng.permutation(len(xt))[:k]).x
    return da.domain_accuracy(model, xs, xt)


def run_leg(cfg, pools, method, augmented, n, repeat):
    """Subsample the target pool, train one model and score it on the target test set."""
    pool = pools.target_pool(augmented)
    sub = subsample_target(pool, n, leg_seed(cfg.seed, 10, int(augmented), n, repeat))
    init_seed = leg_seed(cfg.seed, 20, int(augmented), n, repeat)
    batch_seed = leg_seed(cfg.seed, 30, int(augmented), n, repeat)
    test = pools.target_test
    result = LegResult(method, augmented, n, repeat)
    if method == "da":
        model = da.build_da_networks(pools.source_train.input_shape, sub.input_shape,
                                     sub.n_classes, cfg.arch_config(), seed=init_seed)
        _, train_s = timed(da.train, model, pools.source_train, sub, cfg.hyper, batch_seed)
        probs, test_s = timed(da.predict, model, test.x, da.TARGET)
        result.domain_accuracy = _held_out_domain_accuracy(model, pools, batch_seed)
    else:
        model = build_vanilla(sub.input_shape, sub.n_classes, cfg.vanilla_filters,
                              hidden=cfg.vanilla_hidden, seed=init_seed)
        _, train_s = timed(train_baseline, model, sub, cfg.epochs, cfg.vanilla_batch,
                           cfg.vanilla_lr, batch_seed)
        probs, test_s = timed(model.predict, test.x)
    result.report = MetricsReport.from_predictions(test.labels, probs.argmax(axis=1),
                                                   test.n_classes, train_seconds=train_s,
                                                   test_seconds=test_s)
    return result


def grid_cells(cfg):
    return [(m, a, n, r) for m in cfg.methods for a in cfg.augmented
            for n in cfg.sizes for r in range(cfg.repeats)]


def _safe_leg(args):
    cfg, pools, cell = args
    try:
        return run_leg(cfg, pools, *cell)
    except Exception as exc:  # record-and-continue
        log.warning("leg %s failed: %s", cell, exc)
        return LegResult(*cell, error=f"{type(exc).__name__}: {exc}")


def run_grid(cfg, workers=1, pools=None):
    """Run every grid cell; failures are recorded in the result instead of raised."""
    if pools is None:
        pools = prepare_pools(cfg)
    jobs = [(cfg, pools, cell) for cell in grid_cells(cfg)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_safe_leg, jobs))
    return [_safe_leg(j) for j in jobs]


def results_csv(results, include_timing=True):
    """One row per leg, then one ``seed=agg`` row per (method, augmented, n) with
    ``mean±half_width`` cells."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(CSV_COLUMNS) + ["domain_accuracy", "error"])
    groups = {}
    for r in results:
        if r.report is None:
            w.writerow([r.method, int(r.augmented), r.n, r.repeat, "", "", "", "", "", r.error])
            continue
        groups.setdefault((r.method, r.augmented, r.n), []).append(r.report)
        rep = r.report
        train_s = f"{rep.train_seconds:.2f}" if include_timing else ""
        test_s = f"{rep.test_seconds:.2f}" if include_timing else ""
        dom = "" if r.domain_accuracy is None else f"{r.domain_accuracy:.6f}"
        w.writerow([r.method, int(r.augmented), r.n, r.repeat, f"{rep.balanced_accuracy:.6f}",
                    f"{rep.precision:.6f}", train_s, test_s, dom, ""])
    for (method, aug, n), reps in groups.items():
        if len(reps) < 2:
            continue
        agg = aggregate_runs(reps)
        ba, pr = agg["balanced_accuracy"], agg["precision"]
        if include_timing:
            train_s = f"{np.mean([r.train_seconds for r in reps]):.2f}"
            test_s = f"{np.mean([r.test_seconds for r in reps]):.2f}"
        else:
            train_s = test_s = ""
        w.writerow([method, int(aug), n, "agg", f"{ba.mean:.6f}±{ba.half_width:.6f}",
                    f"{pr.mean:.6f}±{pr.half_width:.6f}", train_s, test_s, "", ""])
    return buf.getvalue()


def timing_csv(results):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "augmented", "n", "seed", "train_seconds", "test_seconds"])
    for r in results:
        if r.report is not None:
            w.writerow([r.method, int(r.augmented), r.n, r.repeat,
                        f"{r.report.train_seconds:.2f}", f"{r.report.test_seconds:.2f}"])
    return buf.getvalue()


def accuracy_table(results):
    """Pivot the aggregated balanced accuracy into a method x size text table."""
    sizes = sorted({r.n for r in results})
    rows = {}
    for r in results:
        if r.report is not None:
            rows.setdefault((r.method, r.augmented), {}).setdefault(r.n, []).append(r.report)
    label = {("da", True): "Adversarial DA + augmented", ("da", False): "Adversarial DA + imbalanced",
             ("vanilla", True): "Vanilla + augmented", ("vanilla", False): "Vanilla + imbalanced"}
    lines = [f"{'method':<30s}" + "".join(f"{n:>18d}" for n in sizes)]
    for key in label:
        if key not in rows:
            continue
        cells = []
        for n in sizes:
            reps = rows[key].get(n, [])
            if len(reps) >= 2:
                cells.append(str(aggregate_runs(reps)["balanced_accuracy"]))
            elif reps:
                cells.append(f"{100 * reps[0].balanced_accuracy:.1f}%")
            else:
                cells.append("-")
        lines.append(f"{label[key]:<30s}" + "".join(f"{c:>18s}" for c in cells))
    return "\n".join(lines)


def config_replace(cfg, **changes):
    names = {f.name for f in fields(cfg)}
    return replace(cfg, **{k: v for k, v in changes.items() if k in names})


# Hyperparameters for 2000-iteration runs on the synthetic 16x16 -> 12x12 task.
DESK_HYPER = da.HyperParams(lam=10.0, beta=0.1, gamma=1.0, lr=1e-3, batch_size=32,
                            iterations=2000, adam_beta1=0.5)
DESK_SYNTH = SynthSpec(target_counts=(500, 50, 50, 50), target_noise=0.2)


def desk_config(**changes):
    """Synthetic data, small networks and the single n=100 column."""
    cfg = ExperimentConfig(synth=DESK_SYNTH, sizes=(100,), hyper=DESK_HYPER, arch="desk",
                           noise_std=0.6)
    return config_replace(cfg, **changes)


def paper_config(**changes):
    """Full-scale settings: 20000 iterations, lambda 0.1, lr 2e-4, seven sizes, +2000 per class."""
    cfg = ExperimentConfig(hyper=da.HyperParams(), arch="paper", add_per_class=2000,
                           skip_classes=("none",))
    return config_replace(cfg, **changes)
