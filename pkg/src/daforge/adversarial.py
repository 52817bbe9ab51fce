"""Heterogeneous adversarial domain adaptation.

Five networks cooperate: private generators ``G_S`` (source) and ``G_T``
(target) map each domain's images to vectors of one common length, the shared
generator ``G`` turns those into a domain-independent representation (DI), the
discriminator ``D`` guesses the domain of a DI, and the classifier ``C``
predicts its class.

One training iteration has two phases.  Phase 1 updates ``G_S``, ``G_T``, ``G``
on ``beta * L_g + gamma * L_c`` and ``C`` on ``L_c`` while ``D`` is frozen.
Phase 2 recomputes the DI with the updated generators and updates ``D`` on
``L_d``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .data import SOURCE, TARGET, Batch, make_batches
from .errors import NumericError, ShapeError
from .nn import (AdamState, Conv2D, Dense, GradCheckReport, MaxPool2D, Network, ReLU, Reshape,
                 Softmax, adam_step, binary_cross_entropy, cross_entropy, numerical_gradient,
                 one_hot, sgd_step)

NET_NAMES = ("G_S", "G_T", "G", "D", "C")


@dataclass
class HyperParams:
    lam: float = 0.1          # weight of the target classification term
    beta: float = 1.0         # weight of the generator (adversarial) loss
    gamma: float = 1.0        # weight of the classification loss for the generators
    lr: float = 2e-4
    batch_size: int = 32
    iterations: int = 20000
    optimizer: str = "adam"   # "adam" or "sgd" (literal gradient-descent deltas)
    adam_beta1: float = 0.9

    def __post_init__(self):
        if self.lam < 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("lam, beta and gamma must be non-negative")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValueError("batch_size must be even")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if not 0.0 <= self.adam_beta1 < 1.0:
            raise ValueError("adam_beta1 must lie in [0, 1)")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class ArchConfig:
    """Layer sizes for the five networks.

    Each conv entry is ``(filters, kernel)`` and is followed by ReLU and, when
    ``pool`` is set, a 2x2 max-pool.  ``shared_reshape`` / ``disc_reshape``
    turn the incoming vector into an image before the shared / discriminator
    conv stack; ``None`` means no reshape and no convs.
    """

    private_convs: list = field(default_factory=lambda: [(8, 5), (16, 5)])
    private_units: int = 2028
    shared_reshape: Optional[tuple] = (26, 26, 3)
    shared_convs: list = field(default_factory=lambda: [(8, 5), (16, 5)])
    di_units: int = 1024
    disc_reshape: Optional[tuple] = (32, 32, 1)
    disc_convs: list = field(default_factory=lambda: [(8, 5), (16, 5)])
    disc_hidden: list = field(default_factory=lambda: [1024])
    cls_hidden: list = field(default_factory=lambda: [1024, 512])
    pool: bool = True

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("shared_reshape", "disc_reshape"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        for key in ("private_convs", "shared_convs", "disc_convs"):
            if key in d:
                d[key] = [tuple(e) for e in d[key]]
        return cls(**d)


PAPER_ARCH = ArchConfig()

# Small enough for thousands of iterations per minute on 16x16 / 12x12 maps.
DESK_ARCH = ArchConfig(
    private_convs=[(8, 3), (16, 3)],
    private_units=192,
    shared_reshape=(8, 8, 3),
    shared_convs=[(16, 3)],
    di_units=64,
    disc_reshape=None,
    disc_convs=[],
    disc_hidden=[64],
    cls_hidden=[64],
    pool=False,
)


def _conv_stack(convs, pool):
    layers = []
    for filters, kernel in convs:
        layers += [Conv2D(filters, kernel), ReLU()]
        if pool:
            layers.append(MaxPool2D(2))
    return layers


def _flatten_if_needed(layers, input_shape, reshape):
    if reshape is not None:
        return [Reshape(reshape)] + layers + ([Reshape((-1,))] if layers else [])
    if len(input_shape) > 1:
        return layers + [Reshape((-1,))]
    return layers


def _build(name, input_shape, layers, rng):
    try:
        return Network(layers, input_shape, name=name, rng=rng)
    except ShapeError as exc:
        raise ShapeError(f"geometry underflow in {exc}") from None


@dataclass
class DAModel:
    gs: Network
    gt: Network
    g: Network
    d: Network
    c: Network
    arch: ArchConfig
    n_classes: int

    @property
    def networks(self):
        return dict(zip(NET_NAMES, (self.gs, self.gt, self.g, self.d, self.c)))

    @property
    def source_shape(self):
        return self.gs.input_shape

    @property
    def target_shape(self):
        return self.gt.input_shape

    def build_args(self):
        return {"source_shape": list(self.source_shape), "target_shape": list(self.target_shape),
                "n_classes": self.n_classes, "arch": self.arch.to_dict()}

    def snapshot(self):
        return {k: net.get_weights() for k, net in self.networks.items()}

    def restore(self, snap):
        for k, net in self.networks.items():
            net.set_weights(snap[k])


def build_da_networks(source_shape, target_shape, n_classes, arch=DESK_ARCH, seed=0):
    """Instantiate ``G_S``, ``G_T``, ``G``, ``D`` and ``C`` for ``arch``."""
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(5)]

    def private():
        return (_conv_stack(arch.private_convs, arch.pool)
                + [Reshape((-1,)), Dense(arch.private_units), ReLU()])

    gs = _build("G_S", source_shape, private(), rngs[0])
    gt = _build("G_T", target_shape, private(), rngs[1])
    if gs.output_shape != gt.output_shape:
        raise ShapeError("private generators disagree on output length")
    g_layers = _flatten_if_needed(_conv_stack(arch.shared_convs, arch.pool),
                                  gs.output_shape, arch.shared_reshape)
    g = _build("G", gs.output_shape, g_layers + [Dense(arch.di_units), ReLU()], rngs[2])
    d_layers = _flatten_if_needed(_conv_stack(arch.disc_convs, arch.pool),
                                  g.output_shape, arch.disc_reshape)
    for units in arch.disc_hidden:
        d_layers += [Dense(units), ReLU()]
    d = _build("D", g.output_shape, d_layers + [Dense(2), Softmax()], rngs[3])
    c_layers = []
    for units in arch.cls_hidden:
        c_layers += [Dense(units), ReLU()]
    c = _build("C", g.output_shape, c_layers + [Dense(n_classes), Softmax()], rngs[4])
    return DAModel(gs, gt, g, d, c, arch, int(n_classes))


def build_paper_networks(source_shape=(52, 52, 3), target_shape=(26, 26, 3), n_classes=9, seed=0):
    """The full-size configuration: 2028-long private outputs reshaped to 26x26x3
    inside ``G``, a 1024-long DI, a conv discriminator and a 1024-512 classifier."""
    return build_da_networks(source_shape, target_shape, n_classes, PAPER_ARCH, seed)


# ---------------------------------------------------------------------------
# losses


def _labels_onehot(y, n_classes):
    y = np.asarray(y)
    return one_hot(y, n_classes) if y.ndim == 1 else y.astype(float)


def _ce_term(yhat, y):
    yhat = np.asarray(yhat, dtype=float)
    if yhat.size == 0:
        return 0.0, yhat
    yhat = yhat.reshape(len(yhat), -1)
    return cross_entropy(yhat, _labels_onehot(y, yhat.shape[1]))


def _classification(yhat_s, y_s, yhat_t, y_t, lam):
    vs, gs = _ce_term(yhat_s, y_s)
    vt, gt = _ce_term(yhat_t, y_t)
    return vs + lam * vt, gs, lam * gt


def classification_loss(yhat_s, y_s, yhat_t, y_t, lam):
    """``-sum y_s . log yhat_s - lam * sum y_t . log yhat_t``.

    Labels may be integer class ids or one-hot rows; either domain may be empty.
    """
    return _classification(yhat_s, y_s, yhat_t, y_t, lam)[0]


def discriminator_loss(dhat, d):
    """``-sum d log dhat + (1 - d) log(1 - dhat)``; ``dhat`` is P(target)."""
    return binary_cross_entropy(dhat, d)[0]


def generator_loss(dhat, d):
    """The discriminator loss with the domain labels inverted."""
    return binary_cross_entropy(dhat, 1.0 - np.asarray(d, dtype=float))[0]


# ---------------------------------------------------------------------------
# forward / backward plumbing


@dataclass
class LossRecord:
    l_c: float
    l_d: float
    l_g: float

    def as_tuple(self):
        return (self.l_c, self.l_d, self.l_g)


def _forward_di(model, xs, xt):
    fs = model.gs.forward(xs)
    ft = model.gt.forward(xt)
    return model.g.forward(np.concatenate([fs, ft])), len(fs)


def _dhat_grad_to_probs(gd):
    # D ends in a 2-way softmax; dhat is the target-class probability
    out = np.zeros((len(gd), 2))
    out[:, 1] = gd
    return out


def _backprop_generators(model, d_di, n_source):
    g_grads, d_feat = model.g.backward(d_di)
    gs_grads, _ = model.gs.backward(d_feat[:n_source])
    gt_grads, _ = model.gt.backward(d_feat[n_source:])
    return {"G_S": gs_grads, "G_T": gt_grads, "G": g_grads}


def compute_losses(model, batch, lam):
    di, ns = _forward_di(model, batch.xs, batch.xt)
    dhat = model.d.forward(di)[:, 1]
    yhat = model.c.forward(di)
    l_c = classification_loss(yhat[:ns], batch.ys, yhat[ns:], batch.yt, lam)
    d = batch.d
    return LossRecord(l_c, discriminator_loss(dhat, d), generator_loss(dhat, d))


def loss_gradients(model, batch, lam):
    """Analytic gradients of each loss w.r.t. every network it depends on.

    Returns ``{"c": {...}, "d": {...}, "g": {...}}`` keyed by network name.
    ``L_c`` does not involve ``D``; ``L_d`` / ``L_g`` do not involve ``C``.
    """
    di, ns = _forward_di(model, batch.xs, batch.xt)
    dprob = model.d.forward(di)
    yhat = model.c.forward(di)
    d = batch.d
    out = {}
    _, g_ys, g_yt = _classification(yhat[:ns], batch.ys, yhat[ns:], batch.yt, lam)
    c_grads, d_di = model.c.backward(np.concatenate([g_ys, g_yt]))
    out["c"] = {"C": c_grads, **_backprop_generators(model, d_di, ns)}
    for key, labels in (("d", d), ("g", 1.0 - d)):
        _, gd = binary_cross_entropy(dprob[:, 1], labels)
        d_grads, d_di = model.d.backward(_dhat_grad_to_probs(gd))
        out[key] = {"D": d_grads, **_backprop_generators(model, d_di, ns)}
    return out


LOSS_NETWORKS = {"c": ("G_S", "G_T", "G", "C"), "d": ("G_S", "G_T", "G", "D"),
                 "g": ("G_S", "G_T", "G", "D")}


# 4-unit layers on 5x5 / 4x4 inputs: small enough for exhaustive finite differences
TINY_ARCH = ArchConfig(private_convs=[(2, 3)], private_units=4, shared_reshape=None,
                       shared_convs=[], di_units=4, disc_reshape=None, disc_convs=[],
                       disc_hidden=[4], cls_hidden=[4], pool=False)


def tiny_check_model(seed=0, n_classes=3):
    """A :data:`TINY_ARCH` model whose biases are jittered off zero.

    Zero biases put units whose inputs are all dead exactly on the ReLU kink,
    where one-sided and central differences disagree.
    """
    model = build_da_networks((5, 5, 3), (4, 4, 3), n_classes, TINY_ARCH, seed=seed)
    rng = np.random.default_rng([seed, 1])
    for net in model.networks.values():
        for name, p in zip(net.param_names, net.params):
            if name.endswith("bias"):
                p += rng.normal(0.0, 0.1, size=p.shape)
    return model


def tiny_check_batch(seed=0, per_domain=1, n_classes=3):
    rng = np.random.default_rng([seed, 2])
    return Batch(rng.random((per_domain, 5, 5, 3)), rng.integers(0, n_classes, per_domain),
                 rng.random((per_domain, 4, 4, 3)), rng.integers(0, n_classes, per_domain))


def check_loss_gradients(model, batch, lam, tol=1e-6, step=1e-5):
    """Finite-difference check of :func:`loss_gradients` for every (loss, network) pair."""
    analytic = loss_gradients(model, batch, lam)
    report = GradCheckReport(tol=tol)
    for key, names in LOSS_NETWORKS.items():
        index = "cdg".index(key)

        def value():
            return compute_losses(model, batch, lam).as_tuple()[index]

        for name in names:
            net = model.networks[name]
            for pname, p, g in zip(net.param_names, net.params, analytic[key][name]):
                report.add(f"L_{key}/{pname}", g, numerical_gradient(value, p, step))
    return report


# ---------------------------------------------------------------------------
# optimisation


class DAOptimizer:
    """Per-network optimiser state (Adam by default, or literal SGD deltas)."""

    def __init__(self, model, hyper):
        self.hyper = hyper
        self.states = {k: AdamState.for_params(net.params, beta1=hyper.adam_beta1)
                       for k, net in model.networks.items()}

    def step(self, name, net, grads):
        if self.hyper.optimizer == "sgd":
            sgd_step(net.params, grads, self.hyper.lr, net.param_names)
        else:
            adam_step(net.params, grads, self.states[name], self.hyper.lr, net.param_names)


def phase_generators(model, batch, opt):
    """Phase 1: update the generators and the classifier; ``D`` is read but never written."""
    h = opt.hyper
    di, ns = _forward_di(model, batch.xs, batch.xt)
    dprob = model.d.forward(di)
    yhat = model.c.forward(di)
    l_c, g_ys, g_yt = _classification(yhat[:ns], batch.ys, yhat[ns:], batch.yt, h.lam)
    l_g, gd = binary_cross_entropy(dprob[:, 1], 1.0 - batch.d)
    c_grads, dc_di = model.c.backward(np.concatenate([g_ys, g_yt]))
    _, dg_di = model.d.backward(_dhat_grad_to_probs(gd))
    gen_grads = _backprop_generators(model, h.gamma * dc_di + h.beta * dg_di, ns)
    if not (np.isfinite(l_c) and np.isfinite(l_g)):
        raise NumericError(f"non-finite loss (L_c={l_c}, L_g={l_g})")
    for name in ("G_S", "G_T", "G"):
        opt.step(name, model.networks[name], gen_grads[name])
    opt.step("C", model.c, c_grads)
    return l_c, l_g


def phase_discriminator(model, batch, opt):
    """Phase 2: recompute the DI with the updated generators and update ``D`` only."""
    di, _ = _forward_di(model, batch.xs, batch.xt)
    dprob = model.d.forward(di)
    l_d, gd = binary_cross_entropy(dprob[:, 1], batch.d)
    if not np.isfinite(l_d):
        raise NumericError(f"non-finite discriminator loss {l_d}")
    d_grads, _ = model.d.backward(_dhat_grad_to_probs(gd))
    opt.step("D", model.d, d_grads)
    return l_d


def train_step(model, batch, opt):
    l_c, l_g = phase_generators(model, batch, opt)
    l_d = phase_discriminator(model, batch, opt)
    return LossRecord(l_c, l_d, l_g)


@dataclass
class TrainResult:
    model: DAModel
    curves: np.ndarray          # (iterations, 3): L_c, L_d, L_g

    @property
    def l_c(self):
        return self.curves[:, 0]

    @property
    def l_d(self):
        return self.curves[:, 1]

    @property
    def l_g(self):
        return self.curves[:, 2]


def train(model, source, target, hyper, seed=0, callback=None):
    """Run ``hyper.iterations`` two-phase steps on balanced two-domain batches.

    ``callback(iteration, record)`` is invoked after every step if given.
    """
    if len(source) == 0 or len(target) == 0:
        raise ValueError("source and target training sets must be non-empty")
    if source.input_shape != model.source_shape or target.input_shape != model.target_shape:
        raise ShapeError(f"data shapes {source.input_shape}/{target.input_shape} do not match "
                         f"model {model.source_shape}/{model.target_shape}")
    opt = DAOptimizer(model, hyper)
    curves = np.zeros((hyper.iterations, 3))
    batches = make_batches(source, target, hyper.batch_size, seed)
    for it in range(hyper.iterations):
        batch = next(batches)
        try:
            rec = train_step(model, batch, opt)
        except NumericError as exc:
            raise NumericError(f"iteration {it}: {exc}", iteration=it) from None
        curves[it] = rec.as_tuple()
        if callback is not None:
            callback(it, rec)
    return TrainResult(model, curves)


# ---------------------------------------------------------------------------
# inference


def predict(model, x, domain, chunk=512):
    """Class probabilities for images ``x`` from ``domain`` (0 = source, 1 = target)."""
    x = np.asarray(x, dtype=float)
    if domain in (SOURCE, "source"):
        private = model.gs
    elif domain in (TARGET, "target"):
        private = model.gt
    else:
        raise ValueError(f"unknown domain {domain!r}")
    if x.shape[1:] != private.input_shape:
        raise ShapeError(f"input shape {x.shape[1:]} does not match {private.name} "
                         f"input {private.input_shape}")
    out = [model.c.forward(model.g.forward(private.forward(x[i:i + chunk])))
           for i in range(0, len(x), chunk)]
    return np.concatenate(out) if out else np.zeros((0, model.n_classes))


def domain_probabilities(model, x, domain, chunk=512):
    private = model.gs if domain in (SOURCE, "source") else model.gt
    out = [model.d.forward(model.g.forward(private.forward(x[i:i + chunk])))[:, 1]
           for i in range(0, len(x), chunk)]
    return np.concatenate(out)


def domain_accuracy(model, xs, xt):
    """Fraction of held-out DIs whose domain the frozen discriminator gets right."""
    ps = domain_probabilities(model, xs, SOURCE)
    pt = domain_probabilities(model, xt, TARGET)
    correct = np.sum(ps < 0.5) + np.sum(pt >= 0.5)
    return float(correct / (len(ps) + len(pt)))
