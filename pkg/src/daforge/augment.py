"""Autoencoder-based oversampling of minority classes.

A small convolutional autoencoder is fit to the target training maps.  New
samples come from decoding a latent code perturbed with Gaussian noise; they
inherit the label of the map they were encoded from.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import DomainSample, decode, iterate_minibatches
from .errors import NumericError, ShapeError
from .nn import AdamState, Conv2D, ConvTranspose2D, MaxPool2D, Network, ReLU, Sigmoid, Upsample2D
from .nn import adam_step, sum_squared_error


@dataclass
class Autoencoder:
    encoder: Network
    decoder: Network

    @property
    def latent_shape(self):
        return self.encoder.output_shape

    @property
    def input_shape(self):
        return self.encoder.input_shape

    def encode(self, x):
        return self.encoder.forward(x)

    def decode(self, h):
        return self.decoder.forward(h)

    def reconstruct(self, x):
        return self.decode(self.encode(x))


def _max_undercomplete_channels(input_shape, kernel):
    h, w, c = input_shape
    pooled = ((h - kernel + 1) // 2) * ((w - kernel + 1) // 2)
    return (h * w * c - 1) // pooled


def build_autoencoder(input_shape, channels=None, decoder_channels=64, kernel=3,
                      allow_overcomplete=False, seed=0):
    """Encoder: conv(k) -> ReLU -> 2x2 max-pool.  Decoder: conv-transpose(k) ->
    2x upsample -> conv(k, 3 filters) -> sigmoid.

    With VALID convolutions the decoder restores the input size exactly when
    ``H`` and ``W`` are even.  ``channels`` sets the encoder width; by default it
    is the largest value up to 64 that keeps the latent code smaller than the
    input.  ``channels=64, allow_overcomplete=True`` gives the literal 64-filter
    encoder even where its code is larger than the input.
    """
    h, w, c = (int(s) for s in input_shape)
    if h % 2 or w % 2:
        raise ShapeError(f"autoencoder input {h}x{w} must have even sides")
    if h < kernel + 1 or w < kernel + 1:
        raise ShapeError(f"autoencoder input {h}x{w} too small for kernel {kernel}")
    limit = _max_undercomplete_channels((h, w, c), kernel)
    if channels is None:
        channels = min(64, limit)
        if channels < 1:
            raise ShapeError(f"no undercomplete encoder exists for input {input_shape}")
    elif channels > limit and not allow_overcomplete:
        raise ShapeError(f"{channels} encoder channels give a latent code larger than the "
                         f"input {input_shape} (max {limit}); pass allow_overcomplete=True")
    rng_e, rng_d = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    encoder = Network([Conv2D(channels, kernel), ReLU(), MaxPool2D(2)],
                      (h, w, c), name="encoder", rng=rng_e)
    decoder = Network([ConvTranspose2D(decoder_channels, kernel), Upsample2D(2),
                       Conv2D(c, kernel), Sigmoid()],
                      encoder.output_shape, name="decoder", rng=rng_d)
    if decoder.output_shape != (h, w, c):
        raise ShapeError(f"decoder output {decoder.output_shape} != input {(h, w, c)}")
    return Autoencoder(encoder, decoder)


def train_autoencoder(ae, dataset, epochs=20, batch_size=32, lr=1e-3, seed=0):
    """Minimise ``||x - dec(enc(x))||^2`` with Adam.

    Returns ``(ae, history)`` where ``history[e]`` is the per-element mean
    squared reconstruction error over the whole dataset after epoch ``e``;
    ``history[0]`` is measured before any update.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train an autoencoder on an empty dataset")
    x_all = dataset.x
    rng = np.random.default_rng(seed)
    enc_state = AdamState.for_params(ae.encoder.params)
    dec_state = AdamState.for_params(ae.decoder.params)
    history = [reconstruction_mse(ae, x_all)]
    for epoch in range(epochs):
        for idx in iterate_minibatches(len(x_all), batch_size, rng):
            x = x_all[idx]
            xhat = ae.reconstruct(x)
            loss, g = sum_squared_error(xhat, x)
            if not np.isfinite(loss):
                raise NumericError(f"autoencoder loss diverged in epoch {epoch}", iteration=epoch)
            g /= len(x)
            dgrads, dh = ae.decoder.backward(g)
            egrads, _ = ae.encoder.backward(dh)
            adam_step(ae.decoder.params, dgrads, dec_state, lr, ae.decoder.param_names)
            adam_step(ae.encoder.params, egrads, enc_state, lr, ae.encoder.param_names)
        mse = reconstruction_mse(ae, x_all)
        if not np.isfinite(mse):
            raise NumericError(f"autoencoder loss diverged in epoch {epoch}", iteration=epoch)
        history.append(mse)
    return ae, np.asarray(history)


def reconstruction_mse(ae, x, chunk=256):
    total = 0.0
    for start in range(0, len(x), chunk):
        part = x[start:start + chunk]
        total += float(np.sum((ae.reconstruct(part) - part) ** 2))
    return total / x.size


def generate_synthetic(ae, sample, noise_std=1.0, rng=None):
    """Decode ``enc(x) + eps`` with ``eps ~ N(0, noise_std^2)``; label and domain are copied.

    The returned ``x`` is the raw sigmoid output, values in (0, 1).
    """
    rng = np.random.default_rng(rng)
    h = ae.encode(np.asarray(sample.x, dtype=float)[None])
    h = h + rng.normal(0.0, noise_std, size=h.shape)
    return DomainSample(ae.decode(h)[0], sample.y, sample.d)


@dataclass
class AugmentPlan:
    """Per-class target counts for :func:`balance_dataset`."""

    targets: dict = field(default_factory=dict)
    noise_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.noise_std <= 0:
            raise ValueError("noise_std must be positive")
        self.targets = {int(k): int(v) for k, v in self.targets.items()}

    @classmethod
    def to_total(cls, dataset, total="max", skip=(), **kw):
        """Raise every class (except ``skip``) to ``total`` samples; ``"max"`` uses the largest class."""
        counts = dataset.class_counts()
        total = int(counts.max()) if total == "max" else int(total)
        skip = _class_ids(dataset, skip)
        targets = {c: (int(n) if c in skip else max(total, int(n))) for c, n in enumerate(counts)}
        return cls(targets, **kw)

    @classmethod
    def add_per_class(cls, dataset, n, skip=(), **kw):
        """Add ``n`` synthetic samples to every class not in ``skip``."""
        counts = dataset.class_counts()
        skip = _class_ids(dataset, skip)
        targets = {c: int(m) + (0 if c in skip else int(n)) for c, m in enumerate(counts)}
        return cls(targets, **kw)


def _class_ids(dataset, classes):
    out = set()
    for c in classes:
        if isinstance(c, str):
            if c not in dataset.class_names:
                raise ValueError(f"unknown class {c!r}")
            out.add(dataset.class_names.index(c))
        else:
            out.add(int(c))
    return out


def balance_dataset(dataset, plan, ae, chunk=256):
    """Append synthetic samples until each class reaches its planned count.

    Seeds for each synthetic map are drawn uniformly (with replacement) from
    the class's originals.  Synthetic images are quantised back to cell codes
    by channel argmax so the result stays a valid wafer-map dataset.  The
    originals keep their positions at the front of the returned dataset.
    """
    counts = dataset.class_counts()
    rng = np.random.default_rng(plan.seed)
    new_maps, new_labels = [], []
    for c, goal in sorted(plan.targets.items()):
        have = int(counts[c]) if c < len(counts) else 0
        need = goal - have
        if need <= 0:
            continue
        members = np.flatnonzero(dataset.labels == c)
        if len(members) == 0:
            raise ValueError(f"class {dataset.class_names[c]!r} has no samples to synthesise from")
        picks = rng.choice(members, size=need, replace=True)
        for start in range(0, need, chunk):
            idx = picks[start:start + chunk]
            h = ae.encode(dataset.subset(idx).x)
            h = h + rng.normal(0.0, plan.noise_std, size=h.shape)
            new_maps.append(decode(ae.decode(h)))
            new_labels.append(np.full(len(idx), c))
    if not new_maps:
        return dataset
    return dataset.append(np.concatenate(new_maps), np.concatenate(new_labels))
