"""Wafer-map datasets: encoding, WMD files, splitting, batching and a synthetic generator.

A wafer map is a 2-D grid of cell codes: 0 = blank (off-wafer), 1 = passing
die, 2 = failing die.  Networks consume the one-hot ``(H, W, 3)`` encoding.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DAForgeError

SOURCE, TARGET = 0, 1
N_CODES = 3


class FormatError(DAForgeError, ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class BadMagicError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class LabelRangeError(FormatError):
    pass


class CellRangeError(FormatError):
    pass


class DomainByteError(FormatError):
    pass


# ---------------------------------------------------------------------------
# encoding


def one_hot_encode(wafer_map):
    """``(H, W)`` or ``(N, H, W)`` cell codes -> float one-hot with a trailing axis of 3."""
    codes = np.asarray(wafer_map)
    if codes.size and (codes.min() < 0 or codes.max() >= N_CODES):
        bad = codes[(codes < 0) | (codes >= N_CODES)].flat[0]
        raise CellRangeError(f"cell code {bad} outside {{0, 1, 2}}")
    return np.eye(N_CODES)[codes.astype(np.intp)]


def decode(x):
    """Inverse of :func:`one_hot_encode` (argmax over channels); also quantises soft images."""
    return np.asarray(x).argmax(axis=-1).astype(np.uint8)


# ---------------------------------------------------------------------------
# containers


@dataclass(frozen=True)
class DomainSample:
    x: np.ndarray
    y: int
    d: int


@dataclass(frozen=True)
class Dataset:
    """Labelled wafer maps from one domain.

    ``maps`` holds uint8 cell codes ``(N, H, W)``; ``labels`` int ``(N,)``.
    """

    maps: np.ndarray
    labels: np.ndarray
    class_names: tuple
    domain: int
    shape: tuple = field(default=None)

    def __post_init__(self):
        maps = np.asarray(self.maps, dtype=np.uint8)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        shape = self.shape
        if maps.ndim == 3:
            shape = maps.shape[1:]
        elif maps.size == 0 and shape is not None:
            maps = maps.reshape((0,) + tuple(shape))
        else:
            raise ValueError(f"maps must be (N, H, W), got {maps.shape}")
        if len(maps) != len(labels):
            raise ValueError("maps and labels differ in length")
        if self.domain not in (SOURCE, TARGET):
            raise ValueError(f"domain must be 0 or 1, got {self.domain}")
        if len(self.class_names) < 1:
            raise ValueError("at least one class name required")
        if labels.size and (labels.min() < 0 or labels.max() >= len(self.class_names)):
            raise ValueError("label out of range for class_names")
        if maps.size and maps.max() >= N_CODES:
            raise CellRangeError("cell code outside {0, 1, 2}")
        maps.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "maps", maps)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "shape", tuple(int(s) for s in shape))

    def __len__(self):
        return len(self.labels)

    @property
    def n_classes(self):
        return len(self.class_names)

    @property
    def input_shape(self):
        return self.shape + (N_CODES,)

    @property
    def x(self):
        return one_hot_encode(self.maps)

    def __iter__(self) -> Iterator[DomainSample]:
        for m, y in zip(self.maps, self.labels):
            yield DomainSample(one_hot_encode(m), int(y), self.domain)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, index):
        index = np.asarray(index, dtype=np.intp)
        return Dataset(self.maps[index], self.labels[index], self.class_names, self.domain, self.shape)

    def append(self, maps, labels):
        maps = np.asarray(maps, dtype=np.uint8).reshape((-1,) + self.shape)
        return Dataset(np.concatenate([self.maps, maps]), np.concatenate([self.labels, labels]),
                       self.class_names, self.domain, self.shape)

    def equals(self, other):
        return (self.domain == other.domain and self.class_names == other.class_names
                and self.shape == other.shape and np.array_equal(self.maps, other.maps)
                and np.array_equal(self.labels, other.labels))


# ---------------------------------------------------------------------------
# WMD file format
#
#   "WMD1" | u8 domain | u8 n_classes | u16 H | u16 W | u32 N   (little-endian)
#   N x ( u8 label | H*W u8 cell codes, row-major )
#
# Class names live in a sibling UTF-8 file (same stem, ".names"), one per line.

MAGIC = b"WMD1"
_HEADER = struct.Struct("<4sBBHHI")


def names_path(path):
    return Path(path).with_suffix(".names")


def dumps_wmd(dataset):
    h, w = dataset.shape
    head = _HEADER.pack(MAGIC, dataset.domain, dataset.n_classes, h, w, len(dataset))
    body = np.empty((len(dataset), 1 + h * w), dtype=np.uint8)
    body[:, 0] = dataset.labels
    body[:, 1:] = dataset.maps.reshape(len(dataset), h * w)
    return head + body.tobytes()


def loads_wmd(blob, class_names=None):
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagicError(f"bad magic {bytes(blob[:4])!r}, expected {MAGIC!r}", offset=0)
    if len(blob) < _HEADER.size:
        raise TruncatedError("truncated header", offset=len(blob))
    _, domain, n_classes, h, w, n = _HEADER.unpack_from(blob, 0)
    if domain not in (SOURCE, TARGET):
        raise DomainByteError(f"domain byte {domain} not in {{0, 1}}", offset=4)
    if n_classes < 1:
        raise FormatError("class count must be at least 1", offset=5)
    rec = 1 + h * w
    need = _HEADER.size + n * rec
    if len(blob) < need:
        done = (len(blob) - _HEADER.size) // rec
        raise TruncatedError(f"truncated payload: {n} records declared, {done} complete",
                             offset=len(blob))
    if len(blob) > need:
        raise FormatError(f"{len(blob) - need} trailing bytes after last record", offset=need)
    body = np.frombuffer(blob, dtype=np.uint8, count=n * rec, offset=_HEADER.size).reshape(n, rec)
    labels = body[:, 0]
    bad = np.flatnonzero(labels >= n_classes)
    if bad.size:
        i = int(bad[0])
        raise LabelRangeError(f"record {i}: label {labels[i]} >= class count {n_classes}",
                              offset=_HEADER.size + i * rec)
    cells = body[:, 1:]
    bad = np.flatnonzero(cells.reshape(-1) >= N_CODES)
    if bad.size:
        i, j = divmod(int(bad[0]), h * w)
        raise CellRangeError(f"record {i}: cell code {cells[i, j]} outside {{0, 1, 2}}",
                             offset=_HEADER.size + i * rec + 1 + j)
    if class_names is None:
        class_names = [f"class{i}" for i in range(n_classes)]
    if len(class_names) != n_classes:
        raise FormatError(f"{len(class_names)} class names for {n_classes} classes")
    return Dataset(cells.reshape(n, h, w).copy(), labels.astype(np.int64), tuple(class_names),
                   domain, (h, w))


def save_wmd(dataset, path):
    path = Path(path)
    path.write_bytes(dumps_wmd(dataset))
    names_path(path).write_text("".join(f"{n}\n" for n in dataset.class_names), encoding="utf-8")


def load_wmd(path):
    path = Path(path)
    npath = names_path(path)
    names = None
    if npath.exists():
        names = npath.read_text(encoding="utf-8").splitlines()
    return loads_wmd(path.read_bytes(), names)


# ---------------------------------------------------------------------------
# splitting and sampling


def stratified_split(dataset, train_fraction, seed):
    """Per-class random split.

    Each class with ``n >= 2`` puts ``round(train_fraction * n)`` samples in
    train (clamped to ``[1, n - 1]``) and the rest in test.  A class with a
    single sample is placed in both sets.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    if len(dataset) == 0:
        raise ValueError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in range(dataset.n_classes):
        members = np.flatnonzero(dataset.labels == c)
        n = len(members)
        if n == 0:
            continue
        if n == 1:
            train_idx.append(members)
            test_idx.append(members)
            continue
        members = rng.permutation(members)
        k = int(np.floor(train_fraction * n + 0.5))
        k = min(max(k, 1), n - 1)
        train_idx.append(members[:k])
        test_idx.append(members[k:])
    train = np.sort(np.concatenate(train_idx))
    test = np.sort(np.concatenate(test_idx))
    return dataset.subset(train), dataset.subset(test)


def subsample_target(dataset, n, seed):
    """Uniform random subset of ``n`` samples (a permutation when ``n == len``)."""
    if n > len(dataset):
        raise ValueError(f"cannot draw {n} samples from a dataset of {len(dataset)}")
    if n < 0:
        raise ValueError("n must be non-negative")
    idx = np.random.default_rng(seed).permutation(len(dataset))[:n]
    return dataset.subset(idx)


@dataclass
class Batch:
    xs: np.ndarray
    ys: np.ndarray
    xt: np.ndarray
    yt: np.ndarray

    @property
    def d(self):
        return np.concatenate([np.zeros(len(self.xs)), np.ones(len(self.xt))])

    def __len__(self):
        return len(self.xs) + len(self.xt)


class _EpochSampler:
    """Draws indices without replacement inside an epoch, reshuffling between epochs."""

    def __init__(self, n, rng):
        self.n = n
        self.rng = rng
        self.order = rng.permutation(n)
        self.pos = 0

    def take(self, k):
        out = []
        while k > 0:
            if self.pos == self.n:
                self.order = self.rng.permutation(self.n)
                self.pos = 0
            step = min(k, self.n - self.pos)
            out.append(self.order[self.pos:self.pos + step])
            self.pos += step
            k -= step
        return np.concatenate(out)


def make_batches(source, target, batch_size, seed) -> Iterator[Batch]:
    """Endless stream of batches with ``batch_size // 2`` samples from each domain."""
    if batch_size < 2 or batch_size % 2:
        raise ValueError("batch_size must be a positive even number")
    if len(source) == 0 or len(target) == 0:
        raise ValueError("both domains need at least one sample")
    rng_s, rng_t = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    ss, st = _EpochSampler(len(source), rng_s), _EpochSampler(len(target), rng_t)
    xs_all, xt_all = source.x, target.x
    half = batch_size // 2
    while True:
        i, j = ss.take(half), st.take(half)
        yield Batch(xs_all[i], source.labels[i], xt_all[j], target.labels[j])


def iterate_minibatches(n, batch_size, rng):
    """Index batches covering ``range(n)`` once in random order."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


# ---------------------------------------------------------------------------
# synthetic two-domain generator

PATTERNS = ("center", "donut", "edge-ring", "random", "edge-loc", "local", "scratch",
            "near-full", "none")


@dataclass
class SynthSpec:
    """Recipe for a synthetic source/target pair.

    Geometry is drawn in coordinates normalised to the wafer radius, so the
    same class looks alike at both resolutions.  The target domain differs by
    resolution, noise level and a shift of the defect geometry.
    """

    source_shape: tuple = (16, 16)
    target_shape: tuple = (12, 12)
    n_classes: int = 4
    source_counts: Sequence[int] = (400, 400, 400, 400)
    target_counts: Sequence[int] = (100, 10, 10, 10)
    source_noise: float = 0.03
    target_noise: float = 0.08
    target_shift: float = 0.1
    seed: int = 0
    class_names: Sequence[str] | None = None

    def validate(self):
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.n_classes > len(PATTERNS):
            raise ValueError(f"at most {len(PATTERNS)} classes are available")
        for counts in (self.source_counts, self.target_counts):
            if len(counts) != self.n_classes:
                raise ValueError("per-class counts must have n_classes entries")
            if min(counts) < 1:
                raise ValueError("every class needs at least one sample")
        for shape in (self.source_shape, self.target_shape):
            if min(shape) < 8:
                raise ValueError(f"wafer of {shape} too small to draw defect patterns (min 8x8)")
        for rate in (self.source_noise, self.target_noise):
            if not 0.0 <= rate < 0.5:
                raise ValueError("noise rate must lie in [0, 0.5)")
        if not 0.0 <= self.target_shift < 0.5:
            raise ValueError("target_shift must lie in [0, 0.5)")

    def names(self):
        if self.class_names is not None:
            return tuple(self.class_names)
        return PATTERNS[:self.n_classes]


def _grid(shape):
    h, w = shape
    r = min(h, w) / 2.0
    yy, xx = np.mgrid[0:h, 0:w]
    u = (xx + 0.5 - w / 2.0) / r
    v = (yy + 0.5 - h / 2.0) / r
    return u, v, np.hypot(u, v)


def _draw(pattern, shape, noise, shift, rng):
    u, v, rad = _grid(shape)
    disc = rad <= 1.0
    theta = np.arctan2(v, u)
    if pattern == "center":
        cu, cv = rng.normal(0, 0.08, size=2)
        r0 = rng.uniform(0.25, 0.45) * (1 + shift)
        defect = np.hypot(u - cu, v - cv) < r0
    elif pattern == "donut":
        r_in = rng.uniform(0.3, 0.4) + shift / 2
        width = rng.uniform(0.18, 0.28)
        defect = (rad > r_in) & (rad < r_in + width)
    elif pattern == "edge-ring":
        width = rng.uniform(0.15, 0.25) * (1 + shift)
        defect = rad > 1.0 - width
    elif pattern == "random":
        defect = rng.random(rad.shape) < rng.uniform(0.25, 0.4) * (1 - shift)
    elif pattern == "edge-loc":
        a0 = rng.uniform(-np.pi, np.pi)
        span = rng.uniform(0.5, 1.0)
        d = np.angle(np.exp(1j * (theta - a0)))
        defect = (rad > 0.7 - shift / 2) & (np.abs(d) < span / 2)
    elif pattern == "local":
        ang, dist = rng.uniform(-np.pi, np.pi), rng.uniform(0.3, 0.6)
        r0 = rng.uniform(0.15, 0.25) * (1 + shift)
        defect = np.hypot(u - dist * np.cos(ang), v - dist * np.sin(ang)) < r0
    elif pattern == "scratch":
        ang = rng.uniform(0, np.pi)
        off = rng.uniform(-0.4, 0.4)
        dist = np.abs(u * np.sin(ang) - v * np.cos(ang) - off)
        along = np.abs(u * np.cos(ang) + v * np.sin(ang))
        defect = (dist < 0.08 + shift / 4) & (along < rng.uniform(0.4, 0.8))
    elif pattern == "near-full":
        defect = rng.random(rad.shape) < rng.uniform(0.75, 0.95)
    elif pattern == "none":
        defect = np.zeros(rad.shape, dtype=bool)
    else:
        raise ValueError(f"unknown pattern {pattern!r}")
    flips = rng.random(rad.shape) < noise
    fail = defect ^ flips
    m = np.where(disc, 1, 0).astype(np.uint8)
    m[disc & fail] = 2
    return m


def _render(names, counts, shape, noise, shift, domain, rng):
    patterns = [n if n in PATTERNS else PATTERNS[i] for i, n in enumerate(names)]
    maps, labels = [], []
    for c, (pattern, count) in enumerate(zip(patterns, counts)):
        for _ in range(int(count)):
            maps.append(_draw(pattern, shape, noise, shift, rng))
            labels.append(c)
    maps = np.stack(maps)
    labels = np.asarray(labels)
    perm = rng.permutation(len(labels))
    return Dataset(maps[perm], labels[perm], tuple(names), domain, tuple(shape))


def generate_synth(spec: SynthSpec):
    """Build ``(source, target)`` datasets from ``spec``; deterministic per seed."""
    spec.validate()
    rng_s, rng_t = (np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(2))
    names = spec.names()
    source = _render(names, spec.source_counts, spec.source_shape, spec.source_noise, 0.0,
                     SOURCE, rng_s)
    target = _render(names, spec.target_counts, spec.target_shape, spec.target_noise,
                     spec.target_shift, TARGET, rng_t)
    return source, target
