"""Model checkpoints: a JSON header followed by raw little-endian float64 tensors.

Layout::

    8 bytes   magic  b"DAFCKPT1"
    4 bytes   header length L (uint32, little-endian)
    L bytes   UTF-8 JSON header
    ...       tensor data, '<f8', concatenated in header order

The header holds ``kind`` ("da" or "vanilla"), the ``build_args`` needed to
rebuild the networks, the training ``hyper`` parameters, the ``seeds`` and a
``tensors`` table of ``{name, shape, offset}`` entries (offsets count bytes
from the start of the data section).  Loading rebuilds the model and copies
every tensor back, so a save/load round trip is bit-exact.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import adversarial as da
from .baseline import BaselineModel, build_vanilla
from .errors import DAForgeError, ShapeError

MAGIC = b"DAFCKPT1"
_LEN = struct.Struct("<I")


class CheckpointError(DAForgeError, ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str
    model: object
    hyper: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)

    @property
    def target_shape(self):
        if self.kind == "da":
            return self.model.target_shape
        return self.model.net.input_shape

    def predict(self, x):
        """Class probabilities for target-domain images."""
        if self.kind == "da":
            return da.predict(self.model, x, da.TARGET)
        return self.model.predict(x)


def _networks(kind, model):
    if kind == "da":
        return list(model.networks.values())
    return [model.net]


def dumps_checkpoint(model, hyper=None, seeds=None):
    if isinstance(model, da.DAModel):
        kind = "da"
    elif isinstance(model, BaselineModel):
        kind = "vanilla"
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    tensors, chunks, offset = [], [], 0
    for net in _networks(kind, model):
        for name, p in zip(net.param_names, net.params):
            raw = np.ascontiguousarray(p, dtype="<f8").tobytes()
            tensors.append({"name": name, "shape": list(p.shape), "offset": offset})
            chunks.append(raw)
            offset += len(raw)
    header = {"kind": kind, "build_args": model.build_args(), "hyper": dict(hyper or {}),
              "seeds": dict(seeds or {}), "tensors": tensors}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + _LEN.pack(len(blob)) + blob + b"".join(chunks)


def _rebuild(kind, args):
    if kind == "da":
        arch = da.ArchConfig.from_dict(args["arch"])
        return da.build_da_networks(tuple(args["source_shape"]), tuple(args["target_shape"]),
                                    args["n_classes"], arch)
    if kind == "vanilla":
        return build_vanilla(tuple(args["input_shape"]), args["n_classes"], tuple(args["filters"]),
                             args["kernel"], tuple(args["hidden"]))
    raise CheckpointError(f"unknown checkpoint kind {kind!r}")


def loads_checkpoint(blob):
    if blob[:8] != MAGIC:
        raise CheckpointError("not a daforge checkpoint (bad magic)")
    if len(blob) < 12:
        raise CheckpointError("checkpoint truncated in header")
    (length,) = _LEN.unpack_from(blob, 8)
    try:
        header = json.loads(blob[12:12 + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    data = memoryview(blob)[12 + length:]
    kind = header.get("kind")
    model = _rebuild(kind, header["build_args"])
    table = {t["name"]: t for t in header["tensors"]}
    for net in _networks(kind, model):
        for name, p in zip(net.param_names, net.params):
            entry = table.pop(name, None)
            if entry is None:
                raise CheckpointError(f"checkpoint is missing tensor {name}")
            if tuple(entry["shape"]) != p.shape:
                raise ShapeError(f"tensor {name}: stored shape {tuple(entry['shape'])} "
                                 f"!= model shape {p.shape}")
            end = entry["offset"] + p.size * 8
            if end > len(data):
                raise CheckpointError(f"checkpoint truncated in tensor {name}")
            p[...] = np.frombuffer(data[entry["offset"]:end], dtype="<f8").reshape(p.shape)
    if table:
        raise CheckpointError(f"checkpoint has unexpected tensors: {sorted(table)}")
    return Checkpoint(kind, model, header.get("hyper", {}), header.get("seeds", {}))


def save_checkpoint(path, model, hyper=None, seeds=None):
    Path(path).write_bytes(dumps_checkpoint(model, hyper, seeds))


def load_checkpoint(path):
    return loads_checkpoint(Path(path).read_bytes())
