from __future__ import annotations

import numpy as np

from ..errors import ShapeError, UsageError
from .layers import layer_from_config


class Network:
    """An ordered stack of layers built for a fixed per-sample input shape.

    Parameters are initialised at construction from ``rng`` (a
    ``numpy.random.Generator`` or an integer seed).
    """

    def __init__(self, layers, input_shape, name="net", rng=None):
        self.name = name
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        rng = np.random.default_rng(rng)
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.build(shape, rng)
            except ShapeError as exc:
                raise ShapeError(f"{name}: layer {i} ({layer.kind}): {exc}") from None
        self.output_shape = shape
        self._forwarded = False

    # -- parameters ---------------------------------------------------------

    @property
    def params(self):
        return [p for layer in self.layers for p in layer.params]

    @property
    def param_names(self):
        return [f"{self.name}.{i}.{layer.kind}.{pn}"
                for i, layer in enumerate(self.layers) for pn in layer.param_names]

    def n_params(self):
        return int(sum(p.size for p in self.params))

    def get_weights(self):
        return [p.copy() for p in self.params]

    def set_weights(self, weights):
        params = self.params
        if len(weights) != len(params):
            raise ShapeError(f"{self.name}: expected {len(params)} tensors, got {len(weights)}")
        for p, w in zip(params, weights):
            w = np.asarray(w, dtype=float)
            if w.shape != p.shape:
                raise ShapeError(f"{self.name}: parameter shape {p.shape} != {w.shape}")
            p[...] = w

    # -- passes -------------------------------------------------------------

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(
                f"{self.name}: layer 0 ({self.layers[0].kind if self.layers else '-'}) expected "
                f"input {self.input_shape}, got {x.shape[1:]}")
        for i, layer in enumerate(self.layers):
            if x.shape[1:] != layer.input_shape:
                raise ShapeError(f"{self.name}: layer {i} ({layer.kind}) expected "
                                 f"{layer.input_shape}, got {x.shape[1:]}")
            x = layer.forward(x)
        self._forwarded = True
        return x

    __call__ = forward

    def backward(self, output_grad):
        """Back-propagate ``output_grad``; return ``(param_grads, input_grad)``.

        Parameters are left untouched.
        """
        if not self._forwarded:
            raise UsageError(f"{self.name}: backward called before forward")
        g = np.asarray(output_grad, dtype=float)
        if g.shape[1:] != self.output_shape:
            raise ShapeError(f"{self.name}: output grad shape {g.shape[1:]} != {self.output_shape}")
        for layer in reversed(self.layers):
            g = layer.backward(g)
        grads = [gr for layer in self.layers for gr in layer.grads]
        return grads, g

    # -- (de)serialisation helpers -----------------------------------------

    def spec(self):
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "layers": [{"kind": layer.kind, "config": layer.config()} for layer in self.layers],
        }

    @classmethod
    def from_spec(cls, spec, rng=None):
        layers = [layer_from_config(entry["kind"], entry["config"]) for entry in spec["layers"]]
        return cls(layers, spec["input_shape"], name=spec["name"], rng=rng)

    def copy(self):
        clone = Network.from_spec(self.spec())
        clone.set_weights(self.get_weights())
        return clone

    def summary(self):
        lines = [f"{self.name}: input {self.input_shape}"]
        for i, layer in enumerate(self.layers):
            n = sum(p.size for p in layer.params)
            lines.append(f"  {i:2d} {layer!r:<40s} -> {layer.output_shape}  ({n} params)")
        lines.append(f"  total params: {self.n_params()}")
        return "\n".join(lines)
