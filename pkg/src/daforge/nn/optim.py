"""Adam with bias correction, plus a plain SGD step for literal update rules."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **kw):
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kw)


def _check_finite(grads, names):
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            label = names[i] if names is not None else f"param[{i}]"
            raise NumericError(f"non-finite gradient for {label}")


def adam_step(params, grads, state, lr, names=None):
    """Apply one Adam update in place; returns ``params``.

    ``state`` is advanced (``t`` += 1, moments updated).  A non-finite gradient
    raises :class:`NumericError` before anything is modified.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state disagree in length")
    _check_finite(grads, names)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def sgd_step(params, grads, lr, names=None):
    _check_finite(grads, names)
    for p, g in zip(params, grads):
        p -= lr * g
    return params
