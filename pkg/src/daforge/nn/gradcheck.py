"""Central finite-difference checks for analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-6  # double precision


def numerical_gradient(f, array, step=DEFAULT_STEP):
    """Central differences of scalar ``f()`` w.r.t. ``array``, perturbed in place."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        fp = f()
        flat[i] = old - step
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def relative_error(analytic, numeric):
    """``||a - n|| / max(||a||, ||n||)``; 0 when both vanish."""
    a = np.asarray(analytic, dtype=float).ravel()
    n = np.asarray(numeric, dtype=float).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


@dataclass
class BlockResult:
    name: str
    rel_error: float
    max_abs_error: float
    passed: bool


@dataclass
class GradCheckReport:
    tol: float
    blocks: list = field(default_factory=list)

    @property
    def passed(self):
        return all(b.passed for b in self.blocks)

    @property
    def flagged(self):
        return [b.name for b in self.blocks if not b.passed]

    @property
    def max_rel_error(self):
        return max((b.rel_error for b in self.blocks), default=0.0)

    def add(self, name, analytic, numeric):
        rel = relative_error(analytic, numeric)
        mae = float(np.max(np.abs(np.asarray(analytic) - numeric))) if np.size(numeric) else 0.0
        ok = bool(np.isfinite(rel) and rel <= self.tol)
        self.blocks.append(BlockResult(name, rel, mae, ok))

    def __str__(self):
        lines = [f"{'block':<40s} {'rel.err':>10s} {'max|diff|':>10s}"]
        for b in self.blocks:
            flag = "ok" if b.passed else "FAIL"
            lines.append(f"{b.name:<40s} {b.rel_error:10.2e} {b.max_abs_error:10.2e} {flag}")
        return "\n".join(lines)


def check_gradients(network, loss_fn, x, tol=DEFAULT_TOL, step=DEFAULT_STEP, check_input=True):
    """Compare ``network.backward`` against central differences.

    ``loss_fn(output)`` must return ``(loss, d loss / d output)``.  Every
    parameter block (and the input, unless ``check_input`` is false) is
    reported; blocks with relative error above ``tol`` are flagged.
    """
    x = np.array(x, dtype=float)

    def total():
        return loss_fn(network.forward(x))[0]

    out = network.forward(x)
    _, dout = loss_fn(out)
    grads, dx = network.backward(dout)

    report = GradCheckReport(tol=tol)
    for name, p, g in zip(network.param_names, network.params, grads):
        report.add(name, g, numerical_gradient(total, p, step))
    if check_input:
        report.add(f"{network.name}.input", dx, numerical_gradient(total, x, step))
    return report
