"""Losses returning ``(value, grad_wrt_prediction)``.

Probabilities are clamped to ``[EPS, 1 - EPS]`` before taking logs.  The
gradient is evaluated at the clamped value (straight-through clamp), so it
stays finite and keeps its sign on saturated predictions.
"""
import numpy as np

EPS = 1e-12


def clamp_prob(p):
    return np.clip(p, EPS, 1.0 - EPS)


def cross_entropy(probs, onehot, weights=None):
    """Summed categorical cross-entropy ``-sum_i w_i * y_i . log p_i``."""
    p = clamp_prob(probs)
    w = np.ones(len(probs)) if weights is None else np.asarray(weights, dtype=float)
    value = -float(np.sum(w[:, None] * onehot * np.log(p)))
    grad = -w[:, None] * onehot / p
    return value, grad


def binary_cross_entropy(p, target):
    """Summed ``-sum_i t_i log p_i + (1 - t_i) log(1 - p_i)`` for scalar probs."""
    pc = clamp_prob(np.asarray(p, dtype=float))
    t = np.asarray(target, dtype=float)
    value = -float(np.sum(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc)))
    grad = -(t / pc) + (1.0 - t) / (1.0 - pc)
    return value, grad


def sum_squared_error(pred, target):
    diff = pred - target
    return float(np.sum(diff * diff)), 2.0 * diff


def one_hot(labels, n_classes):
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out
