"""Vanilla CNN classifier trained on target data only."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import iterate_minibatches
from .errors import NumericError, ShapeError
from .nn import AdamState, Conv2D, Dense, Network, ReLU, Reshape, Softmax, adam_step, cross_entropy, one_hot


@dataclass
class BaselineModel:
    net: Network
    n_classes: int
    filters: tuple = (16, 64, 128)
    kernel: int = 3
    hidden: tuple = (512, 128)

    def build_args(self):
        return {"input_shape": list(self.net.input_shape), "n_classes": self.n_classes,
                "filters": list(self.filters), "kernel": self.kernel, "hidden": list(self.hidden)}

    def predict(self, x, chunk=512):
        x = np.asarray(x, dtype=float)
        if x.shape[1:] != self.net.input_shape:
            raise ShapeError(f"input shape {x.shape[1:]} does not match {self.net.input_shape}")
        out = [self.net.forward(x[i:i + chunk]) for i in range(0, len(x), chunk)]
        return np.concatenate(out) if out else np.zeros((0, self.n_classes))


def build_vanilla(input_shape, n_classes, filters=(16, 64, 128), kernel=3, hidden=(512, 128), seed=0):
    """Three conv+ReLU blocks (no pooling), two FC+ReLU blocks and a softmax head."""
    layers = []
    for f in filters:
        layers += [Conv2D(f, kernel), ReLU()]
    layers.append(Reshape((-1,)))
    for units in hidden:
        layers += [Dense(units), ReLU()]
    layers += [Dense(n_classes), Softmax()]
    try:
        net = Network(layers, input_shape, name="vanilla", rng=seed)
    except ShapeError as exc:
        raise ShapeError(f"geometry underflow in {exc}") from None
    return BaselineModel(net, int(n_classes), tuple(filters), int(kernel), tuple(hidden))


def mean_loss(model, x, y):
    total = 0.0
    for i in range(0, len(x), 512):
        p = model.net.forward(x[i:i + 512])
        total += cross_entropy(p, one_hot(y[i:i + 512], model.n_classes))[0]
    return total / len(x)


def train_baseline(model, dataset, epochs=60, batch_size=32, lr=2e-4, seed=0):
    """Cross-entropy training with Adam, keeping the best epoch's weights.

    After each epoch the mean training loss is re-measured over the whole
    dataset; the weights with the lowest such loss are restored at the end.
    Returns ``(model, history)``.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    x, y = dataset.x, dataset.labels
    targets = one_hot(y, model.n_classes)
    rng = np.random.default_rng(seed)
    state = AdamState.for_params(model.net.params)
    history = []
    best, best_weights = np.inf, model.net.get_weights()
    for epoch in range(epochs):
        for idx in iterate_minibatches(len(x), batch_size, rng):
            probs = model.net.forward(x[idx])
            loss, g = cross_entropy(probs, targets[idx])
            if not np.isfinite(loss):
                raise NumericError(f"baseline loss diverged in epoch {epoch}", iteration=epoch)
            grads, _ = model.net.backward(g / len(idx))
            adam_step(model.net.params, grads, state, lr, model.net.param_names)
        epoch_loss = mean_loss(model, x, y)
        if not np.isfinite(epoch_loss):
            raise NumericError(f"baseline loss diverged in epoch {epoch}", iteration=epoch)
        history.append(epoch_loss)
        if epoch_loss < best:
            best, best_weights = epoch_loss, model.net.get_weights()
    model.net.set_weights(best_weights)
    return model, np.asarray(history)
