"""
Layers, networks and gradient checks
====================================

The layer engine is plain numpy.  Every layer caches what it needs in
``forward`` and returns the input gradient from ``backward``; a Network
chains them and collects parameter gradients.
"""

import numpy as np

from daforge.nn import (Conv2D, Dense, MaxPool2D, Network, ReLU, Reshape, Softmax,
                        check_gradients, cross_entropy, one_hot)

# a small conv net on 10x10 RGB images, 3 classes
net = Network([Conv2D(4, 3), ReLU(), MaxPool2D(2), Reshape((-1,)), Dense(3), Softmax()],
              (10, 10, 3), name="demo", rng=0)
print(net.summary())

rng = np.random.default_rng(1)
x = rng.random((5, 10, 10, 3))
y = one_hot([0, 1, 2, 1, 0], 3)

# forward gives class probabilities, one row per image
probs = net.forward(x)
print("row sums:", probs.sum(axis=1))

# cross_entropy returns the summed loss and d loss / d probs
loss, dprobs = cross_entropy(probs, y)
grads, dx = net.backward(dprobs)
print(f"loss {loss:.4f}; {len(grads)} parameter blocks; input grad {dx.shape}")

# central differences against backward(), one line per parameter block
report = check_gradients(net, lambda p: cross_entropy(p, y), x, tol=1e-6)
print(report)
print("all blocks within 1e-6:", report.passed)
