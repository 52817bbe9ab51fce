"""Layer vocabulary for the numpy engine.

All tensors are batch-first and channels-last: images are ``(N, H, W, C)``,
vectors are ``(N, D)``.  Shapes handed to :meth:`Layer.build` exclude the
batch axis.  Convolutions are stride 1 with VALID padding; pooling floors odd
spatial sizes.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from ..errors import ShapeError, UsageError


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    """Base class.  Subclasses fill ``params`` in :meth:`build`."""

    kind = "Layer"

    def __init__(self):
        self.params: list[np.ndarray] = []
        self.param_names: list[str] = []
        self.grads: list[np.ndarray] = []
        self.input_shape: tuple | None = None
        self.output_shape: tuple | None = None
        self._cache = None

    def build(self, input_shape, rng):
        self.input_shape = tuple(input_shape)
        self.output_shape = tuple(self._infer_shape(self.input_shape))
        return self.output_shape

    def _infer_shape(self, input_shape):
        return input_shape

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def _need_cache(self):
        if self._cache is None:
            raise UsageError(f"{self.kind}.backward called before forward")
        return self._cache

    def config(self):
        """Static settings, enough to rebuild the layer."""
        return {}

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.config().items())
        return f"{self.kind}({args})"


def _im2col(x, k):
    # (N, H, W, C) -> (N*Ho*Wo, k*k*C) with column order (ki, kj, c)
    n, h, w, c = x.shape
    ho, wo = h - k + 1, w - k + 1
    win = sliding_window_view(x, (k, k), axis=(1, 2))  # N, Ho, Wo, C, k, k
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * c)
    return cols


def _col2im(dcols, x_shape, k):
    n, h, w, c = x_shape
    ho, wo = h - k + 1, w - k + 1
    dcols = dcols.reshape(n, ho, wo, k, k, c)
    dx = np.zeros(x_shape)
    for i in range(k):
        for j in range(k):
            dx[:, i:i + ho, j:j + wo, :] += dcols[:, :, :, i, j, :]
    return dx


class Conv2D(Layer):
    kind = "Conv2D"

    def __init__(self, filters, kernel_size):
        super().__init__()
        self.filters = int(filters)
        self.kernel_size = int(kernel_size)

    def config(self):
        return {"filters": self.filters, "kernel_size": self.kernel_size}

    def _infer_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ShapeError(f"Conv2D needs an (H, W, C) input, got {input_shape}")
        h, w, _ = input_shape
        k = self.kernel_size
        if h < k or w < k:
            raise ShapeError(f"Conv2D kernel {k}x{k} does not fit input {h}x{w}")
        return (h - k + 1, w - k + 1, self.filters)

    def build(self, input_shape, rng):
        out = super().build(input_shape, rng)
        k, cin = self.kernel_size, self.input_shape[2]
        self.params = [
            glorot_uniform(rng, (k, k, cin, self.filters), k * k * cin, k * k * self.filters),
            np.zeros(self.filters),
        ]
        self.param_names = ["kernel", "bias"]
        return out

    def forward(self, x):
        n = x.shape[0]
        ho, wo, f = self.output_shape
        cols = _im2col(x, self.kernel_size)
        y = cols @ self.params[0].reshape(-1, f) + self.params[1]
        self._cache = (cols, x.shape)
        return y.reshape(n, ho, wo, f)

    def backward(self, dy):
        cols, x_shape = self._need_cache()
        kern = self.params[0]
        dym = dy.reshape(-1, self.filters)
        self.grads = [(cols.T @ dym).reshape(kern.shape), dym.sum(axis=0)]
        dcols = dym @ kern.reshape(-1, self.filters).T
        return _col2im(dcols, x_shape, self.kernel_size)


class ConvTranspose2D(Layer):
    """Stride-1 transposed convolution; grows each spatial side by ``k - 1``."""

    kind = "ConvTranspose2D"

    def __init__(self, filters, kernel_size):
        super().__init__()
        self.filters = int(filters)
        self.kernel_size = int(kernel_size)

    def config(self):
        return {"filters": self.filters, "kernel_size": self.kernel_size}

    def _infer_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ShapeError(f"ConvTranspose2D needs an (H, W, C) input, got {input_shape}")
        h, w, _ = input_shape
        k = self.kernel_size
        return (h + k - 1, w + k - 1, self.filters)

    def build(self, input_shape, rng):
        out = super().build(input_shape, rng)
        k, cin = self.kernel_size, self.input_shape[2]
        self.params = [
            glorot_uniform(rng, (k, k, cin, self.filters), k * k * cin, k * k * self.filters),
            np.zeros(self.filters),
        ]
        self.param_names = ["kernel", "bias"]
        return out

    def forward(self, x):
        # full correlation with the flipped kernel == scatter of x through the kernel
        k = self.kernel_size
        pad = k - 1
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        cols = _im2col(xp, k)
        flipped = self.params[0][::-1, ::-1]
        y = cols @ flipped.reshape(-1, self.filters) + self.params[1]
        self._cache = (cols, xp.shape)
        return y.reshape((x.shape[0],) + self.output_shape)

    def backward(self, dy):
        cols, xp_shape = self._need_cache()
        k = self.kernel_size
        kern = self.params[0]
        dym = dy.reshape(-1, self.filters)
        dflipped = (cols.T @ dym).reshape(kern.shape)
        self.grads = [dflipped[::-1, ::-1].copy(), dym.sum(axis=0)]
        dcols = dym @ kern[::-1, ::-1].reshape(-1, self.filters).T
        dxp = _col2im(dcols, xp_shape, k)
        pad = k - 1
        return dxp[:, pad:xp_shape[1] - pad, pad:xp_shape[2] - pad, :]


class MaxPool2D(Layer):
    """Non-overlapping max pooling; trailing rows/cols of odd inputs are dropped."""

    kind = "MaxPool2D"

    def __init__(self, pool_size=2):
        super().__init__()
        self.pool_size = int(pool_size)

    def config(self):
        return {"pool_size": self.pool_size}

    def _infer_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ShapeError(f"MaxPool2D needs an (H, W, C) input, got {input_shape}")
        h, w, c = input_shape
        p = self.pool_size
        if h < p or w < p:
            raise ShapeError(f"MaxPool2D window {p}x{p} does not fit input {h}x{w}")
        return (h // p, w // p, c)

    def _windows(self, x):
        n = x.shape[0]
        ho, wo, c = self.output_shape
        p = self.pool_size
        xc = x[:, :ho * p, :wo * p, :]
        return xc.reshape(n, ho, p, wo, p, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, p * p)

    def forward(self, x):
        win = self._windows(x)
        idx = win.argmax(axis=-1)[..., None]
        self._cache = (idx, x.shape)
        return np.take_along_axis(win, idx, axis=-1)[..., 0]

    def backward(self, dy):
        idx, x_shape = self._need_cache()
        n = x_shape[0]
        ho, wo, c = self.output_shape
        p = self.pool_size
        dwin = np.zeros((n, ho, wo, c, p * p))
        np.put_along_axis(dwin, idx, dy[..., None], axis=-1)
        dxc = dwin.reshape(n, ho, wo, c, p, p).transpose(0, 1, 4, 2, 5, 3).reshape(n, ho * p, wo * p, c)
        dx = np.zeros(x_shape)
        dx[:, :ho * p, :wo * p, :] = dxc
        return dx


class Upsample2D(Layer):
    """Nearest-neighbour upsampling by an integer factor."""

    kind = "Upsample2D"

    def __init__(self, factor=2):
        super().__init__()
        self.factor = int(factor)

    def config(self):
        return {"factor": self.factor}

    def _infer_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ShapeError(f"Upsample2D needs an (H, W, C) input, got {input_shape}")
        h, w, c = input_shape
        return (h * self.factor, w * self.factor, c)

    def forward(self, x):
        self._cache = True
        return x.repeat(self.factor, axis=1).repeat(self.factor, axis=2)

    def backward(self, dy):
        self._need_cache()
        n, h, w, c = dy.shape
        f = self.factor
        return dy.reshape(n, h // f, f, w // f, f, c).sum(axis=(2, 4))


class Dense(Layer):
    kind = "Dense"

    def __init__(self, units):
        super().__init__()
        self.units = int(units)

    def config(self):
        return {"units": self.units}

    def _infer_shape(self, input_shape):
        if len(input_shape) != 1:
            raise ShapeError(f"Dense needs a flat input, got {input_shape}; add a Reshape")
        return (self.units,)

    def build(self, input_shape, rng):
        out = super().build(input_shape, rng)
        d = self.input_shape[0]
        self.params = [glorot_uniform(rng, (d, self.units), d, self.units), np.zeros(self.units)]
        self.param_names = ["kernel", "bias"]
        return out

    def forward(self, x):
        self._cache = x
        return x @ self.params[0] + self.params[1]

    def backward(self, dy):
        x = self._need_cache()
        self.grads = [x.T @ dy, dy.sum(axis=0)]
        return dy @ self.params[0].T


class ReLU(Layer):
    kind = "ReLU"

    def forward(self, x):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, dy):
        return dy * self._need_cache()


class Sigmoid(Layer):
    kind = "Sigmoid"

    def forward(self, x):
        y = expit(x)
        self._cache = y
        return y

    def backward(self, dy):
        y = self._need_cache()
        return dy * y * (1.0 - y)


def softmax_stable(logits, axis=-1):
    """Row-wise softmax with max subtraction."""
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


class Softmax(Layer):
    kind = "Softmax"

    def forward(self, x):
        y = softmax_stable(x)
        self._cache = y
        return y

    def backward(self, dy):
        s = self._need_cache()
        return s * (dy - (dy * s).sum(axis=-1, keepdims=True))


class Reshape(Layer):
    """Per-sample reshape; one ``-1`` entry is inferred."""

    kind = "Reshape"

    def __init__(self, target_shape):
        super().__init__()
        self.target_shape = tuple(int(s) for s in target_shape)

    def config(self):
        return {"target_shape": list(self.target_shape)}

    def _infer_shape(self, input_shape):
        size = int(np.prod(input_shape))
        target = list(self.target_shape)
        if target.count(-1) > 1:
            raise ShapeError("Reshape allows at most one -1")
        if -1 in target:
            known = int(np.prod([t for t in target if t != -1]))
            if known == 0 or size % known:
                raise ShapeError(f"cannot reshape {input_shape} into {self.target_shape}")
            target[target.index(-1)] = size // known
        if int(np.prod(target)) != size:
            raise ShapeError(f"cannot reshape {input_shape} ({size} values) into {tuple(target)}")
        return tuple(target)

    def forward(self, x):
        self._cache = x.shape
        return x.reshape((x.shape[0],) + self.output_shape)

    def backward(self, dy):
        return dy.reshape(self._need_cache())


LAYER_KINDS = {
    cls.kind: cls
    for cls in (Conv2D, ConvTranspose2D, MaxPool2D, Upsample2D, Dense, ReLU, Sigmoid, Softmax, Reshape)
}


def layer_from_config(kind, config):
    try:
        cls = LAYER_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown layer kind {kind!r}") from None
    return cls(**config)
