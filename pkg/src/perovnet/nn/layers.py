"""Layers with hand-derived backward passes, NCHW layout.

Every layer exposes ``forward(x, train)`` and ``backward(dout) -> dx``.
Learnable tensors live in ``params`` and their gradients, filled by
``backward``, in ``grads`` under the same keys.  Non-learnable state
(batch-norm running statistics) lives in ``buffers``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class NumericalError(FloatingPointError):
    """A non-finite value appeared in an activation or gradient."""


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def output_shape(self, shape):
        """(C, H, W) or (D,) after this layer for a per-sample ``shape``."""
        return shape

    def astype(self, dtype):
        for d in (self.params, self.buffers):
            for k in d:
                d[k] = d[k].astype(dtype)
        self.grads = {}
        return self

    def __repr__(self):
        return f"{type(self).__name__}()"


class Conv2D(Layer):
    """k x k convolution, stride 1, zero "same" padding (odd k)."""

    kind = "conv"

    def __init__(self, in_channels, out_channels, kernel=3, rng=None, dtype=np.float64):
        super().__init__()
        if kernel % 2 != 1:
            raise ValueError("same padding needs an odd kernel size")
        self.kernel, self.pad = kernel, kernel // 2
        fan_in = in_channels * kernel * kernel
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = (rng.standard_normal((out_channels, in_channels, kernel, kernel))
                            * np.sqrt(2.0 / fan_in)).astype(dtype)
        self.params["b"] = np.zeros(out_channels, dtype=dtype)

    def output_shape(self, shape):
        return (self.params["W"].shape[0],) + tuple(shape[1:])

    def forward(self, x, train=False):
        W, b = self.params["W"], self.params["b"]
        p, k = self.pad, self.kernel
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        # (N, C, H, W, k, k) -> (N, H, W, C, k, k)
        win = sliding_window_view(xp, (k, k), axis=(2, 3)).transpose(0, 2, 3, 1, 4, 5)
        n, h, w = win.shape[:3]
        cols = win.reshape(n * h * w, -1)
        out = cols @ W.reshape(W.shape[0], -1).T + b
        self._cache = (cols, x.shape)
        return out.reshape(n, h, w, -1).transpose(0, 3, 1, 2)

    def backward(self, dout):
        cols, xshape = self._cache
        W = self.params["W"]
        n, c, h, w = xshape
        k, p = self.kernel, self.pad
        d2 = dout.transpose(0, 2, 3, 1).reshape(-1, W.shape[0])
        self.grads["W"] = (d2.T @ cols).reshape(W.shape)
        self.grads["b"] = d2.sum(axis=0)
        dcols = (d2 @ W.reshape(W.shape[0], -1)).reshape(n, h, w, c, k, k)
        dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + h, j : j + w] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, p : p + h, p : p + w]

    def __repr__(self):
        o, i, k, _ = self.params["W"].shape
        return f"Conv2D({i}->{o}, {k}x{k})"


class BatchNorm2D(Layer):
    """Per-channel batch normalization.

    Training normalizes with the (biased) batch statistics and blends them
    into the running statistics with ``momentum``; inference uses the
    running statistics.
    """

    kind = "batchnorm"

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float64):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)

    def forward(self, x, train=False):
        g = self.params["gamma"][None, :, None, None]
        b = self.params["beta"][None, :, None, None]
        if train:
            mu = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = self.momentum
            self.buffers["running_mean"] = (1 - m) * self.buffers["running_mean"] + m * mu
            self.buffers["running_var"] = (1 - m) * self.buffers["running_var"] + m * var
        else:
            mu, var = self.buffers["running_mean"], self.buffers["running_var"]
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu[None, :, None, None]) * inv[None, :, None, None]
        self._cache = (xhat, inv, train)
        return g * xhat + b

    def backward(self, dout):
        xhat, inv, train = self._cache
        self.grads["gamma"] = (dout * xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] = dout.sum(axis=(0, 2, 3))
        dxhat = dout * self.params["gamma"][None, :, None, None]
        if not train:
            return dxhat * inv[None, :, None, None]
        m = dout.shape[0] * dout.shape[2] * dout.shape[3]
        mean_d = dxhat.sum(axis=(0, 2, 3), keepdims=True) / m
        mean_dx = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True) / m
        return (dxhat - mean_d - xhat * mean_dx) * inv[None, :, None, None]

    def __repr__(self):
        return f"BatchNorm2D({self.params['gamma'].size})"


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        self._mask = x > 0
        return np.where(self._mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, dout):
        return np.where(self._mask, dout, 0).astype(dout.dtype, copy=False)


class _Pool2D(Layer):
    """2x2 window, stride 2; odd trailing rows/columns are dropped."""

    def __init__(self, size=2):
        super().__init__()
        self.size = size

    def output_shape(self, shape):
        c, h, w = shape
        return (c, h // self.size, w // self.size)

    def _windows(self, x):
        s = self.size
        n, c, h, w = x.shape
        ho, wo = h // s, w // s
        v = x[:, :, : ho * s, : wo * s].reshape(n, c, ho, s, wo, s).transpose(0, 1, 2, 4, 3, 5)
        return v.reshape(n, c, ho, wo, s * s)

    def _unwindow(self, dwin, xshape):
        s = self.size
        n, c, h, w = xshape
        ho, wo = h // s, w // s
        dx = np.zeros(xshape, dtype=dwin.dtype)
        dx[:, :, : ho * s, : wo * s] = (
            dwin.reshape(n, c, ho, wo, s, s).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * s, wo * s)
        )
        return dx

    def __repr__(self):
        return f"{type(self).__name__}({self.size}x{self.size})"


class MaxPool2D(_Pool2D):
    """Gradient goes to the first maximal element in row-major window order."""

    kind = "maxpool"

    def forward(self, x, train=False):
        win = self._windows(x)
        idx = win.argmax(axis=-1)
        self._cache = (idx, x.shape, win.shape)
        return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        idx, xshape, wshape = self._cache
        dwin = np.zeros(wshape, dtype=dout.dtype)
        np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
        return self._unwindow(dwin, xshape)


class AvgPool2D(_Pool2D):
    kind = "avgpool"

    def forward(self, x, train=False):
        win = self._windows(x)
        self._cache = (x.shape, win.shape)
        return win.mean(axis=-1)

    def backward(self, dout):
        xshape, wshape = self._cache
        dwin = np.broadcast_to(dout[..., None] / wshape[-1], wshape)
        return self._unwindow(dwin, xshape)


class Dropout(Layer):
    """Inverted dropout; identity at inference.

    Setting ``fixed_mask`` pins the keep-mask (used for gradient checks).
    """

    kind = "dropout"

    def __init__(self, rate=0.2, rng=None):
        super().__init__()
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.fixed_mask = None

    def forward(self, x, train=False):
        if not train or self.rate == 0:
            self._mask = None
            return x
        if self.fixed_mask is not None:
            keep = self.fixed_mask
        else:
            keep = self.rng.random(x.shape) >= self.rate
        self._mask = keep.astype(x.dtype) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, dout):
        return dout if self._mask is None else dout * self._mask

    def __repr__(self):
        return f"Dropout({self.rate})"


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, out_features, rng=None, dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = (rng.standard_normal((out_features, in_features))
                            * np.sqrt(2.0 / in_features)).astype(dtype)
        self.params["b"] = np.zeros(out_features, dtype=dtype)

    def output_shape(self, shape):
        return (self.params["W"].shape[0],)

    def forward(self, x, train=False):
        self._x = x
        return x @ self.params["W"].T + self.params["b"]

    def backward(self, dout):
        self.grads["W"] = dout.T @ self._x
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["W"]

    def __repr__(self):
        o, i = self.params["W"].shape
        return f"Dense({i}->{o})"


#: parameter names that receive L2 weight decay
DECAYED = {"W"}
