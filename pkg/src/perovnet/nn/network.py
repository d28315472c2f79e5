"""Network configurations and the sequential container."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .layers import (
    DECAYED,
    AvgPool2D,
    BatchNorm2D,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    MaxPool2D,
    NumericalError,
    ReLU,
)

POOLS = {"max": MaxPool2D, "avg": AvgPool2D}


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture description.

    ``arch="first"``: conv(8)-bn-relu-avgpool-conv(16)-bn-relu-avgpool-
    conv(32)-bn-relu-conv(32)-bn-relu-dropout-dense.

    ``arch="block"``: three blocks of ``section_depth`` x [conv-bn-relu]
    with ``block_filters[b]`` filters, each block followed by the pooling
    layer ``pooling[b]``, then flatten-dense.  No dropout.
    """

    arch: str = "block"
    height: int = 28
    width: int = 37
    channels: int = 2
    output_dim: int = 7
    first_filters: tuple = (8, 16, 32, 32)
    dropout: float = 0.2
    block_filters: tuple = (8, 16, 32)
    section_depth: int = 7
    pooling: tuple = ("max", "avg", "avg")
    kernel: int = 3

    def __post_init__(self):
        if self.arch not in ("first", "block"):
            raise ValueError(f"arch must be 'first' or 'block', got {self.arch!r}")
        object.__setattr__(self, "first_filters", tuple(int(f) for f in self.first_filters))
        object.__setattr__(self, "block_filters", tuple(int(f) for f in self.block_filters))
        object.__setattr__(self, "pooling", tuple(self.pooling))
        if self.arch == "block":
            if self.section_depth < 1:
                raise ValueError("section_depth must be >= 1")
            if len(self.block_filters) != 3 or len(self.pooling) != 3:
                raise ValueError("block architecture needs 3 filter counts and 3 pooling layers")
            if sorted(self.pooling) != ["avg", "avg", "max"]:
                raise ValueError(f"pooling must be a permutation of (max, avg, avg), got {self.pooling}")
        if min(self.height, self.width) < 8:
            raise ValueError("input must be at least 8x8 to survive three 2x2 pools")

    @property
    def input_shape(self):
        return (self.channels, self.height, self.width)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class Network:
    """Sequential stack of layers with an MSE + L2 objective."""

    def __init__(self, config: NetworkConfig, seed: int = 0, dtype=np.float64):
        self.config = config
        self.dtype = np.dtype(dtype)
        ss = np.random.SeedSequence(seed)
        init_seq, drop_seq = ss.spawn(2)
        rng = np.random.default_rng(init_seq)
        self.dropout_rng = np.random.default_rng(drop_seq)
        self.layers = self._build(config, rng)

    def _build(self, cfg, rng):
        layers, c = [], cfg.channels
        k, dt = cfg.kernel, self.dtype

        def cbr(cin, cout):
            return [Conv2D(cin, cout, k, rng, dt), BatchNorm2D(cout, dtype=dt), ReLU()]

        if cfg.arch == "first":
            f = cfg.first_filters
            layers += cbr(c, f[0]) + [AvgPool2D()]
            layers += cbr(f[0], f[1]) + [AvgPool2D()]
            layers += cbr(f[1], f[2])
            layers += cbr(f[2], f[3])
            layers += [Dropout(cfg.dropout, self.dropout_rng)]
        else:
            for nf, pool in zip(cfg.block_filters, cfg.pooling):
                for _ in range(cfg.section_depth):
                    layers += cbr(c, nf)
                    c = nf
                layers.append(POOLS[pool]())
        layers.append(Flatten())
        shape = cfg.input_shape
        for lay in layers:
            shape = lay.output_shape(shape)
        layers.append(Dense(shape[0], cfg.output_dim, rng, dt))
        return layers

    # -------------------------------------------------------------- params

    def named_params(self):
        """(name, layer, key) in declaration order."""
        out = []
        for i, lay in enumerate(self.layers):
            for key in lay.params:
                out.append((f"{i}.{lay.kind}.{key}", lay, key))
        return out

    def named_buffers(self):
        out = []
        for i, lay in enumerate(self.layers):
            for key in lay.buffers:
                out.append((f"{i}.{lay.kind}.{key}", lay, key))
        return out

    def state(self) -> dict[str, np.ndarray]:
        st = {n: lay.params[k] for n, lay, k in self.named_params()}
        st.update({n: lay.buffers[k] for n, lay, k in self.named_buffers()})
        return st

    def load_state(self, state):
        for n, lay, k in self.named_params():
            lay.params[k] = np.asarray(state[n], dtype=self.dtype).reshape(lay.params[k].shape)
        for n, lay, k in self.named_buffers():
            lay.buffers[k] = np.asarray(state[n], dtype=self.dtype).reshape(lay.buffers[k].shape)

    def n_params(self) -> int:
        return sum(lay.params[k].size for _, lay, k in self.named_params())

    # -------------------------------------------------------------- passes

    def forward(self, x, train=False):
        cfg = self.config
        if x.ndim != 4 or tuple(x.shape[1:]) != cfg.input_shape:
            raise ValueError(f"input shape {tuple(x.shape[1:])} does not match network input {cfg.input_shape}")
        out = np.asarray(x, dtype=self.dtype)
        # overflow is caught by the explicit check, which names the layer
        with np.errstate(over="ignore", invalid="ignore"):
            for i, lay in enumerate(self.layers):
                out = lay.forward(out, train)
                if not np.isfinite(out).all():
                    raise NumericalError(f"non-finite activation after layer {i} ({lay!r})")
        return out

    def backward(self, dout):
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(len(self.layers) - 1, -1, -1):
                lay = self.layers[i]
                dout = lay.backward(dout)
                for key, g in lay.grads.items():
                    if not np.isfinite(g).all():
                        raise NumericalError(f"non-finite gradient for layer {i} ({lay!r}) parameter {key}")
        return dout

    def loss_and_grads(self, x, targets, l2=0.0):
        """MSE over batch and outputs plus ``l2 * sum(W^2)``; fills gradients.

        Returns ``(loss, mse)``.
        """
        pred = self.forward(x, train=True)
        diff = pred - np.asarray(targets, dtype=self.dtype)
        with np.errstate(over="ignore"):
            mse = float(np.mean(diff**2))
        self.backward(2.0 * diff / diff.size)
        reg = 0.0
        if l2:
            for _, lay, k in self.named_params():
                if k in DECAYED:
                    w = lay.params[k]
                    reg += float(np.sum(w * w))
                    lay.grads[k] = lay.grads[k] + 2.0 * l2 * w
        return mse + l2 * reg, mse

    def predict_normalized(self, x, batch_size=256):
        outs = [self.forward(x[i : i + batch_size], train=False) for i in range(0, len(x), batch_size)]
        return np.concatenate(outs, axis=0)

    def __repr__(self):
        body = "\n  ".join(repr(l) for l in self.layers)
        return f"Network(\n  {body}\n)"
