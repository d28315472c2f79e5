"""Layer fixtures and training recipes shared by the unit and acceptance suites."""

import numpy as np

from oracles import separated_input
from perovnet.nn import NetworkConfig, TrainConfig
from perovnet.materials import constant
from perovnet.nn.layers import AvgPool2D, BatchNorm2D, Conv2D, Dense, Dropout, Flatten, MaxPool2D, ReLU
from perovnet.tmm import Layer, LayerStack

# four-conv network memorizing the 10 training records of the 12-record set
OVERFIT_NET = NetworkConfig(arch="first")
OVERFIT_TRAIN = dict(
    initial_learning_rate=0.0125,
    momentum=0.93,
    mini_batch_size=10,
    lr_drop_factor=0.5,
    lr_drop_period=125,
    l2_coefficient=0.0,
    epoch_count=500,
)
OVERFIT_SEEDS = range(5)

# desk-scale learning run: 1500/250/250 Sobol records, two-deep blocks
DESK_FRACTIONS = (0.75, 0.125, 0.125)
DESK_NET = NetworkConfig(arch="block", section_depth=2)
DESK_TRAIN = dict(
    initial_learning_rate=0.01,
    momentum=0.9,
    mini_batch_size=32,
    lr_drop_factor=0.5,
    lr_drop_period=20,
    l2_coefficient=1e-4,
    epoch_count=60,
)


def overfit_config(seed):
    return TrainConfig(**OVERFIT_TRAIN, seed=seed)


def window_means(values, width=10):
    v = np.asarray(values, dtype=float)
    return v[: len(v) // width * width].reshape(-1, width).mean(axis=1)


def make_layer(kind, rng):
    """A float64 layer of ``kind`` plus a matching random input."""
    n, c, h, w = (int(v) for v in rng.integers([1, 1, 2, 2], [4, 4, 7, 7]))
    if kind == "conv":
        k = int(rng.choice([1, 3, 5]))
        lay = Conv2D(c, int(rng.integers(1, 4)), k, rng)
        lay.params["b"] = rng.standard_normal(lay.params["b"].shape)
        return lay, rng.standard_normal((n, c, h, w))
    if kind == "batchnorm":
        lay = BatchNorm2D(c)
        lay.params["gamma"] = rng.uniform(0.5, 2, c)
        lay.params["beta"] = rng.standard_normal(c)
        return lay, rng.standard_normal((max(n, 2), c, h, w))
    if kind == "relu":
        return ReLU(), separated_input(rng, (n, c, h, w))
    if kind == "maxpool":
        return MaxPool2D(), separated_input(rng, (n, c, h, w))
    if kind == "avgpool":
        return AvgPool2D(), rng.standard_normal((n, c, h, w))
    if kind == "dropout":
        lay = Dropout(0.3, rng)
        x = rng.standard_normal((n, c, h, w))
        lay.fixed_mask = rng.random(x.shape) >= 0.3
        return lay, x
    if kind == "flatten":
        return Flatten(), rng.standard_normal((n, c, h, w))
    if kind == "dense":
        d_in, d_out = int(rng.integers(1, 12)), int(rng.integers(1, 8))
        lay = Dense(d_in, d_out, rng)
        lay.params["b"] = rng.standard_normal(d_out)
        return lay, rng.standard_normal((n, d_in))
    raise ValueError(kind)


LAYER_KINDS = ["conv", "batchnorm", "relu", "maxpool", "avgpool", "dropout", "flatten", "dense"]


def random_stack(rng, n_layers=None):
    """Up to seven constant-index layers, some lossy, between air and a random substrate."""
    n_layers = n_layers or int(rng.integers(1, 8))
    layers = [
        Layer(constant(f"m{i}", rng.uniform(1.2, 3.5), rng.choice([0.0, rng.uniform(0, 1.5)])), rng.uniform(5, 400))
        for i in range(n_layers)
    ]
    return LayerStack(layers, constant("air", 1.0), constant("out", rng.uniform(1.0, 2.0)), int(rng.integers(n_layers)))
