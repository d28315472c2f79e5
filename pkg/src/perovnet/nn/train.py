"""SGD with momentum, step learning-rate decay and the training loop."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..dataset import denormalize_targets
from ..sampling import ThicknessBox
from .layers import NumericalError
from .network import Network, NetworkConfig


class DivergenceError(NumericalError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    initial_learning_rate: float = 0.01
    momentum: float = 0.9
    mini_batch_size: int = 32
    lr_drop_factor: float = 0.5
    lr_drop_period: int = 20
    l2_coefficient: float = 1e-4
    epoch_count: int = 30
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if not self.initial_learning_rate > 0:
            raise ValueError("initial_learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.mini_batch_size < 1 or self.lr_drop_period < 1 or self.epoch_count < 1:
            raise ValueError("mini_batch_size, lr_drop_period and epoch_count must be >= 1")
        if not 0 < self.lr_drop_factor <= 1:
            raise ValueError("lr_drop_factor must lie in (0, 1]")
        if self.l2_coefficient < 0:
            raise ValueError("l2_coefficient must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def to_dict(self):
        return asdict(self)

    def learning_rate(self, epoch: int) -> float:
        """Rate for zero-based ``epoch``: lr0 * factor ** (epoch // period)."""
        return self.initial_learning_rate * self.lr_drop_factor ** (epoch // self.lr_drop_period)


@dataclass
class History:
    learning_rate: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_rmse: list = field(default_factory=list)  # overall, normalized units
    val_rmse_nm: list = field(default_factory=list)  # overall, nm

    def __len__(self):
        return len(self.train_loss)

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainedModel:
    network: Network
    box: ThicknessBox
    train_config: TrainConfig | None = None
    history: History = field(default_factory=History)

    @property
    def config(self) -> NetworkConfig:
        return self.network.config


def sgd_step(params, grads, velocity, lr, momentum):
    """In-place momentum update: ``v = momentum*v - lr*g``; ``p = p + v``."""
    for p, g, v in zip(params, grads, velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, velocity {v.shape}")
        v *= momentum
        v -= lr * g
        p += v
    return params, velocity


def overall_rmse_normalized(pred, targets):
    """Euclidean norm of per-output RMSEs."""
    per = np.sqrt(np.mean((np.asarray(pred, float) - targets) ** 2, axis=0))
    return float(np.sqrt(np.sum(per**2)))


def train(
    net_config: NetworkConfig,
    train_config: TrainConfig,
    train_images,
    train_targets,
    box: ThicknessBox,
    val_images=None,
    val_targets=None,
    callback=None,
) -> TrainedModel:
    """Fit a network on normalized targets; deterministic given the seed.

    ``callback(epoch, model)`` runs after every epoch; it may raise to stop
    training (the tuner uses this for its time budget).
    """
    tc = train_config
    n = len(train_targets)
    if n == 0:
        raise ValueError("training set is empty")
    if tc.mini_batch_size > n:
        raise ValueError(f"mini_batch_size {tc.mini_batch_size} exceeds training-set size {n}")
    dtype = np.dtype(tc.dtype)
    net = Network(net_config, seed=tc.seed, dtype=dtype)
    model = TrainedModel(net, box, tc)
    x_all = np.asarray(train_images, dtype=dtype)
    y_all = np.asarray(train_targets, dtype=dtype)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([tc.seed, 1]))
    named = net.named_params()
    velocity = [np.zeros_like(lay.params[k]) for _, lay, k in named]
    upper = np.array(box.upper)

    for epoch in range(tc.epoch_count):
        lr = tc.learning_rate(epoch)
        order = shuffle_rng.permutation(n)
        losses = []
        for bi, start in enumerate(range(0, n, tc.mini_batch_size)):
            idx = order[start : start + tc.mini_batch_size]
            try:
                loss, mse = net.loss_and_grads(x_all[idx], y_all[idx], tc.l2_coefficient)
            except NumericalError as exc:
                raise DivergenceError(f"training diverged at epoch {epoch}, batch {bi}: {exc}") from exc
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {bi}")
            params = [lay.params[k] for _, lay, k in named]
            grads = [lay.grads[k] for _, lay, k in named]
            sgd_step(params, grads, velocity, lr, tc.momentum)
            losses.append(mse * len(idx))
        model.history.learning_rate.append(lr)
        model.history.train_loss.append(float(np.sum(losses) / n))
        if val_images is not None and len(val_targets):
            try:
                pred = net.predict_normalized(np.asarray(val_images, dtype=dtype))
            except NumericalError as exc:
                raise DivergenceError(f"validation diverged at epoch {epoch}: {exc}") from exc
            model.history.val_rmse.append(overall_rmse_normalized(pred, val_targets))
            model.history.val_rmse_nm.append(
                overall_rmse_normalized(pred * upper, np.asarray(val_targets) * upper)
            )
        if callback is not None:
            callback(epoch, model)
    return model


def predict(model: TrainedModel, images) -> np.ndarray:
    """Thickness vectors in nm for a batch of images.

    Records are run one at a time: batched BLAS calls round differently
    with the batch size, and a record's prediction should not depend on
    which other records it was submitted with.
    """
    x = np.asarray(images, dtype=model.network.dtype)
    if x.ndim == 3:
        x = x[None]
    out = model.network.predict_normalized(x, batch_size=1)
    return denormalize_targets(out, model.box)


def predict_normalized(model: TrainedModel, images) -> np.ndarray:
    x = np.asarray(images, dtype=model.network.dtype)
    return model.network.predict_normalized(x)
