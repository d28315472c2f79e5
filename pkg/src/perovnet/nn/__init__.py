"""From-scratch convolutional regression network."""

from .layers import (
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
from .modelfile import ModelFileError, load_model, save_model
from .network import Network, NetworkConfig
from .train import (
    DivergenceError,
    History,
    TrainConfig,
    TrainedModel,
    predict,
    predict_normalized,
    sgd_step,
    train,
)
