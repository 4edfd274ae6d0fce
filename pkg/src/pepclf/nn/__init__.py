"""Minimal numpy-only neural network core.

Float64 throughout; every backward pass is exact and is verified against
central finite differences by the gradcheck module.
"""

from .activations import relu, sigmoid, softmax, tanh
from .layers import (
    BatchNorm,
    Conv1D,
    Dense,
    Dropout,
    Embedding,
    GlobalMaxPool1D,
    MaxPool1D,
    Parameter,
    ShapeError,
)
from .recurrent import LSTM, BiLSTM
from .losses import binary_cross_entropy, categorical_cross_entropy, loss
from .optim import Adam
from .gradcheck import (
    GradCheckError,
    max_relative_error,
    run_architecture_checks,
    run_layer_checks,
)

__all__ = [
    "Adam",
    "BatchNorm",
    "BiLSTM",
    "Conv1D",
    "Dense",
    "Dropout",
    "Embedding",
    "GlobalMaxPool1D",
    "GradCheckError",
    "LSTM",
    "MaxPool1D",
    "Parameter",
    "ShapeError",
    "binary_cross_entropy",
    "categorical_cross_entropy",
    "loss",
    "max_relative_error",
    "relu",
    "run_architecture_checks",
    "run_layer_checks",
    "sigmoid",
    "softmax",
    "tanh",
]
