"""Elementwise activations and their exact derivatives."""

import numpy as np


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    # split by sign so the exponent never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(x):
    return np.tanh(x)


def softmax(x):
    """Row-stable softmax over the last axis."""
    shifted = x - np.max(x, axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / np.sum(ex, axis=-1, keepdims=True)


def _d_identity(grad, x, y):
    return grad


def _d_relu(grad, x, y):
    return grad * (x > 0)


def _d_sigmoid(grad, x, y):
    return grad * y * (1.0 - y)


def _d_tanh(grad, x, y):
    return grad * (1.0 - y * y)


def _d_softmax(grad, x, y):
    # Jacobian-vector product: dz = y * (g - <g, y>)
    dot = np.sum(grad * y, axis=-1, keepdims=True)
    return y * (grad - dot)


ACTIVATIONS = {
    "identity": (lambda x: x, _d_identity),
    "relu": (relu, _d_relu),
    "sigmoid": (sigmoid, _d_sigmoid),
    "tanh": (tanh, _d_tanh),
    "softmax": (softmax, _d_softmax),
}


def activation(kind: str):
    """Return (forward, backward) for a named activation."""
    try:
        return ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(
            f"unknown activation {kind!r}; choose from {sorted(ACTIVATIONS)}"
        ) from None
