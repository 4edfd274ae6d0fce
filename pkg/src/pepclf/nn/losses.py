"""Cross-entropy losses returning (scalar loss, gradient wrt predictions).

Predictions are clamped to [eps, 1 - eps] with eps = 1e-7 before the log;
the returned gradient is exactly the derivative of the clamped loss, so it
vanishes where the clamp is active.
"""

import numpy as np

from .layers import ShapeError

EPS = 1e-7


def binary_cross_entropy(pred, target):
    """Mean of -[y log p + (1 - y) log(1 - p)] over the batch."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(
            f"prediction shape {pred.shape} != target shape {target.shape}"
        )
    p = np.clip(pred, EPS, 1.0 - EPS)
    loss = -np.sum(target * np.log(p) + (1.0 - target) * np.log(1.0 - p)) / p.size
    # gradient of the clamped loss; zero where the clamp is active
    inside = (pred > EPS) & (pred < 1.0 - EPS)
    grad = np.where(inside, (p - target) / (p * (1.0 - p)), 0.0) / p.size
    return loss, grad


def categorical_cross_entropy(pred, target):
    """Mean over the batch of -sum_k y_k log p_k for one-hot targets."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(
            f"prediction shape {pred.shape} != target shape {target.shape}"
        )
    n = pred.shape[0]
    p = np.clip(pred, EPS, 1.0 - EPS)
    loss = -np.sum(target * np.log(p)) / n
    inside = (pred > EPS) & (pred < 1.0 - EPS)
    grad = np.where(inside, -target / p, 0.0) / n
    return loss, grad


LOSSES = {
    "binary_ce": binary_cross_entropy,
    "categorical_ce": categorical_cross_entropy,
}


def loss(pred, target, kind: str):
    try:
        fn = LOSSES[kind]
    except KeyError:
        raise ValueError(
            f"unknown loss {kind!r}; choose from {sorted(LOSSES)}"
        ) from None
    return fn(pred, target)
