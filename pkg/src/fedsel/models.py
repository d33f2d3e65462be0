"""L2-regularized logistic regression and linear SVM: losses, (sub)gradients, metrics.

Labels are ±1 and features are expected in [-1, 1], which keeps every
gradient coordinate within ``1 + l2 * max|w|`` — the regime the perturbation
stage's clipping assumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MODEL_NAMES = ("logistic", "svm")


@dataclass
class ModelState:
    """Global parameter vector plus the fixed step-size hyperparameters."""

    w: np.ndarray
    alpha: float = 0.1
    l2: float = 1e-4

    @property
    def d(self) -> int:
        return self.w.shape[0]


@dataclass(frozen=True)
class LabeledExample:
    x: np.ndarray
    y: int


def logistic_loss(model: ModelState, x, y) -> float:
    margin = y * float(np.dot(model.w, x))
    if margin >= 0:
        base = math.log1p(math.exp(-margin))
    else:
        base = -margin + math.log1p(math.exp(margin))
    return base + 0.5 * model.l2 * float(np.dot(model.w, model.w))


def logistic_gradient(model: ModelState, x, y) -> np.ndarray:
    margin = y * float(np.dot(model.w, x))
    # sigmoid(-margin), computed on the stable side
    if margin >= 0:
        s = math.exp(-margin) / (1.0 + math.exp(-margin))
    else:
        s = 1.0 / (1.0 + math.exp(margin))
    return (-y * s) * np.asarray(x, dtype=np.float64) + model.l2 * model.w


def hinge_loss(model: ModelState, x, y) -> float:
    margin = y * float(np.dot(model.w, x))
    return max(0.0, 1.0 - margin) + 0.5 * model.l2 * float(np.dot(model.w, model.w))


def hinge_gradient(model: ModelState, x, y) -> np.ndarray:
    """Hinge subgradient; at the kink the inactive branch (l2 term only) is used."""
    margin = y * float(np.dot(model.w, x))
    if 1.0 - margin > 0.0:
        return -y * np.asarray(x, dtype=np.float64) + model.l2 * model.w
    return model.l2 * model.w


_GRADIENTS = {"logistic": logistic_gradient, "svm": hinge_gradient}
_LOSSES = {"logistic": logistic_loss, "svm": hinge_loss}


def gradient_fn(name: str):
    try:
        return _GRADIENTS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; valid: {', '.join(MODEL_NAMES)}") from None


def loss_fn(name: str):
    try:
        return _LOSSES[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; valid: {', '.join(MODEL_NAMES)}") from None


def predict(model: ModelState, X) -> np.ndarray:
    """Classify rows of X by the sign of w^T x; zero scores map to +1."""
    scores = np.asarray(X, dtype=np.float64) @ model.w
    return np.where(scores >= 0.0, 1, -1)


def accuracy(model: ModelState, X, y) -> float:
    return float(np.mean(predict(model, X) == np.asarray(y)))
