"""scikit-learn style front end for the private federated trainer.

``FedSGDClassifier`` treats each training row as one simulated client and
runs the configured solution (two-stage private pipeline by default) to fit a
linear binary classifier. It follows the estimator protocol — ``get_params``
/ ``set_params``, ``fit`` / ``predict`` / ``score`` — so it composes with
model selection and pipeline tooling.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Dataset
from .models import ModelState, predict as predict_signs
from .server import TrainingConfig, train


class FedSGDClassifier(BaseEstimator, ClassifierMixin):
    """Binary linear classifier trained by locally private federated SGD.

    Features must already lie in [-1, 1]: the privacy mechanisms clip to that
    range, so unscaled inputs would silently distort gradients. Use the data
    loading helpers (or any scaler) first.
    """

    def __init__(
        self,
        solution: str = "fedsel",
        selection: str = "ps",
        perturbation: str = "pm",
        model: str = "logistic",
        epsilon: float = 2.0,
        epochs: int = 1,
        mu: float | str = 0.1,
        theta: float = 0.2,
        hpf_constant: float = 1.0,
        k_fraction: float = 0.1,
        eta: float = 0.9,
        alpha: float = 0.1,
        l2: float = 1e-4,
        m_fraction: float = 0.01,
        batch_size: int | None = None,
        compression_ratio: float = 0.1,
        eval_every: int = 1,
        jobs: int = 1,
        seed: int = 0,
    ):
        self.solution = solution
        self.selection = selection
        self.perturbation = perturbation
        self.model = model
        self.epsilon = epsilon
        self.epochs = epochs
        self.mu = mu
        self.theta = theta
        self.hpf_constant = hpf_constant
        self.k_fraction = k_fraction
        self.eta = eta
        self.alpha = alpha
        self.l2 = l2
        self.m_fraction = m_fraction
        self.batch_size = batch_size
        self.compression_ratio = compression_ratio
        self.eval_every = eval_every
        self.jobs = jobs
        self.seed = seed

    def _training_config(self) -> TrainingConfig:
        return TrainingConfig(
            solution=self.solution,
            selection=self.selection,
            perturbation=self.perturbation,
            model=self.model,
            epsilon=self.epsilon,
            epochs=self.epochs,
            mu=self.mu,
            theta=self.theta,
            hpf_constant=self.hpf_constant,
            k_fraction=self.k_fraction,
            eta=self.eta,
            alpha=self.alpha,
            l2=self.l2,
            m_fraction=self.m_fraction,
            batch_size=self.batch_size,
            compression_ratio=self.compression_ratio,
            eval_every=self.eval_every,
            jobs=self.jobs,
            seed=self.seed,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        if np.abs(X).max(initial=0.0) > 1.0 + 1e-9:
            raise ValueError("features must lie in [-1, 1]; scale them before fitting")
        self.classes_ = unique_labels(y)
        if self.classes_.shape[0] != 2:
            raise ValueError(f"binary classification only; got classes {self.classes_}")
        signed = np.where(y == self.classes_[1], 1, -1)
        result = train(self._training_config(), Dataset(X, signed, name="fit"))
        self.coef_ = result.model.w
        self.result_ = result
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        return X @ self.coef_

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        signs = predict_signs(ModelState(w=self.coef_), X)
        return np.where(signs > 0, self.classes_[1], self.classes_[0])
