"""Locally differentially private federated SGD with private top-k dimension selection.

The package simulates federated SGD where every client privatizes its update
in two stages before transmission: a budget-ε₁ dimension selection (exp / pe /
ps mechanisms) followed by a budget-ε₂ value perturbation (duchi / pm / hm
backends). Flat, compressed and non-private baselines share the same harness,
and an audit suite machine-checks the privacy guarantees.
"""

from .budget import BudgetLedger, BudgetOverspendError, PrivacyBudget, allocate_budget
from .client import ClientConfig, ResidualState, SparseUpdate, accumulate, local_update
from .data import Dataset, SyntheticSpec, generate_synthetic, kfold_split, load_sparse_text
from .estimator import FedSGDClassifier
from .models import ModelState, accuracy, predict
from .perturbation import DuchiPerturber, HybridPerturber, PiecewisePerturber, clip, make_perturber
from .selection import SelectionStatus, exp_select, pe_select, ps_select, rank_abs, select_index
from .server import RoundMetrics, TrainingConfig, TrainingResult, aggregate, global_step, hyper_parameters_free, train

__all__ = [
    "BudgetLedger",
    "BudgetOverspendError",
    "ClientConfig",
    "Dataset",
    "DuchiPerturber",
    "FedSGDClassifier",
    "HybridPerturber",
    "ModelState",
    "PiecewisePerturber",
    "PrivacyBudget",
    "ResidualState",
    "RoundMetrics",
    "SelectionStatus",
    "SparseUpdate",
    "SyntheticSpec",
    "TrainingConfig",
    "TrainingResult",
    "accumulate",
    "accuracy",
    "aggregate",
    "allocate_budget",
    "clip",
    "exp_select",
    "generate_synthetic",
    "global_step",
    "hyper_parameters_free",
    "kfold_split",
    "load_sparse_text",
    "local_update",
    "make_perturber",
    "pe_select",
    "predict",
    "ps_select",
    "rank_abs",
    "select_index",
    "train",
]

__version__ = "0.1.0"
