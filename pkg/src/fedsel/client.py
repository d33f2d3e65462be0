"""The per-client update pipeline: gradient, accumulation, private selection,
momentum, clipping, value perturbation, and residual reset.

Untransmitted gradient coordinates are never discarded: they accumulate in a
per-client residual vector and stay there until their dimension wins a
selection round. Only the selected coordinate is reset, and only after its
(clipped, perturbed) value has been produced.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .budget import BudgetLedger, PrivacyBudget
from .models import ModelState, gradient_fn
from .perturbation import clip, make_perturber
from .selection import select_index


@dataclass
class ResidualState:
    """Accumulated delayed gradients, plus the previous round's snapshot.

    ``r_prev`` holds the residual as it was before this round's gradient was
    added; the momentum term reads the selected coordinate from it.
    """

    r: np.ndarray
    r_prev: np.ndarray

    @classmethod
    def zeros(cls, d: int) -> "ResidualState":
        return cls(r=np.zeros(d), r_prev=np.zeros(d))


@dataclass(frozen=True)
class SparseUpdate:
    """One client's transmission: a (dimension, perturbed value) pair or bottom."""

    index: int | None
    value: float | None

    def __post_init__(self) -> None:
        if (self.index is None) != (self.value is None):
            raise ValueError("index and value must be both present or both absent")

    @property
    def is_bottom(self) -> bool:
        return self.index is None


@dataclass
class ClientConfig:
    """Static per-client parameters shared by every local update in a run.

    ``eps_select`` / ``eps_value`` default to the budget's per-stage split;
    the control variant overrides ``eps_value`` with the full round budget.
    """

    eta: float
    k: int
    budget: PrivacyBudget
    selection: str = "ps"
    perturbation: str = "pm"
    model: str = "logistic"
    eps_select: float = None  # type: ignore[assignment]
    eps_value: float = None  # type: ignore[assignment]
    grad_fn: object = field(init=False, repr=False)
    perturber: object = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.eta < 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if self.eps_select is None:
            self.eps_select = self.budget.epsilon_select
        if self.eps_value is None:
            self.eps_value = self.budget.epsilon_value
        self.grad_fn = gradient_fn(self.model)
        self.perturber = make_perturber(self.perturbation, self.eps_value)

    @property
    def round_spend(self) -> float:
        return self.eps_select + self.eps_value


def accumulate(state: ResidualState, g: np.ndarray) -> ResidualState:
    """Add a raw gradient into the residual, keeping the pre-round snapshot."""
    g = np.asarray(g, dtype=np.float64)
    if g.shape != state.r.shape:
        raise ValueError(f"gradient shape {g.shape} != residual shape {state.r.shape}")
    state.r_prev = state.r.copy()
    state.r = state.r + g
    return state


def local_update(
    model: ModelState,
    x: np.ndarray,
    y: int,
    state: ResidualState,
    cfg: ClientConfig,
    rng: np.random.Generator,
    ledger: BudgetLedger | None = None,
    client: int = 0,
    epoch: int = 1,
) -> tuple[SparseUpdate, ResidualState]:
    """Run one private local round and return the transmission.

    Order: gradient -> accumulate -> select j (eps_select) -> momentum ->
    clip -> perturb (eps_value) -> reset the transmitted coordinate. On a
    bottom outcome the residual is retained untouched, but the full round
    budget is still charged — budget is spent by running the mechanisms, not
    by what they return.
    """
    g = cfg.grad_fn(model, x, y)
    accumulate(state, g)
    j = select_index(state.r, cfg.k, cfg.eps_select, cfg.selection, rng)
    if ledger is not None:
        ledger.record_spend(client, epoch, cfg.round_spend)
    if j is None:
        return SparseUpdate(None, None), state
    s_j = state.r[j] + cfg.eta * state.r_prev[j]
    value = cfg.perturber.perturb(clip(s_j), rng)
    state.r[j] = 0.0
    return SparseUpdate(j, value), state
