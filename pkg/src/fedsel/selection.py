"""Budget-ε₁ LDP dimension selection mechanisms and the shared ranking machinery.

Three interchangeable mechanisms pick which gradient coordinate a client
transmits:

* ``exp`` — exponential mechanism over magnitude ranks; index ``j`` is drawn
  with probability proportional to ``exp(eps1 * rank_j / (d - 1))``.
* ``pe`` — perturbed encoding: randomized response flips each bit of the
  binary top-k status vector, then one index is sampled uniformly from the
  surviving support (``None`` if the support is empty).
* ``ps`` — perturbed sampling: a single biased coin decides whether to sample
  uniformly from the top-k pool or from the rest.

All three reduce to uniform sampling when ``eps1 == 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

SELECTION_MECHANISMS = ("exp", "pe", "ps")


@dataclass
class SelectionStatus:
    """Ranking of a client's accumulated vector by absolute value.

    ``order`` lists coordinate indices by ascending ``(|r_j|, j)``, so ties
    break deterministically toward the lower index. Ranks are 1-based: rank
    ``d`` is the largest magnitude. ``topk`` marks the ``k`` highest ranks.
    """

    order: np.ndarray
    k: int

    def __post_init__(self) -> None:
        d = self.order.shape[0]
        if d < 1:
            raise ValueError("status needs at least one dimension")
        if not 1 <= self.k <= d:
            raise ValueError(f"k must lie in [1, {d}], got {self.k}")

    @property
    def d(self) -> int:
        return self.order.shape[0]

    @cached_property
    def ranks(self) -> np.ndarray:
        ranks = np.empty(self.d, dtype=np.int64)
        ranks[self.order] = np.arange(1, self.d + 1)
        return ranks

    @cached_property
    def topk(self) -> np.ndarray:
        z = np.zeros(self.d, dtype=bool)
        z[self.top_indices] = True
        return z

    @property
    def top_indices(self) -> np.ndarray:
        return self.order[self.d - self.k :]

    @property
    def rest_indices(self) -> np.ndarray:
        return self.order[: self.d - self.k]

    @classmethod
    def from_ranks(cls, ranks, k: int) -> "SelectionStatus":
        """Build a status from an explicit rank permutation of 1..d."""
        ranks = np.asarray(ranks, dtype=np.int64)
        d = ranks.shape[0]
        if sorted(ranks.tolist()) != list(range(1, d + 1)):
            raise ValueError("ranks must be a permutation of 1..d")
        return cls(order=np.argsort(ranks), k=k)

    @classmethod
    def from_topk(cls, z) -> "SelectionStatus":
        """Build a status from a binary top-k vector (rank order within the
        two pools is arbitrary and irrelevant to pe/ps)."""
        z = np.asarray(z, dtype=bool)
        order = np.concatenate([np.flatnonzero(~z), np.flatnonzero(z)])
        return cls(order=order, k=int(z.sum()))


def rank_abs(r, k: int) -> SelectionStatus:
    """Rank a vector by ascending absolute value with index tie-break."""
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 1 or r.shape[0] < 1:
        raise ValueError("r must be a non-empty 1-d vector")
    order = np.argsort(np.abs(r), kind="stable")
    return SelectionStatus(order=order, k=k)


def top_k_count(d: int, fraction: float = 0.1) -> int:
    """Resolve a top-k fraction of ``d`` into a count, rounded up, at least 1."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"k fraction must lie in (0, 1], got {fraction}")
    return min(d, max(1, math.ceil(fraction * d)))


def exp_select(status: SelectionStatus, epsilon1: float, rng: np.random.Generator) -> int:
    """Sample an index with probability proportional to exp(eps1 * rank / (d-1))."""
    d = status.d
    if d < 2:
        raise ValueError("exp selection needs d >= 2")
    if epsilon1 < 0:
        raise ValueError(f"epsilon1 must be >= 0, got {epsilon1}")
    weights = np.exp(epsilon1 * status.ranks / (d - 1))
    return int(rng.choice(d, p=weights / weights.sum()))


def pe_keep_probability(epsilon1: float) -> float:
    """Probability that randomized response retains a status bit."""
    return math.exp(epsilon1) / (math.exp(epsilon1) + 1.0)


def pe_select(status: SelectionStatus, epsilon1: float, rng: np.random.Generator) -> int | None:
    """Flip every status bit with probability 1-p, then sample the support.

    Returns ``None`` when every bit of the perturbed vector is zero; the
    server treats that as a zero-vector contribution.
    """
    if epsilon1 < 0:
        raise ValueError(f"epsilon1 must be >= 0, got {epsilon1}")
    p = pe_keep_probability(epsilon1)
    flipped = rng.random(status.d) >= p
    support = np.flatnonzero(status.topk ^ flipped)
    if support.size == 0:
        return None
    return int(support[rng.integers(support.size)])


def ps_top_probability(epsilon1: float, d: int, k: int) -> float:
    """Probability of sampling from the top-k pool rather than the rest."""
    ek = math.exp(epsilon1) * k
    return ek / (d - k + ek)


def ps_select(status: SelectionStatus, epsilon1: float, rng: np.random.Generator) -> int:
    """Draw from the top-k pool with the biased probability, else the rest."""
    d, k = status.d, status.k
    if k >= d:
        raise ValueError("ps selection needs k < d (non-top-k pool would be empty)")
    if epsilon1 < 0:
        raise ValueError(f"epsilon1 must be >= 0, got {epsilon1}")
    if rng.random() < ps_top_probability(epsilon1, d, k):
        return int(status.top_indices[rng.integers(k)])
    return int(status.rest_indices[rng.integers(d - k)])


_MECHANISMS = {"exp": exp_select, "pe": pe_select, "ps": ps_select}


def select_index(
    r, k: int, epsilon1: float, mechanism: str, rng: np.random.Generator
) -> int | None:
    """Rank ``r`` and run the named selection mechanism on it."""
    try:
        select = _MECHANISMS[mechanism]
    except KeyError:
        raise ValueError(
            f"unknown selection mechanism {mechanism!r}; valid: {', '.join(SELECTION_MECHANISMS)}"
        ) from None
    return select(rank_abs(r, k), epsilon1, rng)
