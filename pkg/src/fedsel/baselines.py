"""Competitor update rules: the flat solution, the compressed solution, and
the non-private transmission variants.

The flat solution perturbs one uniformly sampled coordinate with the whole
round budget and rescales by d for unbiasedness. The compressed solution
projects the gradient to q dimensions through a shared Gaussian matrix,
perturbs one projected coordinate, and the server maps the aggregated q-space
mean back with the pseudo-inverse. Both reuse the same perturbation backends
as the two-stage pipeline, so runs differ only in how a dimension is chosen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .client import SparseUpdate
from .perturbation import clip
from .selection import rank_abs

NP_MODES = ("full", "random", "topk")


@dataclass(frozen=True)
class ProjectionMatrix:
    """Public random projection shared by all clients and the server."""

    phi: np.ndarray
    pinv: np.ndarray

    @classmethod
    def gaussian(cls, d: int, q: int, rng: np.random.Generator) -> "ProjectionMatrix":
        """Draw a d x q matrix with N(0, 1/q) entries and precompute its pseudo-inverse."""
        if not 1 <= q <= d:
            raise ValueError(f"need 1 <= q <= d, got q={q}, d={d}")
        phi = rng.normal(0.0, 1.0 / np.sqrt(q), size=(d, q))
        return cls(phi=phi, pinv=np.linalg.pinv(phi, rcond=1e-10))

    @property
    def q(self) -> int:
        return self.phi.shape[1]

    def recover(self, mean_projected: np.ndarray) -> np.ndarray:
        """Map an aggregated q-space mean back into model space."""
        return self.pinv.T @ mean_projected


def flat_update(g: np.ndarray, perturber, rng: np.random.Generator) -> SparseUpdate:
    """Perturb one uniformly sampled coordinate with the full round budget.

    The d-fold unbiasedness rescaling is applied at aggregation time, not to
    the transmitted value.
    """
    j = int(rng.integers(g.shape[0]))
    return SparseUpdate(j, perturber.perturb(clip(g[j]), rng))


def compressed_update(
    g: np.ndarray, proj: ProjectionMatrix, perturber, rng: np.random.Generator
) -> SparseUpdate:
    """Project the gradient to q dimensions and perturb one of them.

    The returned index lives in q-space; aggregation happens there before the
    pseudo-inverse recovery.
    """
    projected = g @ proj.phi
    j = int(rng.integers(proj.q))
    return SparseUpdate(j, perturber.perturb(clip(projected[j]), rng))


def np_update(g: np.ndarray, mode: str, k: int = 1, rng: np.random.Generator | None = None) -> np.ndarray:
    """Non-private transmission: the full gradient, one rescaled random
    coordinate, or the true top-k coordinates by magnitude (unscaled)."""
    g = np.asarray(g, dtype=np.float64)
    d = g.shape[0]
    if mode == "full":
        return g.copy()
    if mode == "random":
        if rng is None:
            raise ValueError("random mode needs an rng")
        out = np.zeros(d)
        j = int(rng.integers(d))
        out[j] = d * g[j]
        return out
    if mode == "topk":
        out = np.zeros(d)
        top = rank_abs(g, k).top_indices
        out[top] = g[top]
        return out
    raise ValueError(f"unknown np mode {mode!r}; valid: {', '.join(NP_MODES)}")
