"""Dataset plumbing: synthetic generation, sparse index:value file I/O,
feature scaling, and cross-validation splits.

Every dataset handed to the trainer has features in [-1, 1] and labels in
{-1, +1}; the loader and the generator both enforce that contract.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np


@dataclass
class Dataset:
    """Immutable feature matrix + labels; one row per client record.

    ``w_true`` carries the generating weight vector for synthetic data (None
    for loaded files); tests use it to audit the generator.
    """

    X: np.ndarray
    y: np.ndarray
    name: str = "dataset"
    w_true: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise ValueError("X must be (n, d) and y must be (n,)")
        if not set(np.unique(self.y)).issubset({-1, 1}):
            raise ValueError("labels must be -1 or +1")

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.X.shape[0]

    def subset(self, indices) -> "Dataset":
        return Dataset(self.X[indices], self.y[indices], name=self.name, w_true=self.w_true)


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs for the linear-classification generator.

    ``c1`` controls sparsity: a fraction ``c1`` of the ground-truth weight
    coordinates are informative (at least one). ``c2`` controls label purity:
    each label is flipped independently with probability ``1 - c2``.
    """

    n: int
    d: int
    c1: float = 0.01
    c2: float = 0.9
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be positive")
        if not 0.0 < self.c1 <= 1.0:
            raise ValueError(f"c1 must lie in (0, 1], got {self.c1}")
        if not 0.0 < self.c2 <= 1.0:
            raise ValueError(f"c2 must lie in (0, 1], got {self.c2}")


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Generate uniform [-1, 1] features and noisy linear labels.

    A ground-truth weight vector with ``max(1, floor(c1 * d))`` nonzero
    coordinates (unit magnitude, random sign) defines clean labels
    ``sign(w* . x)``; each is then flipped with probability ``1 - c2``.
    """
    rng = np.random.default_rng(spec.seed)
    n_informative = max(1, math.floor(spec.c1 * spec.d))
    w_true = np.zeros(spec.d)
    support = rng.choice(spec.d, size=n_informative, replace=False)
    w_true[support] = rng.choice([-1.0, 1.0], size=n_informative)
    X = rng.uniform(-1.0, 1.0, size=(spec.n, spec.d))
    y = np.where(X @ w_true >= 0.0, 1, -1)
    flips = rng.random(spec.n) < (1.0 - spec.c2)
    y = np.where(flips, -y, y)
    return Dataset(X, y, name=f"syn-{spec.d}-{spec.c1}-{spec.c2}", w_true=w_true)


def _scale_columns(X: np.ndarray) -> np.ndarray:
    """Min-max scale each column to [-1, 1]; constant columns keep their
    value (clamped) so already-normalized data passes through unchanged."""
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    spread = hi - lo
    varying = spread > 0
    out = X.copy()
    out[:, varying] = -1.0 + 2.0 * (X[:, varying] - lo[varying]) / spread[varying]
    out[:, ~varying] = np.clip(X[:, ~varying], -1.0, 1.0)
    return out


def load_sparse_text(path, d: int | None = None, scale: bool = True) -> Dataset:
    """Load a sparse ``label idx:value`` text file (1-based indices).

    Labels > 0 map to +1, everything else (including 0) to -1. Features are
    densified and min-max scaled per column to [-1, 1] unless ``scale`` is
    off. Malformed lines are reported with their line number.
    """
    labels: list[int] = []
    rows: list[list[tuple[int, float]]] = []
    max_index = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            try:
                raw_label = float(tokens[0])
                pairs = []
                for token in tokens[1:]:
                    idx_text, value_text = token.split(":", 1)
                    idx = int(idx_text)
                    if idx < 1:
                        raise ValueError("indices are 1-based")
                    pairs.append((idx, float(value_text)))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed line ({exc})") from None
            labels.append(1 if raw_label > 0 else -1)
            rows.append(pairs)
            if pairs:
                max_index = max(max_index, max(idx for idx, _ in pairs))
    if not rows:
        raise ValueError(f"{path}: no examples found")
    if d is None:
        d = max_index
    elif max_index > d:
        raise ValueError(f"{path}: feature index {max_index} exceeds declared dimension {d}")
    if d < 1:
        raise ValueError(f"{path}: no feature indices found and no dimension declared")
    X = np.zeros((len(rows), d))
    for i, pairs in enumerate(rows):
        for idx, value in pairs:
            X[i, idx - 1] = value
    if scale:
        X = _scale_columns(X)
    return Dataset(X, np.asarray(labels), name=os.path.basename(str(path)))


def save_sparse_text(dataset: Dataset, path) -> None:
    """Write a dataset in the sparse ``label idx:value`` format (1-based)."""
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(len(dataset)):
            row = dataset.X[i]
            pairs = " ".join(f"{j + 1}:{float(row[j])!r}" for j in np.flatnonzero(row != 0.0))
            label = "+1" if dataset.y[i] > 0 else "-1"
            fh.write(f"{label} {pairs}\n".rstrip() + "\n")


def kfold_split(
    n: int, folds: int, repeats: int = 1, seed: int = 0
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Repeated k-fold partitions: per repeat, a fresh shuffle is cut into
    ``folds`` disjoint test folds that cover all indices."""
    if folds < 2:
        raise ValueError(f"folds must be >= 2, got {folds}")
    if folds > n:
        raise ValueError(f"folds ({folds}) cannot exceed n ({n})")
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    splits = []
    for repeat in range(repeats):
        rng = np.random.default_rng(np.random.SeedSequence((seed, repeat)))
        perm = rng.permutation(n)
        for chunk in np.array_split(perm, folds):
            test = np.sort(chunk)
            train = np.setdiff1d(perm, chunk)
            splits.append((train, test))
    return splits


def parse_dataset_spec(spec: str, scale: bool = True) -> Dataset:
    """Resolve a dataset argument: ``syn:<d>,<n>,<c1>,<c2>[,<seed>]`` or a
    path to a sparse text file."""
    if spec.startswith("syn:"):
        fields = spec[len("syn:") :].split(",")
        if len(fields) not in (4, 5):
            raise ValueError(
                f"bad synthetic spec {spec!r}; expected syn:<d>,<n>,<c1>,<c2>[,<seed>]"
            )
        try:
            d, n = int(fields[0]), int(fields[1])
            c1, c2 = float(fields[2]), float(fields[3])
            seed = int(fields[4]) if len(fields) == 5 else 0
        except ValueError:
            raise ValueError(f"bad synthetic spec {spec!r}: fields must be numeric") from None
        return generate_synthetic(SyntheticSpec(n=n, d=d, c1=c1, c2=c2, seed=seed))
    if not os.path.exists(spec):
        raise ValueError(f"dataset file not found: {spec}")
    return load_sparse_text(spec, scale=scale)
