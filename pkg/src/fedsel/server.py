"""Server-side orchestration: batching, aggregation, the global step, the
hyper-parameters-free budget allocation, and the full simulated training loop.

The simulation is in-process: each dataset row plays one client. Every epoch
the clients are partitioned into batches of size m by a fresh shuffle; each
batch contributes one aggregated sparse update and one global model step.
All randomness derives from the root seed through named substreams (one for
partitioning, one for solution setup, one per client), so results are
bit-reproducible regardless of the parallelism degree.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .baselines import ProjectionMatrix, compressed_update, flat_update, np_update
from .budget import BudgetLedger, PrivacyBudget, allocate_budget
from .client import ClientConfig, ResidualState, SparseUpdate, local_update
from .data import Dataset
from .models import MODEL_NAMES, ModelState, accuracy, gradient_fn
from .perturbation import PERTURBATION_BACKENDS, make_perturber
from .selection import SELECTION_MECHANISMS, top_k_count

SOLUTIONS = ("fedsel", "flat", "compressed", "np", "np-rs", "np-k")

METRICS_COLUMNS = ("t", "epoch", "acc_train", "acc_test", "misclass", "bot_count", "wall_ms")


@dataclass(frozen=True)
class RoundMetrics:
    t: int
    epoch: int
    acc_train: float
    acc_test: float
    misclass: float
    bot_count: int
    wall_ms: float


@dataclass
class TrainingConfig:
    """Everything a run needs; defaults follow the standard experimental setup
    (k = 0.1 d, mu = 0.1, l2 = 1e-4, batches of 1% of the clients)."""

    solution: str = "fedsel"
    selection: str = "ps"
    perturbation: str = "pm"
    model: str = "logistic"
    epsilon: float = 2.0
    epochs: int = 1
    mu: float | str = 0.1  # allocation ratio, or "auto" for hyper-parameters-free
    theta: float = 0.2
    hpf_constant: float = 1.0
    k_fraction: float = 0.1
    eta: float = 0.9
    alpha: float = 0.1
    l2: float = 1e-4
    m_fraction: float = 0.01
    batch_size: int | None = None
    compression_ratio: float = 0.1
    control_full_value_budget: bool = False
    eval_every: int = 1
    jobs: int = 1
    seed: int | tuple = 0


@dataclass
class TrainingResult:
    model: ModelState
    metrics: list[RoundMetrics]
    ledger: BudgetLedger
    budget: PrivacyBudget | None
    mu: float | None
    batch_size: int


def aggregate(updates: list[SparseUpdate], d: int, m: int) -> np.ndarray:
    """Average a batch of sparse updates into a dense vector.

    Bottom updates contribute the zero vector; everything is divided by the
    full batch size m either way.
    """
    if len(updates) != m:
        raise ValueError(f"expected {m} updates, got {len(updates)}")
    s = np.zeros(d)
    for update in updates:
        if update.is_bottom:
            continue
        if not 0 <= update.index < d:
            raise ValueError(f"update index {update.index} out of range for d={d}")
        s[update.index] += update.value
    return s / m


def global_step(model: ModelState, s_tilde: np.ndarray) -> ModelState:
    """Descend: w <- w - alpha * s_tilde. The learning rate is applied here,
    never inside the clients."""
    s_tilde = np.asarray(s_tilde, dtype=np.float64)
    if s_tilde.shape != model.w.shape:
        raise ValueError(f"step shape {s_tilde.shape} != model shape {model.w.shape}")
    return replace(model, w=model.w - model.alpha * s_tilde)


def hyper_parameters_free(
    m: int, epsilon: float, d: int, theta: float = 0.2, c: float = 1.0
) -> float:
    """Pick the selection ratio automatically from the round budget.

    Reserves ``c * sqrt(d ln d / m)`` of the round budget for value
    perturbation; whatever is left funds selection, capped at the safe
    threshold theta.
    """
    if m < 1 or d < 1:
        raise ValueError("m and d must be positive")
    if epsilon <= 0:
        raise ValueError(f"round budget must be > 0, got {epsilon}")
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must lie in [0, 1], got {theta}")
    if c <= 0:
        raise ValueError(f"c must be > 0, got {c}")
    eps_value_required = c * math.sqrt(d * math.log(d) / m)
    return min(theta, max(0.0, (epsilon - eps_value_required) / epsilon))


def metrics_to_csv(metrics: list[RoundMetrics], prefix: dict[str, int] | None = None) -> str:
    """Render metrics as CSV text; optional constant prefix columns (e.g.
    repeat/fold ids) come first."""
    prefix = prefix or {}
    header = list(prefix) + list(METRICS_COLUMNS)
    lines = [",".join(header)]
    for row in metrics:
        values = [str(v) for v in prefix.values()]
        values += [
            str(row.t),
            str(row.epoch),
            repr(row.acc_train),
            repr(row.acc_test),
            repr(row.misclass),
            str(row.bot_count),
            repr(row.wall_ms),
        ]
        lines.append(",".join(values))
    return "\n".join(lines) + "\n"


def _seed_key(seed) -> tuple[int, ...]:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


def _stream(seed, *key: int) -> np.random.Generator:
    """Named substream of the root seed; identical (seed, key) pairs always
    yield identical generators, independent of creation order."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((*_seed_key(seed), *key))))


_PARTITION, _SETUP, _CLIENT = 0, 1, 2


class _FedSelRun:
    """Two-stage pipeline: per-client residuals, private selection, perturbation."""

    def __init__(self, d, m, client_cfg: ClientConfig, ledger: BudgetLedger):
        self.d, self.m = d, m
        self.cfg = client_cfg
        self.ledger = ledger
        self._residuals: dict[int, ResidualState] = {}

    def update(self, cid, model, x, y, rng, epoch) -> SparseUpdate:
        state = self._residuals.get(cid)
        if state is None:
            state = self._residuals[cid] = ResidualState.zeros(self.d)
        update, _ = local_update(model, x, y, state, self.cfg, rng, self.ledger, cid, epoch)
        return update

    def combine(self, updates) -> np.ndarray:
        return aggregate(updates, self.d, self.m)


class _FlatRun:
    """One uniformly sampled coordinate, full round budget, d-fold rescale."""

    def __init__(self, d, m, grad, perturber, spend, ledger):
        self.d, self.m = d, m
        self.grad, self.perturber, self.spend, self.ledger = grad, perturber, spend, ledger

    def update(self, cid, model, x, y, rng, epoch) -> SparseUpdate:
        out = flat_update(self.grad(model, x, y), self.perturber, rng)
        self.ledger.record_spend(cid, epoch, self.spend)
        return out

    def combine(self, updates) -> np.ndarray:
        return aggregate(updates, self.d, self.m) * self.d


class _CompressedRun:
    """Random projection to q dimensions, perturbation there, pinv recovery."""

    def __init__(self, proj: ProjectionMatrix, m, grad, perturber, spend, ledger):
        self.proj, self.m = proj, m
        self.grad, self.perturber, self.spend, self.ledger = grad, perturber, spend, ledger

    def update(self, cid, model, x, y, rng, epoch) -> SparseUpdate:
        out = compressed_update(self.grad(model, x, y), self.proj, self.perturber, rng)
        self.ledger.record_spend(cid, epoch, self.spend)
        return out

    def combine(self, updates) -> np.ndarray:
        return self.proj.recover(aggregate(updates, self.proj.q, self.m) * self.proj.q)


class _NonPrivateRun:
    """Clear-text transmission in one of the three np modes."""

    def __init__(self, mode, k, grad):
        self.mode, self.k, self.grad = mode, k, grad

    def update(self, cid, model, x, y, rng, epoch) -> np.ndarray:
        return np_update(self.grad(model, x, y), self.mode, self.k, rng)

    def combine(self, updates) -> np.ndarray:
        return np.mean(updates, axis=0)


def _validate_config(cfg: TrainingConfig) -> None:
    if cfg.solution not in SOLUTIONS:
        raise ValueError(f"unknown solution {cfg.solution!r}; valid: {', '.join(SOLUTIONS)}")
    if cfg.selection not in SELECTION_MECHANISMS:
        raise ValueError(
            f"unknown selection mechanism {cfg.selection!r}; valid: {', '.join(SELECTION_MECHANISMS)}"
        )
    if cfg.perturbation not in PERTURBATION_BACKENDS:
        raise ValueError(
            f"unknown perturbation backend {cfg.perturbation!r}; valid: {', '.join(PERTURBATION_BACKENDS)}"
        )
    if cfg.model not in MODEL_NAMES:
        raise ValueError(f"unknown model {cfg.model!r}; valid: {', '.join(MODEL_NAMES)}")
    if not isinstance(cfg.epochs, int) or cfg.epochs < 1:
        raise ValueError(f"epochs must be a positive integer, got {cfg.epochs!r}")
    if cfg.mu != "auto" and not 0.0 <= float(cfg.mu) <= 1.0:
        raise ValueError(f"mu must be 'auto' or lie in [0, 1], got {cfg.mu!r}")
    if not 0.0 < cfg.k_fraction <= 1.0:
        raise ValueError(f"k_fraction must lie in (0, 1], got {cfg.k_fraction}")
    if not 0.0 < cfg.m_fraction <= 1.0:
        raise ValueError(f"m_fraction must lie in (0, 1], got {cfg.m_fraction}")
    if not 0.0 < cfg.compression_ratio < 1.0:
        raise ValueError(f"compression_ratio must lie in (0, 1), got {cfg.compression_ratio}")
    if cfg.alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {cfg.alpha}")
    if cfg.l2 < 0:
        raise ValueError(f"l2 must be >= 0, got {cfg.l2}")
    if cfg.eta < 0:
        raise ValueError(f"eta must be >= 0, got {cfg.eta}")
    if cfg.eval_every < 1 or cfg.jobs < 1:
        raise ValueError("eval_every and jobs must be >= 1")


def _build_run(cfg: TrainingConfig, d: int, m: int, setup_rng):
    """Resolve the solution strategy, budget, and ledger for a run."""
    grad = gradient_fn(cfg.model)
    if cfg.solution.startswith("np"):
        mode = {"np": "full", "np-rs": "random", "np-k": "topk"}[cfg.solution]
        return _NonPrivateRun(mode, 1, grad), None, BudgetLedger(), None

    if cfg.epsilon <= 0:
        raise ValueError(f"private solutions need epsilon > 0, got {cfg.epsilon}")
    eps_round = cfg.epsilon / cfg.epochs

    if cfg.solution == "fedsel":
        mu = (
            hyper_parameters_free(m, eps_round, d, cfg.theta, cfg.hpf_constant)
            if cfg.mu == "auto"
            else float(cfg.mu)
        )
        budget = allocate_budget(cfg.epsilon, cfg.epochs, mu)
        eps_value = eps_round if cfg.control_full_value_budget else None
        client_cfg = ClientConfig(
            eta=cfg.eta,
            k=top_k_count(d, cfg.k_fraction),
            budget=budget,
            selection=cfg.selection,
            perturbation=cfg.perturbation,
            model=cfg.model,
            eps_value=eps_value,
        )
        ledger = BudgetLedger(cap_per_epoch=client_cfg.round_spend)
        return _FedSelRun(d, m, client_cfg, ledger), budget, ledger, mu

    budget = allocate_budget(cfg.epsilon, cfg.epochs, 0.0)
    perturber = make_perturber(cfg.perturbation, budget.epsilon_value)
    ledger = BudgetLedger(cap_per_epoch=budget.epsilon_round)
    if cfg.solution == "flat":
        return _FlatRun(d, m, grad, perturber, budget.epsilon_round, ledger), budget, ledger, 0.0
    q = max(1, int(round(cfg.compression_ratio * d)))
    proj = ProjectionMatrix.gaussian(d, q, setup_rng)
    return (
        _CompressedRun(proj, m, grad, perturber, budget.epsilon_round, ledger),
        budget,
        ledger,
        0.0,
    )


def train(cfg: TrainingConfig, dataset: Dataset, test_data: Dataset | None = None) -> TrainingResult:
    """Run the full simulated training loop and record per-iteration metrics."""
    _validate_config(cfg)
    if len(dataset) < 1:
        raise ValueError("dataset is empty")
    n, d = dataset.X.shape
    m = cfg.batch_size if cfg.batch_size is not None else max(1, int(cfg.m_fraction * n))
    if not 1 <= m <= n:
        raise ValueError(f"batch size {m} out of range for {n} clients")

    partition_rng = _stream(cfg.seed, _PARTITION)
    run, budget, ledger, mu = _build_run(cfg, d, m, _stream(cfg.seed, _SETUP))
    client_rngs: dict[int, np.random.Generator] = {}

    model = ModelState(w=np.zeros(d), alpha=cfg.alpha, l2=cfg.l2)
    metrics: list[RoundMetrics] = []
    batches_per_epoch = n // m
    if batches_per_epoch < 1:
        raise ValueError(f"batch size {m} exceeds the number of clients {n}")
    total_iterations = cfg.epochs * batches_per_epoch
    executor = ThreadPoolExecutor(max_workers=cfg.jobs) if cfg.jobs > 1 else None

    try:
        t = 1
        for epoch in range(1, cfg.epochs + 1):
            # leftover clients beyond a whole number of batches sit this epoch out
            permutation = partition_rng.permutation(n)
            for b in range(batches_per_epoch):
                started = time.perf_counter()
                members = permutation[b * m : (b + 1) * m]
                for cid in members:
                    if cid not in client_rngs:
                        client_rngs[int(cid)] = _stream(cfg.seed, _CLIENT, int(cid))

                def one(cid, _model=model, _epoch=epoch):
                    cid = int(cid)
                    return run.update(
                        cid, _model, dataset.X[cid], int(dataset.y[cid]), client_rngs[cid], _epoch
                    )

                if executor is None:
                    updates = [one(cid) for cid in members]
                else:
                    updates = list(executor.map(one, members))
                model = global_step(model, run.combine(updates))
                wall_ms = (time.perf_counter() - started) * 1e3

                if t % cfg.eval_every == 0 or t == total_iterations:
                    acc_train = accuracy(model, dataset.X, dataset.y)
                    acc_test = (
                        accuracy(model, test_data.X, test_data.y) if test_data is not None else float("nan")
                    )
                    held_out = acc_test if test_data is not None else acc_train
                    bots = sum(
                        1 for u in updates if isinstance(u, SparseUpdate) and u.is_bottom
                    )
                    metrics.append(
                        RoundMetrics(
                            t=t,
                            epoch=epoch,
                            acc_train=acc_train,
                            acc_test=acc_test,
                            misclass=1.0 - held_out,
                            bot_count=bots,
                            wall_ms=wall_ms,
                        )
                    )
                t += 1
    finally:
        if executor is not None:
            executor.shutdown()

    return TrainingResult(
        model=model, metrics=metrics, ledger=ledger, budget=budget, mu=mu, batch_size=m
    )
