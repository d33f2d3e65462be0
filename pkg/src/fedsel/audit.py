"""Machine verification of the privacy and accuracy claims.

Everything here is an independent check path: exact output distributions are
computed from first principles (closed forms for exp/ps, exhaustive
enumeration of all 2^d flip patterns for pe), privacy ratios are maximized
over complete status spaces, and the composition of a finished run is checked
against its ledger rather than trusted. Failures return data, not exceptions,
so callers can render reports and set exit codes.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from .budget import BUDGET_ATOL, BudgetLedger, PrivacyBudget
from .perturbation import DuchiPerturber, PiecewisePerturber
from .selection import SELECTION_MECHANISMS, SelectionStatus, rank_abs, select_index

RATIO_TOL = 1e-9
NORM_TOL = 1e-12
PE_ENUMERATION_LIMIT = 20

DEFAULT_GRID_D = tuple(range(2, 9))
DEFAULT_GRID_K = (1, 2, 3)
DEFAULT_GRID_EPS = (0.1, 0.5, 1.0, 2.0, 4.0)


def _exp_distribution(status: SelectionStatus, epsilon1: float) -> tuple[np.ndarray, float]:
    d = status.d
    if d < 2:
        raise ValueError("exp distribution needs d >= 2")
    weights = np.exp(epsilon1 * status.ranks.astype(np.float64) / (d - 1))
    return weights / weights.sum(), 0.0


def _ps_distribution(status: SelectionStatus, epsilon1: float) -> tuple[np.ndarray, float]:
    d, k = status.d, status.k
    if k >= d:
        raise ValueError("ps distribution needs k < d")
    p = math.exp(epsilon1) * k / (d - k + math.exp(epsilon1) * k)
    probs = np.where(status.topk, p / k, (1.0 - p) / (d - k))
    return probs, 0.0


def _pe_distribution(status: SelectionStatus, epsilon1: float) -> tuple[np.ndarray, float]:
    probs, p_bot, _ = pe_enumerate(status.topk, epsilon1)
    return probs, p_bot


def pe_enumerate(z, epsilon1: float, chunk: int = 1 << 16) -> tuple[np.ndarray, float, float]:
    """Enumerate all 2^d randomized-response flip patterns of the status z.

    Returns per-index selection probabilities, the bottom probability, and
    the expected support size. This is the oracle the sampler and the paper's
    closed forms are checked against, so it never takes shortcuts.
    """
    z = np.asarray(z, dtype=bool)
    d = z.shape[0]
    if d > PE_ENUMERATION_LIMIT:
        raise ValueError(f"pe enumeration is limited to d <= {PE_ENUMERATION_LIMIT}, got {d}")
    keep = math.exp(epsilon1) / (math.exp(epsilon1) + 1.0)
    probs = np.zeros(d)
    p_bot = 0.0
    expected_support = 0.0
    bit_positions = np.arange(d, dtype=np.uint32)
    for start in range(0, 1 << d, chunk):
        codes = np.arange(start, min(start + chunk, 1 << d), dtype=np.uint32)
        bits = (codes[:, None] >> bit_positions) & 1
        flips = bits != z
        n_flips = flips.sum(axis=1)
        pattern_prob = keep ** (d - n_flips) * (1.0 - keep) ** n_flips
        support = bits.sum(axis=1)
        empty = support == 0
        p_bot += float(pattern_prob[empty].sum())
        expected_support += float((pattern_prob * support).sum())
        mass = np.where(empty, 0.0, pattern_prob / np.maximum(support, 1))
        probs += bits.T @ mass
    return probs, p_bot, expected_support


_DISTRIBUTIONS = {"exp": _exp_distribution, "pe": _pe_distribution, "ps": _ps_distribution}


def exact_distribution(
    mechanism: str, status: SelectionStatus, epsilon1: float
) -> tuple[np.ndarray, float]:
    """Exact outcome probabilities (per index, plus bottom) for a status vector."""
    try:
        dist = _DISTRIBUTIONS[mechanism]
    except KeyError:
        raise ValueError(
            f"unknown selection mechanism {mechanism!r}; valid: {', '.join(SELECTION_MECHANISMS)}"
        ) from None
    return dist(status, epsilon1)


def _exp_statuses(d: int, rng: np.random.Generator, sample_size: int):
    if d <= 6:
        for ranks in itertools.permutations(range(1, d + 1)):
            yield SelectionStatus.from_ranks(np.array(ranks), k=1)
    else:
        for _ in range(sample_size):
            yield SelectionStatus.from_ranks(rng.permutation(d) + 1, k=1)


def _binary_statuses(d: int, k: int):
    for members in itertools.combinations(range(d), k):
        z = np.zeros(d, dtype=bool)
        z[list(members)] = True
        yield SelectionStatus.from_topk(z)


def ldp_ratio_check(
    mechanism: str,
    d: int,
    k: int,
    epsilon1: float,
    exp_status_sample: int = 2000,
    rng: np.random.Generator | None = None,
) -> float:
    """Supremum of Pr[outcome | z] / Pr[outcome | z'] over all admissible
    status pairs and outcomes (bottom included).

    exp enumerates all rank permutations up to d = 6 and samples beyond; pe
    and ps enumerate every k-subset status.
    """
    if mechanism == "exp":
        statuses = _exp_statuses(d, rng or np.random.default_rng(0), exp_status_sample)
    else:
        statuses = _binary_statuses(d, k)
    low = np.full(d + 1, np.inf)
    high = np.zeros(d + 1)
    for status in statuses:
        probs, p_bot = exact_distribution(mechanism, status, epsilon1)
        row = np.append(probs, p_bot)
        low = np.minimum(low, row)
        high = np.maximum(high, row)
    if mechanism != "pe":
        low, high = low[:-1], high[:-1]  # no bottom outcome
    if np.any(low <= 0.0):
        return math.inf
    return float(np.max(high / low))


@dataclass(frozen=True)
class GridResult:
    mechanism: str
    d: int
    k: int
    epsilon1: float
    max_ratio: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.max_ratio <= self.bound + RATIO_TOL


def selection_grid(
    ds=DEFAULT_GRID_D,
    ks=DEFAULT_GRID_K,
    eps_values=DEFAULT_GRID_EPS,
    mechanisms=SELECTION_MECHANISMS,
) -> list[GridResult]:
    """LDP ratio audit over the whole parameter grid, skipping invalid combos
    (pe needs k <= d, ps needs k < d; exp ignores k)."""
    results = []
    for mechanism in mechanisms:
        for d in ds:
            valid_ks = [k for k in ks if (k < d if mechanism == "ps" else k <= d)]
            if mechanism == "exp":
                valid_ks = valid_ks[:1]  # rank-based; k plays no role
            for k in valid_ks:
                for eps in eps_values:
                    ratio = ldp_ratio_check(mechanism, d, k, eps)
                    results.append(GridResult(mechanism, d, k, eps, ratio, math.exp(eps)))
    return results


def normalization_error(mechanism: str, d: int, k: int, epsilon1: float) -> float:
    """Largest deviation of any exact distribution row from summing to 1."""
    if mechanism == "exp":
        statuses = _exp_statuses(d, np.random.default_rng(0), 200)
    else:
        statuses = _binary_statuses(d, k)
    worst = 0.0
    for status in statuses:
        probs, p_bot = exact_distribution(mechanism, status, epsilon1)
        worst = max(worst, abs(float(probs.sum()) + p_bot - 1.0))
    return worst


def sampling_consistency(
    mechanism: str,
    d: int,
    k: int,
    epsilon1: float,
    draws: int,
    rng: np.random.Generator,
) -> float:
    """Largest deviation (in standard errors) between empirical outcome
    frequencies of the production sampler and the exact distribution."""
    r = rng.normal(size=d)
    status = rank_abs(r, k)
    probs, p_bot = exact_distribution(mechanism, status, epsilon1)
    counts = np.zeros(d + 1, dtype=np.int64)
    for _ in range(draws):
        j = select_index(r, k, epsilon1, mechanism, rng)
        counts[d if j is None else j] += 1
    exact = np.append(probs, p_bot)
    freq = counts / draws
    se = np.sqrt(np.maximum(exact * (1.0 - exact), 1e-300) / draws)
    cells = exact > 0
    return float(np.max(np.abs(freq[cells] - exact[cells]) / se[cells]))


def duchi_ratio(epsilon: float, input_grid: int = 21) -> float:
    """Exact two-point LDP ratio of the duchi backend over an input grid."""
    mech = DuchiPerturber(epsilon)
    p_pos = mech.positive_probability(np.linspace(-1.0, 1.0, input_grid))
    return float(max(p_pos.max() / p_pos.min(), (1.0 - p_pos).max() / (1.0 - p_pos).min()))


def pm_density_ratio(epsilon: float, input_grid: int = 21, output_grid: int = 101) -> float:
    """Max density ratio of the pm backend over input and output grids."""
    mech = PiecewisePerturber(epsilon)
    inputs = np.linspace(-1.0, 1.0, input_grid)
    outputs = np.linspace(-mech.bound, mech.bound, output_grid)
    densities = np.stack([mech.pdf(outputs, v) for v in inputs])
    return float(np.max(densities.max(axis=0) / densities.min(axis=0)))


def perturbation_ratio_check(name: str, epsilon: float) -> float:
    """LDP ratio of a perturbation backend; the hm mixture weight is input-
    independent, so its ratio is the worse of its two components."""
    if name == "duchi":
        return duchi_ratio(epsilon)
    if name == "pm":
        return pm_density_ratio(epsilon)
    if name == "hm":
        return max(duchi_ratio(epsilon), pm_density_ratio(epsilon))
    raise ValueError(f"unknown perturbation backend {name!r}")


@dataclass
class CompositionReport:
    passed: bool
    failures: list[str]
    combined_bound: float


def composition_check(
    ledger: BudgetLedger,
    budget: PrivacyBudget,
    selection: str | None = None,
    perturbation: str | None = None,
    audit_d: int = 6,
    audit_k: int = 2,
) -> CompositionReport:
    """Verify a finished run: every client's per-epoch spend equals the round
    budget, totals never exceed the overall budget, and (optionally) each
    stage's mechanism actually attains a ratio within its configured budget."""
    failures = []
    eps_round = budget.epsilon_round
    for client in ledger.clients():
        epochs = ledger.epochs_of(client)
        for epoch in epochs:
            spent = ledger.spent(client, epoch)
            if abs(spent - eps_round) > BUDGET_ATOL:
                failures.append(
                    f"client {client} spent {spent} in epoch {epoch}, expected {eps_round}"
                )
        total = ledger.total(client)
        if total > budget.epsilon_total + BUDGET_ATOL:
            failures.append(
                f"client {client} spent {total} overall, budget is {budget.epsilon_total}"
            )
        if len(epochs) == budget.epochs and abs(total - budget.epsilon_total) > BUDGET_ATOL:
            failures.append(
                f"client {client} participated in every epoch but spent {total}, "
                f"expected {budget.epsilon_total}"
            )
    if selection is not None:
        k = min(audit_k, audit_d - 1)
        ratio = ldp_ratio_check(selection, audit_d, k, budget.epsilon_select)
        if ratio > math.exp(budget.epsilon_select) + RATIO_TOL:
            failures.append(
                f"selection {selection!r} ratio {ratio} exceeds e^eps1 = "
                f"{math.exp(budget.epsilon_select)}"
            )
    if perturbation is not None:
        ratio = perturbation_ratio_check(perturbation, budget.epsilon_value)
        if ratio > math.exp(budget.epsilon_value) + RATIO_TOL:
            failures.append(
                f"perturbation {perturbation!r} ratio {ratio} exceeds e^eps2 = "
                f"{math.exp(budget.epsilon_value)}"
            )
    return CompositionReport(
        passed=not failures,
        failures=failures,
        combined_bound=math.exp(budget.epsilon_select + budget.epsilon_value),
    )


def measure_aggregation_error(
    d: int,
    m: int,
    epsilon2: float,
    trials: int,
    perturber,
    rng: np.random.Generator,
) -> np.ndarray:
    """Empirical max-coordinate error of sparse aggregation under perturbation.

    A fixed population of m clients each holds one fixed coordinate and value;
    every trial re-perturbs the values and measures
    ``max_j |mean(perturbed)_j - mean(true)_j``.
    """
    coords = rng.integers(0, d, size=m)
    values = rng.uniform(-0.5, 0.5, size=m)
    truth = np.bincount(coords, weights=values, minlength=d) / m
    errors = np.empty(trials)
    for trial in range(trials):
        noisy = perturber.perturb(values, rng)
        estimate = np.bincount(coords, weights=noisy, minlength=d) / m
        errors[trial] = np.max(np.abs(estimate - truth))
    return errors


def time_selection(
    d: int, k: int, epsilon1: float, calls: int, rng: np.random.Generator
) -> dict[str, float]:
    """Median wall time (seconds) of one full selection per mechanism."""
    r = rng.normal(size=d)
    medians = {}
    for mechanism in SELECTION_MECHANISMS:
        samples = np.empty(calls)
        for i in range(calls):
            start = time.perf_counter()
            select_index(r, k, epsilon1, mechanism, rng)
            samples[i] = time.perf_counter() - start
        medians[mechanism] = float(np.median(samples))
    return medians
