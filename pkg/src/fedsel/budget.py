"""Privacy budget allocation and the per-client spending ledger.

Each client owns a total budget ``epsilon_total`` for the whole training run.
It is split evenly over epochs (``epsilon_round = epsilon_total / epochs``)
and then between the two privatization stages: a fraction ``mu`` goes to
dimension selection and the rest to value perturbation. The ledger records
what every client actually spent so that sequential composition can be
machine-checked after a run instead of trusted.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

# Budget arithmetic is algebraic; comparisons only need to absorb float error.
BUDGET_ATOL = 1e-12


@dataclass(frozen=True)
class PrivacyBudget:
    """Per-client budget split across epochs and privatization stages."""

    epsilon_total: float
    epochs: int
    mu: float
    epsilon_round: float
    epsilon_select: float
    epsilon_value: float


def allocate_budget(epsilon_total: float, epochs: int, mu: float) -> PrivacyBudget:
    """Split a total per-client budget into per-round and per-stage budgets.

    ``epsilon_round = epsilon_total / epochs``, the selection stage gets
    ``mu * epsilon_round`` and value perturbation gets the remainder.
    """
    if epsilon_total < 0:
        raise ValueError(f"epsilon_total must be >= 0, got {epsilon_total}")
    if not isinstance(epochs, int) or epochs < 1:
        raise ValueError(f"epochs must be a positive integer, got {epochs!r}")
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"mu must lie in [0, 1], got {mu}")
    epsilon_round = epsilon_total / epochs
    epsilon_select = mu * epsilon_round
    return PrivacyBudget(
        epsilon_total=float(epsilon_total),
        epochs=epochs,
        mu=float(mu),
        epsilon_round=epsilon_round,
        epsilon_select=epsilon_select,
        epsilon_value=epsilon_round - epsilon_select,
    )


class BudgetOverspendError(RuntimeError):
    """A client was about to spend more than its per-epoch allowance."""


@dataclass
class BudgetLedger:
    """Thread-safe record of what each client spent in each epoch.

    ``cap_per_epoch``, when set, makes :meth:`record_spend` raise as soon as
    any (client, epoch) total would exceed it. Training runs set the cap to
    the per-round charge so accidental double participation fails loudly.
    """

    cap_per_epoch: float | None = None
    _spent: dict[tuple[int, int], float] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def record_spend(self, client: int, epoch: int, amount: float) -> None:
        if amount < 0:
            raise ValueError(f"spend amount must be >= 0, got {amount}")
        key = (client, epoch)
        with self._lock:
            new_total = self._spent.get(key, 0.0) + amount
            if self.cap_per_epoch is not None and new_total > self.cap_per_epoch + BUDGET_ATOL:
                raise BudgetOverspendError(
                    f"client {client} would spend {new_total} in epoch {epoch}, "
                    f"cap is {self.cap_per_epoch}"
                )
            self._spent[key] = new_total

    def spent(self, client: int, epoch: int) -> float:
        return self._spent.get((client, epoch), 0.0)

    def total(self, client: int) -> float:
        return sum(v for (c, _), v in self._spent.items() if c == client)

    def clients(self) -> list[int]:
        return sorted({c for c, _ in self._spent})

    def epochs_of(self, client: int) -> list[int]:
        return sorted(e for c, e in self._spent if c == client)

    def __len__(self) -> int:
        return len(self._spent)

    def dump(self) -> str:
        """Render the ledger as a text table (client id, epoch, spent)."""
        lines = [f"{'client':>8} {'epoch':>6} {'spent':>18}"]
        for (client, epoch) in sorted(self._spent):
            lines.append(f"{client:>8} {epoch:>6} {self._spent[(client, epoch)]:>18.12f}")
        return "\n".join(lines) + "\n"
