import numpy as np
import pytest

from fedsel.budget import BudgetLedger, allocate_budget
from fedsel.client import ClientConfig, ResidualState, SparseUpdate, accumulate, local_update
from fedsel.models import ModelState
from fedsel.perturbation import DuchiPerturber, clip


class _Recorder:
    """Perturbation stub that echoes its input and remembers it."""

    bound = float("inf")

    def __init__(self):
        self.inputs = []

    def perturb(self, v, rng):
        self.inputs.append(float(v))
        return float(v)


def make_config(**overrides):
    defaults = dict(
        eta=0.9,
        k=1,
        budget=allocate_budget(2.0, 1, 0.1),
        selection="ps",
        perturbation="duchi",
        model="logistic",
    )
    defaults.update(overrides)
    return ClientConfig(**defaults)


class TestSparseUpdate:
    def test_pairing_enforced(self):
        SparseUpdate(None, None)
        SparseUpdate(2, 0.5)
        with pytest.raises(ValueError):
            SparseUpdate(1, None)
        with pytest.raises(ValueError):
            SparseUpdate(None, 1.0)

    def test_bottom_flag(self):
        assert SparseUpdate(None, None).is_bottom
        assert not SparseUpdate(0, 1.0).is_bottom


class TestAccumulate:
    def test_zero_start(self):
        state = ResidualState.zeros(2)
        accumulate(state, np.array([0.2, -0.1]))
        assert state.r == pytest.approx([0.2, -0.1])
        assert state.r_prev == pytest.approx([0.0, 0.0])

    def test_additivity(self):
        state = ResidualState(r=np.array([0.5, 0.0]), r_prev=np.zeros(2))
        accumulate(state, np.array([0.2, 0.0]))
        assert state.r == pytest.approx([0.7, 0.0])
        assert state.r_prev == pytest.approx([0.5, 0.0])

    def test_linearity_over_rounds(self):
        state = ResidualState.zeros(3)
        g = np.array([0.1, -0.2, 0.05])
        for _ in range(7):
            accumulate(state, g)
        assert state.r == pytest.approx(7 * g)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            accumulate(ResidualState.zeros(2), np.zeros(3))


class TestLocalUpdate:
    def test_hand_trace_momentum_and_clip(self):
        # residual 0.5 at j, gradient 0.2, eta 0.9: s_j = 0.7 + 0.45 = 1.15 -> clip 1.0
        cfg = make_config(eta=0.9, selection="ps", k=1)
        cfg.grad_fn = lambda model, x, y: np.array([0.2, 0.0])
        recorder = _Recorder()
        cfg.perturber = recorder
        state = ResidualState(r=np.array([0.5, 0.0]), r_prev=np.zeros(2))
        model = ModelState(np.zeros(2))
        # eps_select huge so ps picks the top pool (j=0 holds the largest |r|)
        cfg.eps_select = 50.0
        update, state = local_update(model, np.zeros(2), 1, state, cfg, np.random.default_rng(0))
        assert update.index == 0
        assert recorder.inputs == [1.0]
        assert update.value == 1.0
        assert state.r[0] == 0.0
        assert state.r[1] == 0.0

    def test_momentum_off_transmits_residual_exactly(self):
        cfg = make_config(eta=0.0)
        cfg.grad_fn = lambda model, x, y: np.array([0.3, 0.0])
        recorder = _Recorder()
        cfg.perturber = recorder
        cfg.eps_select = 50.0
        state = ResidualState(r=np.array([0.25, 0.0]), r_prev=np.zeros(2))
        local_update(ModelState(np.zeros(2)), np.zeros(2), 1, state, cfg, np.random.default_rng(0))
        assert recorder.inputs == [pytest.approx(0.55)]

    def test_unselected_coordinates_conserve_residual(self):
        rng = np.random.default_rng(2)
        cfg = make_config(k=2, selection="ps")
        d = 6
        x = rng.uniform(-1, 1, d)
        model = ModelState(rng.normal(size=d))
        state = ResidualState(r=rng.normal(size=d), r_prev=np.zeros(d))
        g = cfg.grad_fn(model, x, 1)
        before = state.r.copy()
        update, state = local_update(model, x, 1, state, cfg, rng)
        expected = before + g
        for j in range(d):
            if j == update.index:
                assert state.r[j] == 0.0
            else:
                assert state.r[j] == pytest.approx(expected[j], abs=1e-15)

    def test_bottom_keeps_residual_and_still_charges(self):
        # pe at eps1=0, d=2, k=1: Pr[bottom] = 0.25; seed 1 hits it
        cfg = make_config(selection="pe", eps_select=0.0)
        cfg.grad_fn = lambda model, x, y: np.array([0.1, 0.4])
        ledger = BudgetLedger()
        state = ResidualState.zeros(2)
        bottom_seen = False
        for seed in range(40):
            trial_state = ResidualState(r=state.r.copy(), r_prev=state.r_prev.copy())
            update, trial_state = local_update(
                ModelState(np.zeros(2)), np.zeros(2), 1, trial_state, cfg,
                np.random.default_rng(seed), ledger, client=seed, epoch=1,
            )
            assert ledger.spent(seed, 1) == pytest.approx(cfg.round_spend)
            if update.is_bottom:
                bottom_seen = True
                assert update.value is None
                assert trial_state.r == pytest.approx([0.1, 0.4])  # accumulated, not reset
        assert bottom_seen

    def test_spend_equals_round_budget(self):
        budget = allocate_budget(3.0, 2, 0.25)
        cfg = make_config(budget=budget)
        ledger = BudgetLedger()
        state = ResidualState.zeros(2)
        rng = np.random.default_rng(0)
        local_update(ModelState(np.zeros(2)), np.array([0.5, -0.5]), 1, state, cfg, rng,
                     ledger, client=3, epoch=1)
        assert ledger.spent(3, 1) == pytest.approx(budget.epsilon_round, abs=1e-12)
        assert cfg.round_spend == pytest.approx(budget.epsilon_select + budget.epsilon_value)

    def test_identical_seeds_identical_updates(self):
        cfg = make_config(selection="pe")
        model = ModelState(np.array([0.1, -0.3, 0.2]))
        x = np.array([0.5, 0.5, -0.5])
        outs = []
        for _ in range(2):
            state = ResidualState.zeros(3)
            update, _ = local_update(model, x, -1, state, cfg, np.random.default_rng(99))
            outs.append(update)
        assert outs[0] == outs[1]

    def test_perturbed_value_respects_backend_bound(self):
        cfg = make_config(perturbation="pm")
        rng = np.random.default_rng(5)
        for _ in range(200):
            state = ResidualState(r=rng.normal(size=4) * 3, r_prev=np.zeros(4))
            update, _ = local_update(
                ModelState(np.zeros(4)), rng.uniform(-1, 1, 4), 1, state, cfg, rng
            )
            assert abs(update.value) <= cfg.perturber.bound + 1e-12

    def test_control_variant_overrides_value_budget(self):
        budget = allocate_budget(2.0, 1, 0.1)
        cfg = make_config(budget=budget, eps_value=budget.epsilon_round)
        assert cfg.eps_select == pytest.approx(0.2)
        assert cfg.eps_value == pytest.approx(2.0)
        assert cfg.round_spend == pytest.approx(2.2)


class TestVarianceReduction:
    def test_adapted_accumulation_shrinks_update_variance(self):
        # both schemes clip: |s| and |alpha * s| both exceed 1
        alpha, s, m = 0.1, 15.0, 1
        mech = DuchiPerturber(1.0)
        rng = np.random.default_rng(7)
        n = 100_000
        adapted = (alpha / m) * mech.perturb(np.full(n, clip(s)), rng)
        plain = (1.0 / m) * mech.perturb(np.full(n, clip(alpha * s)), rng)
        ratio = adapted.var() / plain.var()
        assert adapted.var() <= plain.var()
        assert ratio == pytest.approx(alpha**2, rel=0.2)
