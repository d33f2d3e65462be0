import math

import numpy as np
import pytest

from fedsel.baselines import ProjectionMatrix, compressed_update, flat_update, np_update
from fedsel.perturbation import make_perturber
from fedsel.server import aggregate


class _NoNoise:
    bound = float("inf")

    def perturb(self, v, rng):
        return float(v) if np.isscalar(v) else np.asarray(v, dtype=float)


class TestFlatUpdate:
    def test_single_dimension_reduces_to_plain_perturbation(self):
        mech = make_perturber("duchi", 1.0)
        update = flat_update(np.array([0.4]), mech, np.random.default_rng(0))
        assert update.index == 0
        assert abs(update.value) == pytest.approx(mech.bound)

    def test_unbiased_after_d_rescaling(self):
        rng = np.random.default_rng(1)
        g = rng.uniform(-0.8, 0.8, size=6)
        mech = make_perturber("pm", 2.0)
        m = 10_000
        updates = [flat_update(g, mech, rng) for _ in range(m)]
        estimate = aggregate(updates, d=6, m=m) * 6
        spread = mech.bound * 6 / math.sqrt(m / 6)
        assert np.all(np.abs(estimate - g) < 4 * spread)

    def test_uniform_coordinate_choice(self):
        rng = np.random.default_rng(2)
        g = np.array([100.0, 0.001, 0.001, 0.001])  # magnitude plays no role
        counts = np.zeros(4)
        n = 40_000
        for _ in range(n):
            counts[flat_update(g, _NoNoise(), rng).index] += 1
        se = math.sqrt(0.25 * 0.75 / n)
        assert np.all(np.abs(counts / n - 0.25) < 4 * se)


class TestProjectionMatrix:
    def test_entries_match_declared_distribution(self):
        proj = ProjectionMatrix.gaussian(d=400, q=40, rng=np.random.default_rng(3))
        entries = proj.phi.ravel()
        assert abs(entries.mean()) < 4 * entries.std() / math.sqrt(entries.size)
        assert entries.var() == pytest.approx(1.0 / 40, rel=0.05)

    def test_identity_projection_recovers_exactly(self):
        eye = np.eye(5)
        proj = ProjectionMatrix(phi=eye, pinv=np.linalg.pinv(eye, rcond=1e-10))
        v = np.array([0.1, -0.2, 0.3, 0.0, 0.5])
        assert proj.recover(v) == pytest.approx(v, abs=1e-12)

    def test_rank_deficient_round_trip_has_error(self):
        rng = np.random.default_rng(4)
        proj = ProjectionMatrix.gaussian(d=50, q=10, rng=rng)
        g = rng.normal(size=50)
        recovered = proj.recover(g @ proj.phi)
        assert np.linalg.norm(recovered - g) > 1e-6

    def test_recovery_error_grows_as_ratio_shrinks(self):
        rng = np.random.default_rng(5)
        d = 60
        errors = {}
        for ratio in (0.1, 0.5):
            q = int(ratio * d)
            trial_errors = []
            for _ in range(100):
                proj = ProjectionMatrix.gaussian(d, q, rng)
                g = rng.normal(size=d)
                trial_errors.append(np.linalg.norm(proj.recover(g @ proj.phi) - g))
            errors[ratio] = np.mean(trial_errors)
        assert errors[0.1] > errors[0.5]

    def test_rejects_bad_q(self):
        with pytest.raises(ValueError):
            ProjectionMatrix.gaussian(d=5, q=6, rng=np.random.default_rng(0))


class TestCompressedUpdate:
    def test_zero_gradient_zero_expectation(self):
        rng = np.random.default_rng(6)
        proj = ProjectionMatrix.gaussian(d=20, q=4, rng=rng)
        mech = make_perturber("pm", 1.0)
        m = 20_000
        updates = [compressed_update(np.zeros(20), proj, mech, rng) for _ in range(m)]
        estimate = proj.recover(aggregate(updates, d=4, m=m) * 4)
        spread = mech.bound * 4 / math.sqrt(m / 4)
        assert np.all(np.abs(estimate) < 4 * spread)

    def test_index_lives_in_q_space(self):
        rng = np.random.default_rng(7)
        proj = ProjectionMatrix.gaussian(d=30, q=3, rng=rng)
        for _ in range(50):
            update = compressed_update(rng.normal(size=30), proj, _NoNoise(), rng)
            assert 0 <= update.index < 3


class TestNpUpdate:
    def test_full_mode_returns_gradient(self):
        g = np.array([0.1, -0.2])
        out = np_update(g, "full")
        assert out == pytest.approx(g)
        out[0] = 99.0
        assert g[0] == 0.1  # caller's gradient is not aliased

    def test_topk_takes_largest_magnitude(self):
        out = np_update(np.array([0.1, -0.9, 0.3]), "topk", k=1)
        assert out == pytest.approx([0.0, -0.9, 0.0])

    def test_topk_k2_unscaled(self):
        out = np_update(np.array([0.1, -0.9, 0.3]), "topk", k=2)
        assert out == pytest.approx([0.0, -0.9, 0.3])

    def test_random_mode_uniform_frequencies(self):
        rng = np.random.default_rng(8)
        g = np.ones(5)
        counts = np.zeros(5)
        n = 100_000
        for _ in range(n):
            out = np_update(g, "random", rng=rng)
            counts[np.flatnonzero(out)[0]] += 1
            assert out.max() == pytest.approx(5.0)  # d * g_j
        se = math.sqrt(0.2 * 0.8 / n)
        assert np.all(np.abs(counts / n - 0.2) < 4 * se)

    def test_random_mode_requires_rng(self):
        with pytest.raises(ValueError):
            np_update(np.ones(3), "random")

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError, match="full, random, topk"):
            np_update(np.ones(3), "middle")
