import math

import numpy as np
import pytest
from scipy.linalg import solve_discrete_are

from lanefree.linearization import build_design_model
from lanefree.lq_design import (
    DesignError,
    GainSet,
    WeightConfig,
    augment,
    closed_loop_radius,
    design_gains,
    extract_gains,
    integrator_map,
    solve_riccati,
)

GOLDEN = (1 + math.sqrt(5)) / 2


class TestWeights:
    def test_matrices(self):
        Q, S, R = WeightConfig(-2.0, 1.0).matrices(3)
        np.testing.assert_array_equal(np.diag(Q), [1] * 6 + [0] * 3)
        np.testing.assert_allclose(S, 0.01 * np.eye(3))
        np.testing.assert_allclose(R, 10 * np.eye(3))

    def test_lq_has_zero_integrator_weight(self):
        w = WeightConfig(-math.inf, -3.0)
        assert not w.integral
        assert not w.matrices(2)[1].any()

    @pytest.mark.parametrize("p1,p2", [(0.0, math.inf), (math.nan, 0.0), (math.inf, 0.0)])
    def test_rejects(self, p1, p2):
        with pytest.raises(ValueError):
            WeightConfig(p1, p2)


class TestAugment:
    def test_shapes_and_blocks(self, uncongested):
        model = build_design_model(uncongested)
        A_t, B_t, Q_t, R_t = augment(model, WeightConfig(-math.inf, -3.0))
        assert A_t.shape == (24, 24) and B_t.shape == (24, 6)
        assert not Q_t[18:, 18:].any()
        np.testing.assert_array_equal(A_t[18:, 18:], np.eye(6))
        np.testing.assert_array_equal(B_t[18:], 0.0)

    def test_integrator_map(self):
        rng = np.random.default_rng(0)
        a, b, g = rng.normal(size=(3, 4))
        np.testing.assert_allclose(integrator_map(4) @ np.concatenate([a, b, g]), a - b)

    def test_needs_lifted_model(self, uncongested):
        from lanefree.linearization import analytic_jacobians, NominalPoint

        raw = analytic_jacobians(NominalPoint.for_scenario(uncongested), uncongested)
        with pytest.raises(ValueError, match="lifted"):
            augment(raw, WeightConfig())


class TestRiccati:
    def test_scalar_golden_ratio(self):
        P = solve_riccati(1.0, 1.0, 1.0, 1.0)
        assert P[0, 0] == pytest.approx(GOLDEN, abs=1e-9)
        g = extract_gains(P, np.eye(1), np.eye(1), np.eye(1), np.zeros((1, 0)))
        assert g.K[0, 0] == pytest.approx(GOLDEN - 1, abs=1e-9)

    def test_zero_weight_stable_system(self):
        P, iters, _ = solve_riccati(0.5 * np.eye(2), np.eye(2), np.zeros((2, 2)), np.eye(2), full_output=True)
        assert not P.any()
        assert iters == 1

    def test_matches_scipy(self):
        rng = np.random.default_rng(7)
        A = rng.normal(size=(5, 5))
        B = rng.normal(size=(5, 2))
        Q = np.diag(rng.uniform(0.5, 2, 5))
        R = np.diag(rng.uniform(0.5, 2, 2))
        np.testing.assert_allclose(solve_riccati(A, B, Q, R, tol=1e-12), solve_discrete_are(A, B, Q, R), rtol=1e-8)

    def test_six_section_design_matches_scipy(self, uncongested):
        model = build_design_model(uncongested)
        A_t, B_t, Q_t, R_t = augment(model, WeightConfig(-2.5, -3.0))
        P, _, resid = solve_riccati(A_t, B_t, Q_t, R_t, full_output=True)
        assert resid < 1e-9
        ref = solve_discrete_are(A_t, B_t, Q_t, R_t)
        np.testing.assert_allclose(P, ref, rtol=1e-6, atol=1e-6)

    def test_non_convergence_reports_spectrum(self):
        with pytest.raises(DesignError, match="spectral radius"):
            solve_riccati(2.0, 0.0, 1.0, 1.0, max_iter=50)

    def test_monitor_choice(self):
        with pytest.raises(ValueError):
            solve_riccati(1.0, 1.0, 1.0, 1.0, monitor="x")

    def test_indefinite_r(self):
        with pytest.raises(DesignError):
            solve_riccati(1.0, 1.0, 1.0, -1.0)


class TestGains:
    def test_lq_integral_gain_is_zero(self, uncongested):
        g = design_gains(uncongested, WeightConfig(-math.inf, -3.0), use_cache=False)
        assert np.array_equal(g.K2, np.zeros((6, 6)))
        np.testing.assert_array_equal(g.Kp, g.K1)

    def test_lqi_integral_gain_full_rank(self, uncongested):
        g = design_gains(uncongested, WeightConfig(-2.5, -3.0))
        assert np.linalg.matrix_rank(g.KI) == 6

    def test_partition(self, uncongested):
        g = design_gains(uncongested)
        np.testing.assert_allclose(g.Kp, g.K1 - g.K2 @ integrator_map(6))
        assert g.K1.shape == (6, 18) and g.K2.shape == (6, 6)

    def test_closed_loop_stable(self, uncongested):
        w = WeightConfig(-2.5, -3.0)
        g = design_gains(uncongested, w)
        A_t, B_t, _, _ = augment(build_design_model(uncongested), w)
        assert closed_loop_radius(A_t, B_t, g) < 1

    def test_sigma_one_uses_gain_monitor(self, uncongested):
        g = design_gains(uncongested, WeightConfig(-2.5, -3.0), sigma=1.0, use_cache=False)
        assert np.isfinite(g.K).all()
        assert g.meta["sigma"] == 1.0

    def test_cache_returns_same_object(self, uncongested, congested):
        a = design_gains(uncongested, WeightConfig(-1.0, -1.0))
        b = design_gains(congested, WeightConfig(-1.0, -1.0))
        assert a is b

    def test_save_load_round_trip(self, uncongested, tmp_path):
        g = design_gains(uncongested, WeightConfig(-math.inf, -3.0))
        path = tmp_path / "gains.txt"
        g.save(path)
        back = GainSet.load(path)
        assert np.array_equal(back.K, g.K) and np.array_equal(back.H, g.H)
        assert back.meta["p1"] == -math.inf
        assert back.meta["n"] == 6 and back.meta["M"] == 6
