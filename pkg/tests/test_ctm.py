import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_scenario
from lanefree.ctm import (
    TRACE_COLUMNS,
    PlantInvariantError,
    Profile,
    TrafficState,
    apply_delay,
    compute_flows,
    conservation_residual,
    run_open_loop,
    simulate,
    step,
    tts,
)
from lanefree.model import ModelParams


class TestProfile:
    def test_interpolates_and_holds(self):
        p = Profile((0.0, 1.0), (0.0, 100.0))
        np.testing.assert_allclose(p([-1.0, 0.25, 2.0]), [0.0, 25.0, 100.0])

    def test_rejects_unsorted(self):
        with pytest.raises(ValueError):
            Profile((1.0, 0.0), (1.0, 2.0))

    def test_min_over_horizon(self):
        p = Profile((0.0, 0.5, 1.0), (10.0, -5.0, 10.0))
        assert p.min_over(0.25) == pytest.approx(2.5)
        assert p.min_over(1.0) == -5.0


class TestScenarioValidation:
    def test_cfl(self):
        with pytest.raises(ValueError, match="CFL"):
            make_scenario(length=0.2)

    def test_negative_profile(self):
        with pytest.raises(ValueError, match="non-negative"):
            make_scenario(mainstream_a=-1.0)

    def test_horizon_multiple_of_m(self):
        with pytest.raises(ValueError, match="multiple"):
            make_scenario(horizon=7)

    def test_upstream_ramp_rejected(self):
        with pytest.raises(ValueError, match="upstream"):
            make_scenario(onramps_a={0: 100.0})

    def test_eps_bounds(self):
        with pytest.raises(ValueError, match="eps bounds"):
            make_scenario(eps_min=0.6, eps_max=0.5)

    def test_density_range(self):
        with pytest.raises(ValueError, match="initial_density_b"):
            make_scenario(rho_b=2000.0)


class TestDelay:
    def test_widening_a_is_delayed(self):
        a, b = apply_delay(0.6, 0.5)
        assert (a, b) == pytest.approx((0.5, 0.4))

    def test_no_change(self):
        assert apply_delay(0.5, 0.5) == pytest.approx((0.5, 0.5))

    def test_widening_b_is_delayed(self):
        a, b = apply_delay(0.4, 0.5)
        assert (a, b) == pytest.approx((0.4, 0.5))

    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    def test_complementarity(self, now, prev):
        a, b = apply_delay(now, prev)
        assert a + b <= 1.0 + 1e-15
        assert a >= 0 and b >= 0


class TestFlows:
    def _state(self, rho_a, rho_b=None):
        rho_a = np.asarray(rho_a, dtype=float)
        rho_b = np.zeros_like(rho_a) if rho_b is None else np.asarray(rho_b, dtype=float)
        return TrafficState(rho_a, rho_b, np.full(rho_a.size, 0.5))

    def _demands(self, n, q0a=0.0, qnb=0.0):
        return q0a, qnb, np.zeros(n), np.zeros(n)

    def test_demand_limited(self):
        sc = make_scenario()
        q_a, _ = compute_flows(self._state([50.0, 50.0]), np.full(2, 0.5), np.full(2, 0.5), self._demands(2), sc)
        np.testing.assert_allclose(q_a, [5000.0, 5000.0])

    def test_empty(self):
        sc = make_scenario()
        q_a, q_b = compute_flows(self._state([0.0, 0.0]), np.full(2, 0.5), np.full(2, 0.5), self._demands(2), sc)
        assert not q_a.any() and not q_b.any()

    def test_jammed_downstream_blocks(self):
        sc = make_scenario()
        q_a, _ = compute_flows(self._state([50.0, 560.0]), np.full(2, 0.5), np.full(2, 0.5), self._demands(2), sc)
        assert q_a[0] == pytest.approx(0.0, abs=1e-9)

    def test_onramp_priority_with_drop(self):
        # supply 6000 minus lambda_r * r = 0.7 * 2000 leaves 4600 for the mainstream
        sc = make_scenario(onramps_a={1: 2000.0}, params=ModelParams().with_capacity_drop(True))
        state = self._state([100.0, 60.0])
        demands = (0.0, 0.0, np.array([0.0, 2000.0]), np.zeros(2))
        q_a, _ = compute_flows(state, np.full(2, 0.5), np.full(2, 0.5), demands, sc)
        assert q_a[0] == pytest.approx(4600.0)

    def test_direction_b_mirrors_a(self):
        sc = make_scenario(n=3)
        state = TrafficState(np.array([10.0, 40.0, 70.0]), np.array([70.0, 40.0, 10.0]), np.full(3, 0.5))
        q_a, q_b = compute_flows(state, np.full(3, 0.5), np.full(3, 0.5), self._demands(3), sc)
        np.testing.assert_allclose(q_b, q_a[::-1])


class TestStep:
    def test_density_update(self):
        sc = make_scenario(n=1, length=0.5)
        state = TrafficState(np.array([50.0]), np.array([0.0]), np.array([0.5]))
        demands = (4000.0, 0.0, np.zeros(1), np.zeros(1))
        new = step(state, (np.array([5000.0]), np.array([0.0])), demands, sc)
        assert new.rho_a[0] == pytest.approx(50.0 - 1000.0 / 180.0)
        assert new.rho_a[0] == pytest.approx(44.44444444444444)

    def test_uniform_steady_flow(self):
        sc = make_scenario(n=3, mainstream_a=5000.0, rho_a=50.0)
        state = TrafficState(np.full(3, 50.0), np.zeros(3), np.full(3, 0.5))
        demands = sc.demand_at(0)
        flows = compute_flows(state, np.full(3, 0.5), np.full(3, 0.5), demands, sc)
        new = step(state, flows, demands, sc)
        np.testing.assert_allclose(new.rho_a, 50.0)

    def test_negative_density_raises(self):
        sc = make_scenario(n=1)
        state = TrafficState(np.array([1.0]), np.array([0.0]), np.array([0.5]))
        with pytest.raises(PlantInvariantError):
            step(state, (np.array([5000.0]), np.array([0.0])), (0.0, 0.0, np.zeros(1), np.zeros(1)), sc)


class TestSimulate:
    def test_empty_network(self):
        tr = run_open_loop(make_scenario(n=4, horizon=60))
        assert not tr.rho_a.any() and not tr.rho_b.any()
        assert tr.tts == 0.0

    def test_tts_single_step_contribution(self):
        # T * L * (rho_a + rho_b) for a single held step
        sc = make_scenario(n=1, rho_a=10.0, rho_b=10.0, horizon=6)
        tr = run_open_loop(sc)
        tr.rho_a[:] = 10.0
        tr.rho_b[:] = 10.0
        assert tts(tr) / 6 == pytest.approx(10.0 / 360.0)
        assert tts(tr) / 6 == pytest.approx(0.027778, abs=1e-6)

    def test_policy_called_once_per_control_step(self, uncongested):
        calls = []

        def policy(kc, state):
            calls.append(kc)
            return np.full(uncongested.n_sections, 0.5)

        simulate(uncongested, policy)
        assert calls == list(range(uncongested.control_steps))

    def test_schedule_shape_checked(self, uncongested):
        with pytest.raises(ValueError, match="shape"):
            run_open_loop(uncongested, np.full((3, 6), 0.5))

    def test_deterministic(self, uncongested):
        a = run_open_loop(uncongested)
        b = run_open_loop(uncongested)
        assert np.array_equal(a.rho_a, b.rho_a) and np.array_equal(a.rho_b, b.rho_b)

    def test_no_control_regression_anchor(self, uncongested):
        # frozen output of the shipped reconstruction; guards unintended plant changes
        assert run_open_loop(uncongested).tts == pytest.approx(228.8022420176727, rel=1e-12)

    def test_trace_csv(self, tmp_path):
        sc = make_scenario(n=2, mainstream_a=1000.0, horizon=12)
        tr = run_open_loop(sc)
        path = tmp_path / "trace.csv"
        tr.to_csv(path)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == TRACE_COLUMNS
        assert len(rows) == 1 + 13 * 2
        assert rows[-1][4] == "nan"
        assert float(rows[3][2]) == pytest.approx(tr.rho_a[1, 0], rel=1e-8)


@settings(max_examples=25, deadline=None)
@given(
    st.integers(0, 2**31 - 1),
    st.booleans(),
)
def test_conservation_random_schedules(seed, drop):
    """Random schedules within the bounds, random demands and densities."""
    rng = np.random.default_rng(seed)
    n = 4
    params = ModelParams().with_capacity_drop(drop)
    sc = make_scenario(
        n=n,
        mainstream_a=rng.uniform(0, 7000),
        mainstream_b=rng.uniform(0, 7000),
        rho_a=rng.uniform(0, 300, n),
        rho_b=rng.uniform(0, 300, n),
        beta_a=np.r_[0.0, rng.uniform(0, 0.3, n - 1)],
        beta_b=np.r_[rng.uniform(0, 0.3, n - 1), 0.0],
        onramps_a={2: rng.uniform(0, 1500)},
        onramps_b={1: rng.uniform(0, 1500)},
        horizon=60,
        params=params,
    )
    sched = rng.uniform(0.16, 0.84, (sc.control_steps, n))
    tr = run_open_loop(sc, sched)
    assert conservation_residual(tr).max() < 1e-9
    assert tr.rho_a.min() >= -1e-9 and tr.rho_b.min() >= -1e-9
    assert np.all(tr.eps_a + tr.eps_b <= 1.0 + 1e-15)
