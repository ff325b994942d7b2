"""Extended cell transmission model for two opposing directions.

Direction a runs from section 1 to section n, direction b from n to 1.
Sharing factors are commanded once per control step and held for ``M``
model steps; the widened direction only gets its extra width one control
interval later.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from lanefree.model import ModelParams, demand_fn, supply_fn

TRACE_COLUMNS = (
    "k",
    "i",
    "rho_a",
    "rho_b",
    "q_a",
    "q_b",
    "eps_cmd",
    "eps_applied_a",
    "eps_applied_b",
)


class PlantInvariantError(RuntimeError):
    """Raised when the simulated plant leaves its physical domain."""


@dataclass(frozen=True)
class Profile:
    """Piecewise-linear time series given by breakpoints.

    ``times`` are in hours and must be strictly increasing; values are held
    constant outside the first and last breakpoint.
    """

    times: tuple
    values: tuple

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size == 0:
            raise ValueError("profile needs matching, non-empty breakpoint lists")
        if np.any(np.diff(t) <= 0):
            raise ValueError("profile breakpoint times must be strictly increasing")
        object.__setattr__(self, "times", tuple(t.tolist()))
        object.__setattr__(self, "values", tuple(v.tolist()))

    @classmethod
    def constant(cls, value: float) -> "Profile":
        return cls((0.0,), (float(value),))

    def __call__(self, t):
        return np.interp(t, self.times, self.values)

    def min_over(self, t_end: float) -> float:
        """Smallest value on ``[0, t_end]``; the minimum of a piecewise-linear
        function sits at a breakpoint or an end point."""
        pts = [0.0, t_end] + [t for t in self.times if 0.0 <= t <= t_end]
        return float(np.min(self(np.asarray(pts))))


def _as_vec(x, n, name):
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"{name} must have length {n}, got shape {arr.shape}")
    return arr


@dataclass
class Scenario:
    """Geometry, demand and bounds of one experiment.

    Per-section on-ramp lists hold a :class:`Profile` or ``None`` where the
    section has no on-ramp. Exit rates are 0 where there is no off-ramp.
    """

    lengths: np.ndarray
    exit_rates_a: np.ndarray
    exit_rates_b: np.ndarray
    onramp_demand_a: list
    onramp_demand_b: list
    mainstream_demand_a: Profile
    mainstream_demand_b: Profile
    initial_density_a: np.ndarray
    initial_density_b: np.ndarray
    eps_min: np.ndarray
    eps_max: np.ndarray
    horizon_steps: int
    params: ModelParams = field(default_factory=ModelParams)
    name: str = ""

    def __post_init__(self):
        self.lengths = np.asarray(self.lengths, dtype=float)
        n = self.lengths.size
        if n < 1:
            raise ValueError("scenario needs at least one section")
        self.exit_rates_a = _as_vec(self.exit_rates_a, n, "exit_rates_a")
        self.exit_rates_b = _as_vec(self.exit_rates_b, n, "exit_rates_b")
        self.initial_density_a = _as_vec(self.initial_density_a, n, "initial_density_a")
        self.initial_density_b = _as_vec(self.initial_density_b, n, "initial_density_b")
        self.eps_min = _as_vec(self.eps_min, n, "eps_min")
        self.eps_max = _as_vec(self.eps_max, n, "eps_max")
        self.onramp_demand_a = list(self.onramp_demand_a)
        self.onramp_demand_b = list(self.onramp_demand_b)
        self.validate()

    @property
    def n_sections(self) -> int:
        return self.lengths.size

    @property
    def control_steps(self) -> int:
        return self.horizon_steps // self.params.M

    def validate(self):
        """Check every invariant; raise ``ValueError`` naming the first failure."""
        n, p = self.n_sections, self.params
        if np.any(self.lengths <= 0):
            raise ValueError("lengths: every section length must be positive")
        if p.v_f * p.T_model > self.lengths.min() * (1 + 1e-12):
            raise ValueError(
                f"CFL: v_f * T_model = {p.v_f * p.T_model:.6g} km exceeds the shortest "
                f"section length {self.lengths.min():.6g} km"
            )
        for name in ("exit_rates_a", "exit_rates_b"):
            beta = getattr(self, name)
            if np.any(beta < 0) or np.any(beta >= 1):
                raise ValueError(f"{name}: exit rates must lie in [0, 1)")
        if self.exit_rates_a[0] != 0 or self.exit_rates_b[-1] != 0:
            raise ValueError("exit_rates: the most upstream section of a direction has no off-ramp")
        for name in ("onramp_demand_a", "onramp_demand_b"):
            ramps = getattr(self, name)
            if len(ramps) != n:
                raise ValueError(f"{name} must have one entry per section")
        if self.onramp_demand_a[0] is not None or self.onramp_demand_b[-1] is not None:
            raise ValueError("onramp_demand: the most upstream section of a direction has no on-ramp")
        if self.horizon_steps < 1 or self.horizon_steps % p.M:
            raise ValueError(
                f"horizon_steps must be a positive multiple of M={p.M}, got {self.horizon_steps}"
            )
        t_end = self.horizon_steps * p.T_model
        profiles = [("mainstream_demand_a", self.mainstream_demand_a), ("mainstream_demand_b", self.mainstream_demand_b)]
        profiles += [(f"onramp_demand_a[{i + 1}]", r) for i, r in enumerate(self.onramp_demand_a) if r is not None]
        profiles += [(f"onramp_demand_b[{i + 1}]", r) for i, r in enumerate(self.onramp_demand_b) if r is not None]
        for name, prof in profiles:
            if prof.min_over(t_end) < 0:
                raise ValueError(f"{name}: demand profile must be non-negative over the horizon")
        for name in ("initial_density_a", "initial_density_b"):
            rho = getattr(self, name)
            if np.any(rho < 0) or np.any(rho >= p.rho_max):
                raise ValueError(f"{name}: initial densities must lie in [0, rho_max)")
        if np.any(self.eps_min <= 0) or np.any(self.eps_max >= 1) or np.any(self.eps_min >= self.eps_max):
            raise ValueError("eps bounds: need 0 < eps_min < eps_max < 1 in every section")

    def demand_at(self, k: int):
        """Boundary and ramp inflows at model step ``k``: ``(q0_a, qn1_b, r_a, r_b)``."""
        d = self.sampled_demands()
        return d[0][k], d[1][k], d[2][k], d[3][k]

    def sampled_demands(self):
        """All inflows sampled at ``k * T`` for ``k = 0..K-1``."""
        t = np.arange(self.horizon_steps) * self.params.T_model
        q0a = self.mainstream_demand_a(t)
        qnb = self.mainstream_demand_b(t)
        ra = np.zeros((t.size, self.n_sections))
        rb = np.zeros((t.size, self.n_sections))
        for i, prof in enumerate(self.onramp_demand_a):
            if prof is not None:
                ra[:, i] = prof(t)
        for i, prof in enumerate(self.onramp_demand_b):
            if prof is not None:
                rb[:, i] = prof(t)
        return q0a, qnb, ra, rb

    def with_params(self, params: ModelParams) -> "Scenario":
        """Copy of this scenario with other model parameters (revalidated)."""
        return Scenario(
            lengths=self.lengths.copy(),
            exit_rates_a=self.exit_rates_a.copy(),
            exit_rates_b=self.exit_rates_b.copy(),
            onramp_demand_a=list(self.onramp_demand_a),
            onramp_demand_b=list(self.onramp_demand_b),
            mainstream_demand_a=self.mainstream_demand_a,
            mainstream_demand_b=self.mainstream_demand_b,
            initial_density_a=self.initial_density_a.copy(),
            initial_density_b=self.initial_density_b.copy(),
            eps_min=self.eps_min.copy(),
            eps_max=self.eps_max.copy(),
            horizon_steps=self.horizon_steps,
            params=params,
            name=self.name,
        )


@dataclass
class TrafficState:
    rho_a: np.ndarray
    rho_b: np.ndarray
    eps_prev: np.ndarray

    def copy(self) -> "TrafficState":
        return TrafficState(self.rho_a.copy(), self.rho_b.copy(), self.eps_prev.copy())


@dataclass
class SimulationTrace:
    """Record of one run.

    Density arrays have ``K + 1`` rows (instants ``0..K``); flows, commanded
    and applied sharing factors and the boundary inflows have ``K`` rows.
    """

    rho_a: np.ndarray
    rho_b: np.ndarray
    q_a: np.ndarray
    q_b: np.ndarray
    eps_cmd: np.ndarray
    eps_a: np.ndarray
    eps_b: np.ndarray
    inflow_a: np.ndarray
    inflow_b: np.ndarray
    onramp_a: np.ndarray
    onramp_b: np.ndarray
    lengths: np.ndarray
    T: float

    @property
    def horizon_steps(self) -> int:
        return self.q_a.shape[0]

    @property
    def tts(self) -> float:
        return tts(self)

    def vehicles(self) -> np.ndarray:
        """Vehicles on the stretch at each instant, both directions."""
        return (self.rho_a + self.rho_b) @ self.lengths

    def relative_densities(self, rho_cr: float):
        """Relative densities at instants ``1..K`` against the factor commanded
        over the preceding interval; returns ``(rho_tilde_a, rho_tilde_b)``."""
        return (
            self.rho_a[1:] / (self.eps_cmd * rho_cr),
            self.rho_b[1:] / ((1.0 - self.eps_cmd) * rho_cr),
        )

    def max_relative_density(self, rho_cr: float) -> float:
        ra, rb = self.relative_densities(rho_cr)
        return float(max(ra.max(), rb.max()))

    def to_csv(self, path, delimiter: str = ","):
        """Write one row per (model step, section); see ``TRACE_COLUMNS``.

        The final instant ``K`` has densities only, its other fields are ``nan``.
        """
        K, n = self.q_a.shape
        nan = np.full(n, np.nan)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, delimiter=delimiter)
            w.writerow(TRACE_COLUMNS)
            for k in range(K + 1):
                row_q_a = self.q_a[k] if k < K else nan
                row_q_b = self.q_b[k] if k < K else nan
                e_c = self.eps_cmd[k] if k < K else nan
                e_a = self.eps_a[k] if k < K else nan
                e_b = self.eps_b[k] if k < K else nan
                for i in range(n):
                    vals = (self.rho_a[k, i], self.rho_b[k, i], row_q_a[i], row_q_b[i], e_c[i], e_a[i], e_b[i])
                    w.writerow([k, i + 1] + [f"{v:.9g}" for v in vals])


def apply_delay(eps_now, eps_prev):
    """Sharing factors actually applied to directions a and b.

    The narrowed direction shrinks at once; the widened one waits one
    control interval.
    """
    eps_now = np.asarray(eps_now, dtype=float)
    eps_prev = np.asarray(eps_prev, dtype=float)
    eps_a = np.minimum(eps_now, eps_prev)
    eps_b = np.minimum(1.0 - eps_now, 1.0 - eps_prev)
    return eps_a, eps_b


def compute_flows(state: TrafficState, eps_a, eps_b, demands, scenario: Scenario):
    """Mainstream exit flows of every section for both directions.

    ``demands`` is ``(q0_a, qn1_b, r_a, r_b)`` at the current model step.
    """
    p = scenario.params
    _, _, r_a, r_b = demands
    rho_a, rho_b = state.rho_a, state.rho_b

    dem_a = demand_fn(p, rho_a, eps_a)
    sup_a = supply_fn(p, rho_a, eps_a)
    q_a = dem_a.copy()
    recv_a = sup_a[1:] / (1.0 - scenario.exit_rates_a[1:]) - p.lambda_r * r_a[1:]
    q_a[:-1] = np.minimum(dem_a[:-1], recv_a)

    dem_b = demand_fn(p, rho_b, eps_b)
    sup_b = supply_fn(p, rho_b, eps_b)
    q_b = dem_b.copy()
    recv_b = sup_b[:-1] / (1.0 - scenario.exit_rates_b[:-1]) - p.lambda_r * r_b[:-1]
    q_b[1:] = np.minimum(dem_b[1:], recv_b)

    return np.maximum(q_a, 0.0), np.maximum(q_b, 0.0)


def _inflows(q_a, q_b, demands, scenario: Scenario):
    """Mainstream inflow into each section, after the off-ramp split."""
    q0a, qnb, _, _ = demands
    in_a = np.empty_like(q_a)
    in_a[0] = q0a
    in_a[1:] = (1.0 - scenario.exit_rates_a[1:]) * q_a[:-1]
    in_b = np.empty_like(q_b)
    in_b[-1] = qnb
    in_b[:-1] = (1.0 - scenario.exit_rates_b[:-1]) * q_b[1:]
    return in_a, in_b


def step(state: TrafficState, flows, demands, scenario: Scenario) -> TrafficState:
    """Advance densities by one model step with the conservation law."""
    q_a, q_b = flows
    _, _, r_a, r_b = demands
    in_a, in_b = _inflows(q_a, q_b, demands, scenario)
    h = scenario.params.T_model / scenario.lengths
    rho_a = state.rho_a + h * (in_a - q_a + r_a)
    rho_b = state.rho_b + h * (in_b - q_b + r_b)
    if np.any(rho_a < -1e-9) or np.any(rho_b < -1e-9):
        raise PlantInvariantError("negative density after conservation step")
    return TrafficState(rho_a, rho_b, state.eps_prev)


# policy(k_c, state) -> commanded sharing factors for control interval k_c
Policy = Callable[[int, TrafficState], np.ndarray]


def simulate(scenario: Scenario, policy: Policy, eps_init=0.5) -> SimulationTrace:
    """Run the plant for the whole horizon under ``policy``.

    ``policy`` sees the instantaneous state at ``k = M * k_c``; ``state.eps_prev``
    holds the command of the previous control interval (``eps_init`` before
    the first one).
    """
    n, K, M = scenario.n_sections, scenario.horizon_steps, scenario.params.M
    q0a, qnb, ra, rb = scenario.sampled_demands()
    state = TrafficState(
        scenario.initial_density_a.copy(),
        scenario.initial_density_b.copy(),
        _as_vec(eps_init, n, "eps_init").copy(),
    )
    rho_a = np.empty((K + 1, n))
    rho_b = np.empty((K + 1, n))
    out = {name: np.empty((K, n)) for name in ("q_a", "q_b", "eps_cmd", "eps_a", "eps_b", "in_a", "in_b")}
    rho_a[0], rho_b[0] = state.rho_a, state.rho_b
    eps_cmd = eps_a = eps_b = None
    for k in range(K):
        if k % M == 0:
            eps_cmd = np.asarray(policy(k // M, state), dtype=float)
            eps_a, eps_b = apply_delay(eps_cmd, state.eps_prev)
            state.eps_prev = eps_cmd.copy()
        demands = (q0a[k], qnb[k], ra[k], rb[k])
        q_a, q_b = compute_flows(state, eps_a, eps_b, demands, scenario)
        in_a, in_b = _inflows(q_a, q_b, demands, scenario)
        state = step(state, (q_a, q_b), demands, scenario)
        rho_a[k + 1], rho_b[k + 1] = state.rho_a, state.rho_b
        out["q_a"][k], out["q_b"][k] = q_a, q_b
        out["eps_cmd"][k], out["eps_a"][k], out["eps_b"][k] = eps_cmd, eps_a, eps_b
        out["in_a"][k], out["in_b"][k] = in_a, in_b
    return SimulationTrace(
        rho_a=rho_a,
        rho_b=rho_b,
        q_a=out["q_a"],
        q_b=out["q_b"],
        eps_cmd=out["eps_cmd"],
        eps_a=out["eps_a"],
        eps_b=out["eps_b"],
        inflow_a=out["in_a"],
        inflow_b=out["in_b"],
        onramp_a=ra,
        onramp_b=rb,
        lengths=scenario.lengths.copy(),
        T=scenario.params.T_model,
    )


def run_open_loop(scenario: Scenario, eps_schedule: Optional[Sequence] = None) -> SimulationTrace:
    """Simulate with a precomputed command per control step.

    ``eps_schedule`` has shape ``(K_c, n)`` (a ``(K_c,)`` schedule is
    broadcast over sections); ``None`` holds every factor at 0.5.
    """
    n, Kc = scenario.n_sections, scenario.control_steps
    if eps_schedule is None:
        sched = np.full((Kc, n), 0.5)
    else:
        sched = np.asarray(eps_schedule, dtype=float)
        if sched.ndim == 1:
            sched = np.repeat(sched[:, None], n, axis=1)
        if sched.shape != (Kc, n):
            raise ValueError(f"schedule must have shape ({Kc}, {n}), got {sched.shape}")
        if np.any(sched <= 0) or np.any(sched >= 1):
            raise ValueError("scheduled sharing factors must lie in (0, 1)")
    return simulate(scenario, lambda kc, _state: sched[kc])


def tts(trace: SimulationTrace) -> float:
    """Total time spent [veh h]: ``T * sum_{k=1..K} sum_i L_i (rho_a + rho_b)``."""
    return float(trace.T * np.sum((trace.rho_a[1:] + trace.rho_b[1:]) @ trace.lengths))


def conservation_residual(trace: SimulationTrace) -> np.ndarray:
    """Per-step relative mismatch of the vehicle balance.

    Change in vehicles on the stretch against ``T`` times (mainstream and
    ramp entries minus mainstream exits and off-ramp exits).
    """
    veh = trace.vehicles()
    n = trace.lengths.size
    entries = trace.inflow_a[:, 0] + trace.inflow_b[:, n - 1] + trace.onramp_a.sum(1) + trace.onramp_b.sum(1)
    exits = trace.q_a[:, n - 1] + trace.q_b[:, 0]
    off_a = trace.q_a[:, :-1].sum(1) - trace.inflow_a[:, 1:].sum(1)
    off_b = trace.q_b[:, 1:].sum(1) - trace.inflow_b[:, :-1].sum(1)
    expected = trace.T * (entries - exits - off_a - off_b)
    actual = np.diff(veh)
    scale = np.maximum(np.maximum(np.abs(veh[:-1]), np.abs(veh[1:])), 1.0)
    return np.abs(actual - expected) / scale
