"""Closed-loop operation of the LQ / LQI sharing-factor regulator.

The regulator runs in incremental form

    eps(k_c) = eps(k_c-1) - Kp (x(k_c) - x(k_c-1)) - KI (rho_tilde_a - rho_tilde_b)

with ``x = [rho_tilde_a; rho_tilde_b; gamma]`` built from density
measurements only. The truncated command is fed back as ``eps(k_c-1)``,
which keeps the integral part from winding up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from lanefree.ctm import Scenario, SimulationTrace, TrafficState, simulate
from lanefree.linearization import relative_density
from lanefree.lq_design import GainSet, WeightConfig, design_gains


@dataclass(frozen=True)
class RegulatorState:
    """Memory of the regulator between control steps.

    A fresh regulator remembers the nominal point (critical relative
    densities, ``gamma = eps0``) as its previous measurement. The
    incremental law then issues exactly ``eps0 - K1 (x - x_nominal)`` on its
    first step, as the absolute LQ law would, even when it is switched on
    into an already congested state.
    """

    eps_prev: np.ndarray
    x_prev: np.ndarray
    mode: str = "lqi"

    @classmethod
    def initial(cls, n: int, eps0: float = 0.5, mode: str = "lqi", x0: Optional[np.ndarray] = None) -> "RegulatorState":
        eps = np.full(n, float(eps0))
        if x0 is None:
            x0 = np.concatenate([np.ones(2 * n), eps])
        return cls(eps_prev=eps, x_prev=np.asarray(x0, dtype=float), mode=mode)

    @property
    def gamma(self) -> np.ndarray:
        return self.eps_prev


def measurement_vector(rho_a, rho_b, eps_prev, rho_cr: float) -> np.ndarray:
    """``[rho_tilde_a; rho_tilde_b; gamma]`` from raw densities."""
    rt_a = relative_density(rho_a, eps_prev, rho_cr, "a")
    rt_b = relative_density(rho_b, eps_prev, rho_cr, "b")
    return np.concatenate([rt_a, rt_b, np.asarray(eps_prev, dtype=float)])


def regulator_step(state: RegulatorState, gains: GainSet, rho_a, rho_b, eps_min, eps_max, rho_cr: float):
    """One control step; returns ``(commanded eps, new state)``."""
    n = gains.n_sections
    x = measurement_vector(rho_a, rho_b, state.eps_prev, rho_cr)
    imbalance = x[:n] - x[n : 2 * n]
    raw = state.eps_prev - gains.Kp @ (x - state.x_prev) - gains.KI @ imbalance
    eps = np.clip(raw, eps_min, eps_max)
    return eps, replace(state, eps_prev=eps, x_prev=x)


def run_closed_loop(
    scenario: Scenario,
    gains: GainSet,
    activation_step: int = 0,
    mode: str = "lqi",
    eps0: float = 0.5,
) -> SimulationTrace:
    """Simulate the plant with the regulator switched on at control step
    ``activation_step``; before that every factor is held at ``eps0``."""
    Kc, n = scenario.control_steps, scenario.n_sections
    if not 0 <= activation_step <= Kc:
        raise ValueError(f"activation_step must lie in [0, {Kc}], got {activation_step}")
    if gains.n_sections != n:
        raise ValueError(f"gains designed for {gains.n_sections} sections, scenario has {n}")
    rho_cr = scenario.params.rho_cr
    reg = {"state": RegulatorState.initial(n, eps0, mode)}
    hold = np.full(n, eps0)

    def policy(kc: int, plant: TrafficState):
        if kc < activation_step:
            return hold
        eps, reg["state"] = regulator_step(
            reg["state"], gains, plant.rho_a, plant.rho_b, scenario.eps_min, scenario.eps_max, rho_cr
        )
        return eps

    return simulate(scenario, policy, eps_init=eps0)


class BoundaryRegulator(BaseEstimator):
    """LQ / LQI internal-boundary regulator with an estimator-style interface.

    ``fit(scenario)`` designs the gains on the scenario's geometry and
    stores them as ``gains_``; ``simulate`` runs the closed loop on any
    scenario with the same number of sections. ``p1=-inf`` gives the pure
    LQ regulator.

    Parameters
    ----------
    p1 : float
        Log10 weight of the integrator states.
    p2 : float
        Log10 weight of the control inputs.
    sigma : float
        Convex weight of the capacity term in the design-model flows.
    """

    def __init__(self, p1: float = -2.5, p2: float = -3.0, sigma: float = 0.95):
        self.p1 = p1
        self.p2 = p2
        self.sigma = sigma

    @property
    def mode(self) -> str:
        return "lq" if self.p1 == -math.inf else "lqi"

    def fit(self, scenario: Scenario, y=None):
        if not isinstance(scenario, Scenario):
            raise TypeError(f"fit expects a Scenario, got {type(scenario).__name__}")
        if not 0.0 <= self.sigma <= 1.0:
            raise ValueError(f"sigma must lie in [0, 1], got {self.sigma}")
        self.gains_ = design_gains(scenario, WeightConfig(self.p1, self.p2), sigma=self.sigma)
        self.n_sections_ = scenario.n_sections
        return self

    def simulate(self, scenario: Scenario, activation_step: int = 0) -> SimulationTrace:
        check_is_fitted(self, "gains_")
        return run_closed_loop(scenario, self.gains_, activation_step=activation_step, mode=self.mode)

    def step(self, state: RegulatorState, rho_a, rho_b, eps_min, eps_max, rho_cr: float = 120.0):
        """Single control step on raw density measurements."""
        check_is_fitted(self, "gains_")
        rho_a = np.asarray(rho_a, dtype=float)
        rho_b = np.asarray(rho_b, dtype=float)
        if rho_a.shape != (self.n_sections_,) or rho_b.shape != (self.n_sections_,):
            raise ValueError(f"expected {self.n_sections_} densities per direction")
        if np.any(rho_a < 0) or np.any(rho_b < 0):
            raise ValueError("densities must be non-negative")
        return regulator_step(state, self.gains_, rho_a, rho_b, eps_min, eps_max, rho_cr)
