"""Linear design model in relative densities.

State ordering is ``[rho_tilde_a (n), rho_tilde_b (n), gamma (n)]`` where
``gamma`` is the sharing factor of the previous model step; the input is
the sharing factor vector ``eps``. Flows inside the design model are a
convex combination, weighted by ``sigma``, of the scaled capacity and the
free-flow branch of the demand function.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from lanefree.ctm import Scenario


def relative_density(rho, eps_prev, rho_cr: float, direction: str):
    """Density over the critical density of the width share held last step."""
    e = np.asarray(eps_prev, dtype=float)
    if np.any(e <= 0) or np.any(e >= 1):
        raise ValueError(f"sharing factor must lie strictly inside (0, 1): {eps_prev}")
    if direction == "a":
        share = e
    elif direction == "b":
        share = 1.0 - e
    else:
        raise ValueError(f"direction must be 'a' or 'b', got {direction!r}")
    return np.asarray(rho, dtype=float) / (share * rho_cr)


@dataclass(frozen=True)
class NominalPoint:
    """Operating point of the linearization.

    ``demand_a`` is ``[q_0^a, r_2^a, ..., r_n^a]`` and ``demand_b`` is
    ``[r_1^b, ..., r_{n-1}^b, q_{n+1}^b]`` (veh/h), zero where a section has
    no on-ramp.
    """

    rho_tilde_a: np.ndarray
    rho_tilde_b: np.ndarray
    eps: np.ndarray
    gamma: np.ndarray
    demand_a: np.ndarray
    demand_b: np.ndarray
    sigma: float = 0.95

    def __post_init__(self):
        if not 0.0 <= self.sigma <= 1.0:
            raise ValueError(f"sigma must lie in [0, 1], got {self.sigma}")
        for name in ("rho_tilde_a", "rho_tilde_b", "eps", "gamma", "demand_a", "demand_b"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.eps.size
        for name in ("rho_tilde_a", "rho_tilde_b", "gamma", "demand_a", "demand_b"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have length {n}")
        if np.any(self.gamma <= 0) or np.any(self.gamma >= 1):
            raise ValueError("gamma must lie strictly inside (0, 1)")

    @classmethod
    def for_scenario(
        cls,
        scenario: Scenario,
        sigma: float = 0.95,
        mainstream: float = 5000.0,
        onramp: float = 1000.0,
        eps: float = 0.5,
        rho_tilde: float = 1.0,
    ) -> "NominalPoint":
        """Uniform nominal point: critical relative densities, equal split,
        ``mainstream`` at both boundaries and ``onramp`` at every on-ramp."""
        n = scenario.n_sections
        d_a = np.array([onramp if r is not None else 0.0 for r in scenario.onramp_demand_a])
        d_b = np.array([onramp if r is not None else 0.0 for r in scenario.onramp_demand_b])
        d_a[0] = mainstream
        d_b[-1] = mainstream
        e = np.full(n, eps)
        return cls(
            rho_tilde_a=np.full(n, rho_tilde),
            rho_tilde_b=np.full(n, rho_tilde),
            eps=e,
            gamma=e.copy(),
            demand_a=d_a,
            demand_b=d_b,
            sigma=sigma,
        )

    @property
    def state(self) -> np.ndarray:
        return np.concatenate([self.rho_tilde_a, self.rho_tilde_b, self.gamma])


@dataclass(frozen=True)
class LinearModel:
    """``dx(k+1) = A dx(k) + B du(k)`` and its lift to the control step."""

    A: np.ndarray
    B: np.ndarray
    M: int = 1
    A_lifted: Optional[np.ndarray] = None
    B_lifted: Optional[np.ndarray] = None

    @property
    def n_sections(self) -> int:
        return self.B.shape[1]


def _design_constants(scenario: Scenario):
    p = scenario.params
    c = p.T_model / (scenario.lengths * p.rho_cr)
    return p, c


def nonlinear_f(rho_tilde_a, rho_tilde_b, gamma, eps, demand_a, demand_b, scenario: Scenario, sigma: float):
    """One model step of the design model in relative densities.

    Uses ``eps(k) / eps(k-1) ~ 1``, so the state update divides by ``gamma``
    only. Returns ``(rho_tilde_a, rho_tilde_b, gamma)`` at ``k + 1``.
    """
    p, c = _design_constants(scenario)
    ra = np.asarray(rho_tilde_a, dtype=float)
    rb = np.asarray(rho_tilde_b, dtype=float)
    g = np.asarray(gamma, dtype=float)
    e = np.asarray(eps, dtype=float)
    if np.any(g <= 0) or np.any(g >= 1):
        raise ValueError("gamma must lie strictly inside (0, 1)")
    beta_a, beta_b = scenario.exit_rates_a, scenario.exit_rates_b

    q_a = sigma * e * p.q_cap + (1 - sigma) * p.v_f * ra * g * p.rho_cr
    q_b = sigma * (1 - e) * p.q_cap + (1 - sigma) * p.v_f * rb * (1 - g) * p.rho_cr

    up_a = np.zeros_like(q_a)
    up_a[1:] = (1 - beta_a[1:]) * q_a[:-1]
    up_b = np.zeros_like(q_b)
    up_b[:-1] = (1 - beta_b[:-1]) * q_b[1:]

    next_a = ra + c * (up_a - q_a + np.asarray(demand_a, dtype=float)) / g
    next_b = rb + c * (up_b - q_b + np.asarray(demand_b, dtype=float)) / (1 - g)
    return next_a, next_b, e.copy()


def _f_stacked(x, u, nominal: NominalPoint, scenario: Scenario):
    n = u.size
    fa, fb, fg = nonlinear_f(
        x[:n], x[n : 2 * n], x[2 * n :], u, nominal.demand_a, nominal.demand_b, scenario, nominal.sigma
    )
    return np.concatenate([fa, fb, fg])


def analytic_jacobians(nominal: NominalPoint, scenario: Scenario) -> LinearModel:
    """State and input matrices of the design model at ``nominal``."""
    p, c = _design_constants(scenario)
    n = scenario.n_sections
    s = nominal.sigma
    ra, rb = nominal.rho_tilde_a, nominal.rho_tilde_b
    g, e = nominal.gamma, nominal.eps
    da, db = nominal.demand_a, nominal.demand_b
    beta_a, beta_b = scenario.exit_rates_a, scenario.exit_rates_b
    qc, vf, rc = p.q_cap, p.v_f, p.rho_cr

    A = np.zeros((3 * n, 3 * n))
    B = np.zeros((3 * n, n))
    ia, ib, ig = 0, n, 2 * n
    h = 1 - g

    for i in range(n):
        # direction a: section i is fed by section i-1
        A[ia + i, ia + i] = 1 - c[i] * (1 - s) * vf * rc
        B[ia + i, i] = -c[i] * s * qc / g[i]
        dg = s * e[i] * qc - da[i]
        if i > 0:
            q_up = s * e[i - 1] * qc + (1 - s) * vf * ra[i - 1] * g[i - 1] * rc
            dg -= (1 - beta_a[i]) * q_up
            A[ia + i, ia + i - 1] = c[i] * (1 - beta_a[i]) * (1 - s) * vf * g[i - 1] * rc / g[i]
            B[ia + i, i - 1] = c[i] * (1 - beta_a[i]) * s * qc / g[i]
            A[ia + i, ig + i - 1] = c[i] * (1 - beta_a[i]) * (1 - s) * vf * ra[i - 1] * rc / g[i]
        A[ia + i, ig + i] = c[i] * dg / g[i] ** 2

        # direction b: section i is fed by section i+1
        A[ib + i, ib + i] = 1 - c[i] * (1 - s) * vf * rc
        B[ib + i, i] = c[i] * s * qc / h[i]
        dg = db[i] - s * (1 - e[i]) * qc
        if i < n - 1:
            q_up = s * (1 - e[i + 1]) * qc + (1 - s) * vf * rb[i + 1] * h[i + 1] * rc
            dg += (1 - beta_b[i]) * q_up
            A[ib + i, ib + i + 1] = c[i] * (1 - beta_b[i]) * (1 - s) * vf * h[i + 1] * rc / h[i]
            B[ib + i, i + 1] = -c[i] * (1 - beta_b[i]) * s * qc / h[i]
            A[ib + i, ig + i + 1] = -c[i] * (1 - beta_b[i]) * (1 - s) * vf * rb[i + 1] * rc / h[i]
        A[ib + i, ig + i] = c[i] * dg / h[i] ** 2

    # gamma(k+1) = eps(k)
    B[ig:, :] = np.eye(n)
    return LinearModel(A=A, B=B)


def fd_jacobians(nominal: NominalPoint, scenario: Scenario, h: float = 1e-6):
    """Central-difference Jacobians of :func:`nonlinear_f` at ``nominal``."""
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    x0 = nominal.state
    u0 = nominal.eps.copy()
    n = u0.size
    A = np.empty((3 * n, 3 * n))
    B = np.empty((3 * n, n))
    for j in range(3 * n):
        dx = np.zeros(3 * n)
        dx[j] = h
        A[:, j] = (_f_stacked(x0 + dx, u0, nominal, scenario) - _f_stacked(x0 - dx, u0, nominal, scenario)) / (2 * h)
    for j in range(n):
        du = np.zeros(n)
        du[j] = h
        B[:, j] = (_f_stacked(x0, u0 + du, nominal, scenario) - _f_stacked(x0, u0 - du, nominal, scenario)) / (2 * h)
    return A, B


def lift_to_control_step(model: LinearModel, M: int) -> LinearModel:
    """Hold the input for ``M`` model steps: ``(A^M, (A^{M-1} + ... + I) B)``."""
    if int(M) != M or M < 1:
        raise ValueError(f"M must be a positive integer, got {M}")
    A = model.A
    power = np.eye(A.shape[0])
    acc = np.zeros_like(A)
    for _ in range(int(M)):
        acc = acc + power
        power = power @ A
    return replace(model, M=int(M), A_lifted=power, B_lifted=acc @ model.B)


def controllability_rank(A: np.ndarray, B: np.ndarray, rtol: float = 1e-8) -> int:
    """Numerical rank of ``[B, AB, ..., A^{N-1}B]`` from its singular values."""
    N = A.shape[0]
    blocks = [B]
    for _ in range(N - 1):
        blocks.append(A @ blocks[-1])
    sv = np.linalg.svd(np.hstack(blocks), compute_uv=False)
    return int(np.sum(sv > rtol * sv[0]))


def build_design_model(scenario: Scenario, nominal: Optional[NominalPoint] = None, sigma: float = 0.95) -> LinearModel:
    """Linearize at ``nominal`` (default: uniform point for ``scenario``) and lift by ``M``."""
    if nominal is None:
        nominal = NominalPoint.for_scenario(scenario, sigma=sigma)
    return lift_to_control_step(analytic_jacobians(nominal, scenario), scenario.params.M)
