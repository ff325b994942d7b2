"""LQ / LQI gain design on the lifted linear model.

The lifted model is augmented with integrators of ``rho_tilde_a - rho_tilde_b``
per section; the stationary gain comes from the backward Riccati recursion
started at ``P = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from lanefree.linearization import LinearModel, NominalPoint, build_design_model
from lanefree.textio import read_matrices, write_matrices


class DesignError(RuntimeError):
    """The Riccati recursion or the gain extraction failed."""


@dataclass(frozen=True)
class WeightConfig:
    """``S = 10**p1 I`` on the integrators (``p1 = -inf`` gives ``S = 0``),
    ``R = 10**p2 I`` on the inputs, ``Q = I`` on relative densities only."""

    p1: float = -2.5
    p2: float = -3.0

    def __post_init__(self):
        if not math.isfinite(self.p2):
            raise ValueError("p2 must be finite so that R is positive definite")
        if math.isnan(self.p1) or self.p1 == math.inf:
            raise ValueError("p1 must be finite or -inf")

    @property
    def integral(self) -> bool:
        return self.p1 != -math.inf

    def matrices(self, n: int):
        """``(Q, S, R)`` for ``n`` sections."""
        Q = np.zeros((3 * n, 3 * n))
        Q[: 2 * n, : 2 * n] = np.eye(2 * n)
        S = 10.0**self.p1 * np.eye(n) if self.integral else np.zeros((n, n))
        R = 10.0**self.p2 * np.eye(n)
        return Q, S, R


def integrator_map(n: int) -> np.ndarray:
    """``H = [I, -I, 0]``: relative density difference per section."""
    return np.hstack([np.eye(n), -np.eye(n), np.zeros((n, n))])


def augment(model: LinearModel, weights: WeightConfig):
    """Augmented ``(A_tilde, B_tilde, Q_tilde, R_tilde)`` on ``[dx; y]``."""
    if model.A_lifted is None or model.B_lifted is None:
        raise ValueError("augment needs a lifted model (see lift_to_control_step)")
    A, B = model.A_lifted, model.B_lifted
    N, n = B.shape
    if A.shape != (N, N) or N != 3 * n:
        raise ValueError(f"inconsistent model dimensions A{A.shape}, B{B.shape}")
    H = integrator_map(n)
    Q, S, R = weights.matrices(n)
    A_t = np.block([[A, np.zeros((N, n))], [H, np.eye(n)]])
    B_t = np.vstack([B, np.zeros((n, n))])
    Q_t = np.block([[Q, np.zeros((N, n))], [np.zeros((n, N)), S]])
    return A_t, B_t, Q_t, R


def _riccati_gain(P, A, B, R):
    BtP = B.T @ P
    return np.linalg.solve(R + BtP @ B, BtP @ A)


def solve_riccati(
    A,
    B,
    Q,
    R,
    tol: float = 1e-9,
    max_iter: int = 100_000,
    monitor: str = "P",
    full_output: bool = False,
):
    """Iterate ``P <- Q + A'(P - P B (R + B'P B)^-1 B'P) A`` from ``P = 0``.

    Stops once the max-abs change of ``P`` (``monitor="P"``) or of the gain
    (``monitor="K"``, for stabilizable but uncontrollable models) drops
    below ``tol``. With ``full_output`` also returns the iteration count and
    the final fixed-point residual of ``P``.
    """
    A, B, Q, R = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (A, B, Q, R))
    if monitor not in ("P", "K"):
        raise ValueError("monitor must be 'P' or 'K'")
    if np.min(np.linalg.eigvalsh((R + R.T) / 2)) <= 0:
        raise DesignError("R must be positive definite")
    P = np.zeros_like(Q)
    K = np.zeros((B.shape[1], A.shape[0]))
    for it in range(1, max_iter + 1):
        PB = P @ B
        G = np.linalg.solve(R + B.T @ PB, PB.T)
        P_new = Q + A.T @ (P - PB @ G) @ A
        P_new = 0.5 * (P_new + P_new.T)
        if monitor == "P":
            change = np.max(np.abs(P_new - P))
        else:
            K_new = _riccati_gain(P_new, A, B, R)
            change = np.max(np.abs(K_new - K))
            K = K_new
        P = P_new
        if change < tol:
            break
    else:
        rho = np.max(np.abs(np.linalg.eigvals(A - B @ _riccati_gain(P, A, B, R))))
        raise DesignError(
            f"Riccati recursion did not converge in {max_iter} iterations "
            f"(last change {change:.3e}, closed-loop spectral radius {rho:.6f})"
        )
    if not full_output:
        return P
    PB = P @ B
    rhs = Q + A.T @ (P - PB @ np.linalg.solve(R + B.T @ PB, PB.T)) @ A
    return P, it, float(np.max(np.abs(P - rhs)))


@dataclass
class GainSet:
    """Designed regulator: ``K = [K1, K2]``, ``Kp = K1 - K2 H``, ``KI = K2``."""

    K: np.ndarray
    H: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_sections(self) -> int:
        return self.K.shape[0]

    @property
    def K1(self) -> np.ndarray:
        return self.K[:, : 3 * self.n_sections]

    @property
    def K2(self) -> np.ndarray:
        return self.K[:, 3 * self.n_sections :]

    @property
    def Kp(self) -> np.ndarray:
        return self.K1 - self.K2 @ self.H

    @property
    def KI(self) -> np.ndarray:
        return self.K2

    def save(self, path):
        write_matrices(path, {"K": self.K, "H": self.H}, meta=self.meta)

    @classmethod
    def load(cls, path) -> "GainSet":
        mats, meta = read_matrices(path)
        parsed = {}
        for key, val in meta.items():
            try:
                parsed[key] = int(val)
            except ValueError:
                try:
                    parsed[key] = float(val)
                except ValueError:
                    parsed[key] = val
        return cls(K=mats["K"], H=mats["H"], meta=parsed)


def extract_gains(P, A_tilde, B_tilde, R_tilde, H, meta: Optional[dict] = None) -> GainSet:
    """``K = (R + B'PB)^-1 B'PA`` by a linear solve, then partitioned."""
    BtP = B_tilde.T @ P
    lhs = R_tilde + BtP @ B_tilde
    if np.linalg.cond(lhs) > 1e14:
        raise DesignError("R + B'PB is numerically singular")
    K = np.linalg.solve(lhs, BtP @ A_tilde)
    return GainSet(K=K, H=np.asarray(H, dtype=float), meta=dict(meta or {}))


def closed_loop_radius(A_tilde, B_tilde, gains: GainSet, integrators: bool = True) -> float:
    """Spectral radius of ``A_tilde - B_tilde K``.

    With ``integrators=False`` only the ``dx`` block is checked; that is the
    relevant loop for a pure LQ design, whose integrator states are neither
    weighted nor fed back.
    """
    Acl = A_tilde - B_tilde @ gains.K
    if not integrators:
        N = 3 * gains.n_sections
        Acl = Acl[:N, :N]
    return float(np.max(np.abs(np.linalg.eigvals(Acl))))


_CACHE: dict = {}


def _design_key(scenario, sigma, weights):
    p = scenario.params
    ramps = tuple(r is not None for r in scenario.onramp_demand_a + scenario.onramp_demand_b)
    return (
        scenario.lengths.tobytes(),
        scenario.exit_rates_a.tobytes(),
        scenario.exit_rates_b.tobytes(),
        ramps,
        (p.v_f, p.q_cap, p.rho_cr, p.T_model, p.T_control),
        float(sigma),
        float(weights.p1),
        float(weights.p2),
    )


def design_gains(
    scenario,
    weights: WeightConfig = WeightConfig(),
    sigma: float = 0.95,
    nominal: Optional[NominalPoint] = None,
    tol: float = 1e-9,
    max_iter: int = 100_000,
    use_cache: bool = True,
) -> GainSet:
    """Full design chain for ``scenario``: linearize, lift, augment, solve, extract.

    Results for the default nominal point are cached on the design inputs;
    capacity-drop settings and demand profiles do not enter the design.
    """
    key = _design_key(scenario, sigma, weights) if nominal is None else None
    if use_cache and key is not None and key in _CACHE:
        return _CACHE[key]
    model = build_design_model(scenario, nominal=nominal, sigma=sigma)
    A_t, B_t, Q_t, R_t = augment(model, weights)
    monitor = "K" if sigma >= 1.0 else "P"
    P, iters, resid = solve_riccati(
        A_t, B_t, Q_t, R_t, tol=1e-10 if monitor == "K" else tol, max_iter=max_iter, monitor=monitor, full_output=True
    )
    n = scenario.n_sections
    meta = {
        "sigma": sigma,
        "p1": weights.p1,
        "p2": weights.p2,
        "n": n,
        "M": scenario.params.M,
        "iterations": iters,
        "residual": resid,
    }
    gains = extract_gains(P, A_t, B_t, R_t, integrator_map(n), meta=meta)
    if use_cache and key is not None:
        _CACHE[key] = gains
    return gains
