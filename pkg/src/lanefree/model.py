"""Triangular fundamental diagram scaled by the road-width sharing factor.

Units are hours, kilometres and vehicles throughout: speeds in km/h,
densities in veh/km, flows in veh/h, time steps in hours.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

DIRECTIONS = ("a", "b")

_REL_TOL = 1e-9


@dataclass(frozen=True)
class ModelParams:
    """Physical constants of the plant.

    Attributes:
        v_f: free speed [km/h], common to all sections.
        w_s: back-wave speed [km/h].
        q_cap: total cross-road capacity, both directions [veh/h].
        rho_cr: total critical density [veh/km].
        rho_max: total jam density [veh/km].
        lambda_r: capacity-drop coefficient on the on-ramp term of the supply.
        lambda_d: capacity-drop coefficient on the demand function.
        T_model: model time step [h].
        T_control: control time step [h], an integer multiple of ``T_model``.
    """

    v_f: float = 100.0
    w_s: float = 12.0
    q_cap: float = 12000.0
    rho_cr: float = 120.0
    rho_max: float = 1120.0
    lambda_r: float = 1.0
    lambda_d: float = 0.0
    T_model: float = 10.0 / 3600.0
    T_control: float = 60.0 / 3600.0

    def __post_init__(self):
        for name in ("v_f", "w_s", "q_cap", "rho_cr", "rho_max", "T_model", "T_control"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.rho_max <= self.rho_cr:
            raise ValueError("rho_max must exceed rho_cr")
        if not math.isclose(self.q_cap, self.v_f * self.rho_cr, rel_tol=_REL_TOL):
            raise ValueError(
                f"q_cap ({self.q_cap}) must equal v_f * rho_cr ({self.v_f * self.rho_cr})"
            )
        w_expected = self.q_cap / (self.rho_max - self.rho_cr)
        if not math.isclose(self.w_s, w_expected, rel_tol=_REL_TOL):
            raise ValueError(
                f"w_s ({self.w_s}) must equal q_cap / (rho_max - rho_cr) ({w_expected})"
            )
        ratio = self.T_control / self.T_model
        if round(ratio) < 1 or not math.isclose(ratio, round(ratio), rel_tol=_REL_TOL):
            raise ValueError(
                f"T_control must be a positive integer multiple of T_model (ratio {ratio})"
            )
        no_drop = self.lambda_r == 1.0 and self.lambda_d == 0.0
        with_drop = 0.0 < self.lambda_r < 1.0 and 0.0 < self.lambda_d < 1.0
        if not (no_drop or with_drop):
            raise ValueError(
                "(lambda_r, lambda_d) must be (1, 0) or lie in the open unit square, "
                f"got ({self.lambda_r}, {self.lambda_d})"
            )

    @property
    def M(self) -> int:
        """Model steps per control step."""
        return int(round(self.T_control / self.T_model))

    @property
    def capacity_drop(self) -> bool:
        return not (self.lambda_r == 1.0 and self.lambda_d == 0.0)

    def with_capacity_drop(self, enabled: bool, lambda_r: float = 0.7, lambda_d: float = 0.4):
        """Copy with the capacity-drop terms switched on or off."""
        if enabled:
            return replace(self, lambda_r=lambda_r, lambda_d=lambda_d)
        return replace(self, lambda_r=1.0, lambda_d=0.0)


def _check_eps(eps):
    e = np.asarray(eps, dtype=float)
    if np.any(e < 0.0) or np.any(e > 1.0):
        raise ValueError(f"sharing factor out of [0, 1]: {eps}")
    return e


def fd_params_for_direction(params: ModelParams, eps, direction: str):
    """Capacity, critical density and jam density of one direction.

    ``eps`` is the sharing factor of direction a; direction b receives the
    complementary share ``1 - eps``.
    """
    e = _check_eps(eps)
    if direction == "a":
        share = e
    elif direction == "b":
        share = 1.0 - e
    else:
        raise ValueError(f"direction must be 'a' or 'b', got {direction!r}")
    return share * params.q_cap, share * params.rho_cr, share * params.rho_max


def demand_fn(params: ModelParams, rho, eps):
    """Sending flow of a section whose own width share is ``eps``.

    Above the scaled critical density the capacity is reduced linearly by the
    ``lambda_d`` term (its denominator ``rho_cr - rho_max`` is negative).
    """
    rho = np.asarray(rho, dtype=float)
    eps = np.asarray(eps, dtype=float)
    drop = params.lambda_d * params.q_cap * (rho - eps * params.rho_cr) / (
        params.rho_cr - params.rho_max
    )
    return np.minimum(eps * params.q_cap + drop, params.v_f * rho)


def supply_fn(params: ModelParams, rho, eps):
    """Receiving flow of a section whose own width share is ``eps``, clamped at 0."""
    rho = np.asarray(rho, dtype=float)
    eps = np.asarray(eps, dtype=float)
    s = np.minimum(eps * params.q_cap, params.w_s * (eps * params.rho_max - rho))
    return np.maximum(s, 0.0)


def nominal_fd(params: ModelParams, rho):
    """Unscaled triangular FD Q(rho) for the full road width."""
    rho = np.asarray(rho, dtype=float)
    q = np.minimum(params.v_f * rho, params.w_s * (params.rho_max - rho))
    return np.maximum(q, 0.0)
