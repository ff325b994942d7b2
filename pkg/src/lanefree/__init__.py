"""Internal boundary control of bidirectional lane-free highway traffic.

Extended cell transmission model with road-width sharing factors, its
linearization around a nominal operating point, and LQ / LQI regulators
designed from the lifted linear model.
"""

from lanefree.model import ModelParams, demand_fn, fd_params_for_direction, supply_fn
from lanefree.ctm import (
    Profile,
    Scenario,
    SimulationTrace,
    TrafficState,
    apply_delay,
    compute_flows,
    run_open_loop,
    step,
    tts,
)
from lanefree.linearization import (
    LinearModel,
    NominalPoint,
    analytic_jacobians,
    fd_jacobians,
    lift_to_control_step,
    nonlinear_f,
    relative_density,
)
from lanefree.lq_design import GainSet, WeightConfig, augment, design_gains, extract_gains, solve_riccati
from lanefree.regulator import BoundaryRegulator, RegulatorState, regulator_step, run_closed_loop

__version__ = "0.1.0"

__all__ = [
    "BoundaryRegulator",
    "GainSet",
    "LinearModel",
    "ModelParams",
    "NominalPoint",
    "Profile",
    "RegulatorState",
    "Scenario",
    "SimulationTrace",
    "TrafficState",
    "WeightConfig",
    "analytic_jacobians",
    "apply_delay",
    "augment",
    "compute_flows",
    "demand_fn",
    "design_gains",
    "extract_gains",
    "fd_jacobians",
    "fd_params_for_direction",
    "lift_to_control_step",
    "nonlinear_f",
    "regulator_step",
    "relative_density",
    "run_closed_loop",
    "run_open_loop",
    "solve_riccati",
    "step",
    "supply_fn",
    "tts",
]
