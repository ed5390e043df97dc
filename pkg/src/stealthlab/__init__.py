"""Design, simulation and detection of KL-stealthy actuator injection attacks
on linear Gaussian systems observed through a steady-state Kalman filter."""

__version__ = "0.1.0"

from .attacks import (
    AttackPlanA1,
    AttackPlanA2,
    DelayedRightInverse,
    NoAttack,
    build_delayed_right_inverse,
    design_a1,
    design_a2,
    start_runtime,
)
from .kalman import KalmanDesign, design
from .model import StateSpaceModel, StructureReport, validate
from .sim import AttackSpec, ExperimentConfig, estimate_pw, run_closed_loop, simulate, sweep
from .stealth import converse_bound, delta_bar, kld_rate_iid_scaled

__all__ = [
    "AttackPlanA1",
    "AttackPlanA2",
    "AttackSpec",
    "DelayedRightInverse",
    "ExperimentConfig",
    "KalmanDesign",
    "NoAttack",
    "StateSpaceModel",
    "StructureReport",
    "build_delayed_right_inverse",
    "converse_bound",
    "delta_bar",
    "design",
    "design_a1",
    "design_a2",
    "estimate_pw",
    "kld_rate_iid_scaled",
    "run_closed_loop",
    "simulate",
    "start_runtime",
    "sweep",
    "validate",
]
