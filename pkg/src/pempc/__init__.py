"""Adaptive MPC with offline-generated persistently exciting references.

Library layout:
    model   parametric polynomial dynamics, regressors, linearization
    refgen  periodic reference construction and excitation certificates
    mpc     finite-horizon tracking solver (Levenberg-Marquardt shooting)
    rls     recursive least squares with forgetting factor
    loop    closed-loop simulator, excitation monitor, sweeps
    cli     command-line front end (refgen / simulate / check / sweep)

The numerical kernels have a compiled backend with a pure-Python
fallback; `pempc.kernels.BACKEND` names the active one.
"""

from . import errors
from .kernels import BACKEND
from .loop import ExperimentConfig, PeMonitor, SimTrace, run, sweep
from .model import Linearization, ParametricModel, f0_value, linearize, regressor, step
from .mpc import MpcConfig, MpcSolution, check_hessian_pd, evaluate_cost, solve
from .refgen import (
    Equilibrium,
    InputExcitationCheck,
    PeCertificate,
    ReachabilityReport,
    ReferenceTrajectory,
    certify_pe,
    find_equilibrium,
    generate_pe_reference,
    optimize_pe_reference,
    output_reachability,
    pe_input_check,
    periodic_shoot,
)
from .rls import RlsState, predict_error, rls_update

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Equilibrium",
    "ExperimentConfig",
    "InputExcitationCheck",
    "Linearization",
    "MpcConfig",
    "MpcSolution",
    "ParametricModel",
    "PeCertificate",
    "PeMonitor",
    "ReachabilityReport",
    "ReferenceTrajectory",
    "RlsState",
    "SimTrace",
    "certify_pe",
    "check_hessian_pd",
    "errors",
    "evaluate_cost",
    "f0_value",
    "find_equilibrium",
    "generate_pe_reference",
    "linearize",
    "optimize_pe_reference",
    "output_reachability",
    "pe_input_check",
    "periodic_shoot",
    "predict_error",
    "regressor",
    "rls_update",
    "run",
    "solve",
    "step",
    "sweep",
]
