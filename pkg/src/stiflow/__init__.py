"""Joint template and motion recovery from time-resolved projection data.

The library models a scene as a single template image advected by a
smooth time-dependent velocity field, observed through per-time X-ray
style line projections.  It provides the building blocks (grids and
interpolation, kernel velocity fields, flow integration, advection
solvers, projection operators, smoothing and variation functionals),
a first-order alternating reconstruction driver, and self-contained
verification batteries over the mathematical guarantees each block is
built to satisfy.

Public names resolve lazily on first access so the command line entry
point can cap linear-algebra thread pools before numpy ever loads.
"""

from __future__ import annotations

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    # errors
    "StiflowError": "errors",
    "GridTooSmall": "errors",
    "GridMismatch": "errors",
    "ShapeMismatch": "errors",
    "TimeMismatch": "errors",
    "TimeOutOfRange": "errors",
    "IndexOutOfRange": "errors",
    "EmptySequence": "errors",
    "KernelUnresolvable": "errors",
    "NonPositiveDelta": "errors",
    "NonFiniteTrajectory": "errors",
    "TestFunctionSupportViolation": "errors",
    "LineSearchStall": "errors",
    "UnknownPhantom": "errors",
    "UnknownSuite": "errors",
    "ConfigError": "errors",
    # grids
    "ImageGrid": "grids",
    "TimeGrid": "grids",
    "ScalarField": "grids",
    "interpolate": "grids",
    "interp_adjoint": "grids",
    "integrate": "grids",
    "inner_l2": "grids",
    "norm_l1": "grids",
    "norm_l2": "grids",
    # mollifiers
    "Mollifier": "mollifiers",
    "mollify": "mollifiers",
    "total_variation": "mollifiers",
    "tv_smoothed": "mollifiers",
    "bv_bound_diagnostics": "mollifiers",
    # velocity
    "KernelSpec": "velocity",
    "VelocityField": "velocity",
    "AnalyticVelocity": "velocity",
    "rotation_field": "velocity",
    "translation_field": "velocity",
    "lipschitz_estimate": "velocity",
    # flows
    "FlowMap": "flows",
    "flow_positions": "flows",
    "integrate_flow": "flows",
    "inverse_flow": "flows",
    "compose": "flows",
    "round_trip_deviation": "flows",
    "jacobian_determinant": "flows",
    "hadamard_check": "flows",
    "hadamard_check_batch": "flows",
    "gronwall_jacobian_report": "flows",
    # transport
    "TrajectorySolution": "transport",
    "solve_transport": "transport",
    "solve_dense": "transport",
    "weak_residual": "transport",
    "standard_test_family": "transport",
    "renormalization_residual": "transport",
    "mollified_initialdata_convergence": "transport",
    "stability_probe": "transport",
    # radon
    "AngleSchedule": "radon",
    "Sinogram": "radon",
    "golden_angle_schedule": "radon",
    "radon_forward": "radon",
    "radon_adjoint": "radon",
    "data_term": "radon",
    "sino_inner": "radon",
    "sino_norm_sq": "radon",
    "operator_norm_estimate": "radon",
    # objective
    "ModelConfig": "objective",
    "ModelState": "objective",
    "LogRow": "objective",
    "LOG_COLUMNS": "objective",
    "evaluate_objective": "objective",
    "grad_f0": "objective",
    "grad_v": "objective",
    "minimize": "objective",
    "initial_state": "objective",
    # phantoms
    "PHANTOM_IDS": "phantoms",
    "make_phantom": "phantoms",
    "simulate_data": "phantoms",
    "fit_velocity": "phantoms",
    "smooth_disk": "phantoms",
    # config
    "ExperimentConfig": "config",
    "parse_config": "config",
    "load_config": "config",
    # fileio
    "save_scalar_field": "fileio",
    "load_scalar_field": "fileio",
    "save_velocity_field": "fileio",
    "load_velocity_field": "fileio",
    "save_flow_map": "fileio",
    "load_flow_map": "fileio",
    "save_sinogram": "fileio",
    "load_sinogram": "fileio",
    "save_trajectory": "fileio",
    "load_trajectory": "fileio",
    "write_iteration_log": "fileio",
    "read_iteration_log": "fileio",
    "write_metrics": "fileio",
    "write_png": "fileio",
    # drivers
    "run_reconstruct": "reconstruct",
    "run_verify": "verify",
    "format_report": "verify",
    "SUITE_NAMES": "verify",
}


def __getattr__(name: str):
    try:
        module = _EXPORTS[name]
    except KeyError:
        raise AttributeError(
            f"module {__name__!r} has no attribute {name!r}"
        ) from None
    value = getattr(importlib.import_module(f".{module}", __name__), name)
    globals()[name] = value  # cache so the lookup runs once
    return value


def __dir__():
    return sorted(set(globals()) | set(_EXPORTS))
