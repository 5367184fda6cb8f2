"""Analytic test scenes and synthetic data generation.

Each phantom pairs a template image with a ground-truth velocity field
expressed in the kernel basis: target velocities are interpolated at
the control points through the Gram system, so smooth targets
(constants, rigid rotations) are reproduced to interpolation accuracy
inside the window plateau.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve

from .errors import TimeMismatch, UnknownPhantom
from .grids import ImageGrid, ScalarField, TimeGrid
from .radon import AngleSchedule, Sinogram, radon_forward
from .transport import solve_transport
from .velocity import KernelSpec, VelocityField

PHANTOM_IDS = ("translating_disk", "rotating_bump", "shepp_like_static")

# keeps the moving material inside the window plateau: with sigma 0.25
# the edge ramp tops out half a unit from the boundary
DISK_SPEED = 0.36
ROTATION_RATE = 0.9


def default_kernel_spec(grid: ImageGrid) -> KernelSpec:
    return KernelSpec(image_grid=grid, control_grid=ImageGrid(10, 10), sigma=0.25)


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def smooth_disk(
    grid: ImageGrid,
    cx: float,
    cy: float,
    radius: float,
    edge: float,
    amplitude: float = 1.0,
) -> ScalarField:
    """Disk with a cubic ramp from full value to zero across ``edge``."""
    X, Y = grid.mesh
    r = np.hypot(X - cx, Y - cy)
    return ScalarField(grid, amplitude * _smoothstep((radius + edge - r) / edge))


def fit_velocity(
    spec: KernelSpec, time_grid: TimeGrid, target0, target1=None
) -> VelocityField:
    """Coefficients whose expansion interpolates a target at the controls.

    ``target0`` maps (x, y) arrays to (vx, vy); constant in time unless
    ``target1`` is given, in which case steps blend linearly between the
    two endpoints at interval midpoints.
    """
    c = spec.control_points
    gram = spec.gram + 1e-12 * np.eye(spec.num_controls)

    def solve_for(fn):
        ux, uy = fn(c[:, 0], c[:, 1])
        rhs = np.stack([np.broadcast_to(ux, (spec.num_controls,)),
                        np.broadcast_to(uy, (spec.num_controls,))], axis=1)
        return solve(gram, rhs, assume_a="pos")

    a0 = solve_for(target0)
    if target1 is None:
        alpha = np.broadcast_to(a0, (time_grid.num_steps,) + a0.shape).copy()
    else:
        a1 = solve_for(target1)
        mids = (np.asarray(time_grid.times[:-1]) + np.asarray(time_grid.times[1:])) / 2.0
        alpha = np.stack([(1.0 - m) * a0 + m * a1 for m in mids])
    return VelocityField(spec, time_grid, alpha)


def _shepp_like(grid: ImageGrid) -> ScalarField:
    """A few smooth-edged ellipses loosely echoing a head section."""
    X, Y = grid.mesh
    out = np.zeros(grid.shape)
    # (cx, cy, semi_x, semi_y, angle, amplitude)
    pieces = (
        (0.0, 0.0, 0.62, 0.8, 0.0, 1.0),
        (0.0, 0.02, 0.52, 0.68, 0.0, -0.35),
        (0.2, 0.1, 0.1, 0.22, -0.3, -0.25),
        (-0.2, 0.1, 0.12, 0.26, 0.3, -0.25),
        (0.0, -0.35, 0.16, 0.1, 0.0, 0.3),
        (0.0, 0.38, 0.05, 0.05, 0.0, 0.25),
    )
    edge = 0.05
    for cx, cy, sa, sb, th, amp in pieces:
        xr = (X - cx) * np.cos(th) + (Y - cy) * np.sin(th)
        yr = -(X - cx) * np.sin(th) + (Y - cy) * np.cos(th)
        q = np.sqrt((xr / sa) ** 2 + (yr / sb) ** 2)
        out += amp * _smoothstep((1.0 - q) / edge + 1.0)
    return ScalarField(grid, np.maximum(out, 0.0))


def make_phantom(
    phantom_id: str,
    grid: ImageGrid,
    time_grid: TimeGrid,
    spec: KernelSpec | None = None,
) -> tuple:
    """Ground-truth (template, velocity) pair for a named scene."""
    if spec is None:
        spec = default_kernel_spec(grid)
    if phantom_id == "translating_disk":
        f0 = smooth_disk(grid, -0.18, 0.0, 0.2, 0.08)
        v = fit_velocity(spec, time_grid, lambda x, y: (DISK_SPEED, 0.0))
        return f0, v
    if phantom_id == "rotating_bump":
        X, Y = grid.mesh
        f0 = ScalarField(
            grid, np.exp(-((X - 0.35) ** 2 + Y**2) / (2.0 * 0.13**2))
        )
        v = fit_velocity(
            spec,
            time_grid,
            lambda x, y: (-ROTATION_RATE * y, ROTATION_RATE * x),
        )
        return f0, v
    if phantom_id == "shepp_like_static":
        return _shepp_like(grid), VelocityField.zeros(spec, time_grid)
    raise UnknownPhantom(f"no phantom named {phantom_id!r}")


def simulate_data(
    f0: ScalarField,
    v: VelocityField,
    schedule: AngleSchedule,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> list:
    """Project the transported template at each observation time.

    Gaussian detector noise of standard deviation ``noise_sigma`` is
    drawn from one seeded generator in observation order, so identical
    arguments give bit-identical sinograms.
    """
    if noise_sigma < 0.0:
        raise ValueError("noise level must be nonnegative")
    tg = v.time_grid
    if schedule.num_obs != tg.num_obs:
        raise TimeMismatch(
            f"schedule has {schedule.num_obs} observations, time grid {tg.num_obs}"
        )
    sol = solve_transport(f0, v)
    rng = np.random.default_rng(seed)
    out = []
    for i, t in enumerate(tg.obs_times):
        sino = radon_forward(sol.frame_at(t), i, schedule)
        values = sino.values
        if noise_sigma > 0.0:
            values = values + noise_sigma * rng.standard_normal(values.shape)
        out.append(Sinogram(schedule, i, values))
    return out
