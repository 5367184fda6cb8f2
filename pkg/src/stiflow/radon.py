"""Sparse-angle parallel-beam projection operator and its adjoint.

Per observation time the forward operator integrates the image along a
small set of rays (a few angles, many detector bins).  Integration is
pixel-driven: sample the image with bilinear interpolation at half-cell
spacing along each ray and sum.  The adjoint applies the exact
transpose of those sampling weights, so the forward/adjoint pair passes
a dot test at machine precision, which is what the optimizer needs.

Angles live in [0, pi).  A ray for (theta, s) is the line through
s*(cos theta, sin theta) in direction (-sin theta, cos theta); rays
span the circumscribed disk of the domain.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from .errors import EmptySequence, IndexOutOfRange, ShapeMismatch
from .grids import ImageGrid, ScalarField, interp_adjoint, interpolate


@dataclass(frozen=True)
class AngleSchedule:
    """Per-observation-time angle sets plus the detector geometry."""

    angles: tuple
    n_det: int
    det_spacing: float

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "angles",
            tuple(tuple(float(a) for a in row) for row in self.angles),
        )
        if self.n_det < 1:
            raise ValueError("need at least one detector bin")
        if not (self.det_spacing > 0.0):
            raise ValueError("detector spacing must be positive")
        for row in self.angles:
            for a in row:
                if not (0.0 <= a < np.pi):
                    raise ValueError(f"angle {a} outside [0, pi)")
        if all(len(row) == 0 for row in self.angles):
            raise EmptySequence("schedule has no angles at any observation time")

    @property
    def num_obs(self) -> int:
        return len(self.angles)

    def angles_for(self, i: int) -> tuple:
        if not (0 <= i < len(self.angles)):
            raise IndexOutOfRange(
                f"observation index {i} outside 0..{len(self.angles) - 1}"
            )
        return self.angles[i]

    @cached_property
    def detector_positions(self) -> np.ndarray:
        k = np.arange(self.n_det, dtype=float)
        return (k - 0.5 * (self.n_det - 1)) * self.det_spacing

    def validate_against(self, grid: ImageGrid) -> float:
        """Check that projecting the constant 1 is nonzero at every
        populated observation time; returns the smallest sup over them."""
        ones = ScalarField(grid, np.ones(grid.shape))
        sups = []
        for i, row in enumerate(self.angles):
            if not row:
                continue
            sino = radon_forward(ones, i, self)
            sup = float(np.abs(sino.values).max())
            if not sup > 0.0:
                raise ValueError(
                    f"projection of the constant field vanishes at index {i}"
                )
            sups.append(sup)
        return min(sups)


def golden_angle_schedule(
    num_obs: int,
    grid: ImageGrid,
    n_angles: int = 10,
    n_det: Optional[int] = None,
    det_spacing: Optional[float] = None,
) -> AngleSchedule:
    """Golden-ratio angle sequence continued across observation times.

    Consecutive observation times get disjoint, maximally spread angle
    sets; detector defaults match the image grid (one bin per column).
    """
    ga = np.pi * (np.sqrt(5.0) - 1.0) / 2.0
    rows = []
    for i in range(num_obs):
        rows.append(
            tuple(((i * n_angles + j) * ga) % np.pi for j in range(n_angles))
        )
    sched = AngleSchedule(
        tuple(rows),
        n_det=grid.nx if n_det is None else n_det,
        det_spacing=grid.h_x if det_spacing is None else det_spacing,
    )
    sched.validate_against(grid)
    return sched


@dataclass
class Sinogram:
    """Line-integral values for one observation time, (angles, bins)."""

    schedule: AngleSchedule
    obs_index: int
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        expected = (len(self.schedule.angles_for(self.obs_index)), self.schedule.n_det)
        if v.shape != expected:
            raise ShapeMismatch(f"sinogram shape {v.shape}, schedule wants {expected}")
        if v.size and not np.all(np.isfinite(v)):
            raise ValueError("sinogram values must be finite")
        self.values = v

    @classmethod
    def zeros(cls, schedule: AngleSchedule, obs_index: int) -> "Sinogram":
        shape = (len(schedule.angles_for(obs_index)), schedule.n_det)
        return cls(schedule, obs_index, np.zeros(shape))


def _ray_geometry(grid: ImageGrid, schedule: AngleSchedule):
    """Sample offsets along a ray and the step weight."""
    radius = 0.5 * np.hypot(grid.x_max - grid.x_min, grid.y_max - grid.y_min)
    target = 0.5 * min(grid.h_x, grid.h_y)
    n = int(np.ceil(2.0 * radius / target))
    du = 2.0 * radius / n
    u = -radius + (np.arange(n) + 0.5) * du
    return u, du


def _ray_points(grid: ImageGrid, schedule: AngleSchedule, theta: float) -> tuple:
    u, du = _ray_geometry(grid, schedule)
    s = schedule.detector_positions
    normal = np.array([np.cos(theta), np.sin(theta)])
    direction = np.array([-np.sin(theta), np.cos(theta)])
    # (n_det, n_samples, 2)
    pts = s[:, None, None] * normal + u[None, :, None] * direction
    return pts, du


def radon_forward(f: ScalarField, i: int, schedule: AngleSchedule) -> Sinogram:
    """Project the image along every scheduled ray at observation i."""
    angles = schedule.angles_for(i)
    out = np.zeros((len(angles), schedule.n_det))
    for a, theta in enumerate(angles):
        pts, du = _ray_points(f.grid, schedule, theta)
        out[a] = interpolate(f, pts).sum(axis=-1) * du
    return Sinogram(schedule, i, out)


def radon_adjoint(
    g: Sinogram, i: int, schedule: AngleSchedule, grid: ImageGrid
) -> ScalarField:
    """Exact transpose of :func:`radon_forward` onto the image grid.

    Adjoint with respect to the detector-weighted sinogram product and
    the cell-area image product, hence the spacing ratio in front of
    the raw transposed scatter.
    """
    angles = schedule.angles_for(i)
    if g.obs_index != i or g.values.shape != (len(angles), schedule.n_det):
        raise ShapeMismatch("sinogram does not match the requested schedule slot")
    acc = np.zeros(grid.shape)
    for a, theta in enumerate(angles):
        pts, du = _ray_points(grid, schedule, theta)
        cot = np.broadcast_to(g.values[a][:, None], pts.shape[:-1]) * du
        acc += interp_adjoint(grid, pts, cot)
    scale = schedule.det_spacing / grid.cell_area
    return ScalarField(grid, acc * scale)


def sino_inner(a: Sinogram, b: Sinogram) -> float:
    """Detector-weighted inner product of two matching sinograms."""
    if a.values.shape != b.values.shape:
        raise ShapeMismatch("sinogram shapes differ")
    return float(a.schedule.det_spacing * np.sum(a.values * b.values))


def sino_norm_sq(a: Sinogram) -> float:
    return sino_inner(a, a)


def data_term(
    f_ti: ScalarField, g_ti: Sinogram, i: int, schedule: AngleSchedule
) -> tuple:
    """Squared projection misfit and its image-space gradient.

    The gradient is taken with respect to the cell-area inner product,
    matching the adjoint scaling, so finite differences of the value
    against ``inner_l2`` reproduce it directly.
    """
    pred = radon_forward(f_ti, i, schedule)
    if pred.values.shape != g_ti.values.shape:
        raise ShapeMismatch("observed sinogram does not match the schedule")
    diff = Sinogram(schedule, i, pred.values - g_ti.values)
    value = sino_norm_sq(diff)
    grad_vals = 2.0 * radon_adjoint(diff, i, schedule, f_ti.grid).values
    return value, ScalarField(f_ti.grid, grad_vals)


def operator_norm_estimate(
    schedule: AngleSchedule,
    i: int,
    grid: ImageGrid,
    iters: int = 50,
    seed: int = 0,
) -> float:
    """Largest singular value of the projector by power iteration."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=grid.shape)
    x /= np.sqrt(np.sum(x * x) * grid.cell_area)
    for _ in range(iters):
        y = radon_adjoint(radon_forward(ScalarField(grid, x), i, schedule), i, schedule, grid)
        norm = np.sqrt(np.sum(y.values**2) * grid.cell_area)
        if norm == 0.0:
            return 0.0
        x = y.values / norm
    top = radon_forward(ScalarField(grid, x), i, schedule)
    return float(np.sqrt(sino_norm_sq(top)))
