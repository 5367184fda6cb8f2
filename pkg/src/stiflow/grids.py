"""Cell-centered rectangular grids, scalar fields, and time discretization.

The computational domain is a fixed open rectangle, [-1, 1]^2 by default.
Scalar samples live at cell centers and are extended by zero outside the
domain, which matches the compactly supported function classes the model
works in.  Arrays are indexed ``[j, i]`` with ``j`` the y index (outer)
and ``i`` the x index (inner).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import (
    EmptySequence,
    GridMismatch,
    GridTooSmall,
    IndexOutOfRange,
    ShapeMismatch,
    TimeMismatch,
    TimeOutOfRange,
)


@dataclass(frozen=True)
class ImageGrid:
    """Uniform cell-centered grid on an axis-aligned rectangle.

    Sample points sit at cell centers ``x_i = x_min + (i + 1/2) h_x`` and
    ``y_j = y_min + (j + 1/2) h_y`` for ``i < nx``, ``j < ny``.
    """

    nx: int
    ny: int
    x_min: float = -1.0
    x_max: float = 1.0
    y_min: float = -1.0
    y_max: float = 1.0

    def __post_init__(self) -> None:
        if self.nx < 3 or self.ny < 3:
            raise GridTooSmall(
                f"grid must have at least 3 cells per axis, got {self.nx}x{self.ny}"
            )
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError("domain bounds must satisfy min < max on both axes")

    @property
    def h_x(self) -> float:
        return (self.x_max - self.x_min) / self.nx

    @property
    def h_y(self) -> float:
        return (self.y_max - self.y_min) / self.ny

    @property
    def cell_area(self) -> float:
        return self.h_x * self.h_y

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape of fields on this grid: (ny, nx)."""
        return (self.ny, self.nx)

    @cached_property
    def xs(self) -> np.ndarray:
        return self.x_min + (np.arange(self.nx) + 0.5) * self.h_x

    @cached_property
    def ys(self) -> np.ndarray:
        return self.y_min + (np.arange(self.ny) + 0.5) * self.h_y

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate arrays (X, Y), each of shape (ny, nx)."""
        X, Y = np.meshgrid(self.xs, self.ys)
        X.setflags(write=False)
        Y.setflags(write=False)
        return X, Y

    def nodes(self) -> np.ndarray:
        """All cell-center coordinates, shape (ny, nx, 2)."""
        X, Y = self.mesh
        return np.stack([X, Y], axis=-1)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of points lying in the closed rectangle."""
        p = np.asarray(points, dtype=float)
        x, y = p[..., 0], p[..., 1]
        return (
            (x >= self.x_min)
            & (x <= self.x_max)
            & (y >= self.y_min)
            & (y <= self.y_max)
        )

    def boundary_distance(self, points: np.ndarray) -> np.ndarray:
        """Distance to the rectangle boundary (negative outside)."""
        p = np.asarray(points, dtype=float)
        x, y = p[..., 0], p[..., 1]
        return np.minimum(
            np.minimum(x - self.x_min, self.x_max - x),
            np.minimum(y - self.y_min, self.y_max - y),
        )


def require_same_grid(a: "ImageGrid", b: "ImageGrid", what: str = "operands") -> None:
    if a != b:
        raise GridMismatch(f"{what} live on different grids: {a} vs {b}")


@dataclass
class ScalarField:
    """Finite scalar samples at the cell centers of an :class:`ImageGrid`."""

    grid: ImageGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ShapeMismatch(
                f"values shape {v.shape} does not match grid shape {self.grid.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        self.values = v

    @classmethod
    def from_function(cls, grid: ImageGrid, fn: Callable) -> "ScalarField":
        """Sample ``fn(X, Y)`` at the cell centers (``fn`` must broadcast)."""
        X, Y = grid.mesh
        return cls(grid, np.asarray(fn(X, Y), dtype=float) * np.ones(grid.shape))

    @classmethod
    def zeros(cls, grid: ImageGrid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())


def _stencil(grid: ImageGrid, points: np.ndarray):
    """Bilinear stencil data for points of shape (..., 2).

    Returns lower-corner indices (i0, j0), fractional offsets (fx, fy) and
    the inside-domain mask.  Corner indices may fall outside the sample
    lattice; callers must mask them (zero extension).
    """
    p = np.asarray(points, dtype=float)
    x, y = p[..., 0], p[..., 1]
    u = (x - grid.x_min) / grid.h_x - 0.5
    w = (y - grid.y_min) / grid.h_y - 0.5
    i0 = np.floor(u).astype(np.int64)
    j0 = np.floor(w).astype(np.int64)
    fx = u - i0
    fy = w - j0
    inside = (
        (x >= grid.x_min) & (x <= grid.x_max) & (y >= grid.y_min) & (y <= grid.y_max)
    )
    return i0, j0, fx, fy, inside


def _corner_terms(i0, j0, fx, fy):
    # corner offset, x-weight, y-weight
    yield 0, 0, 1.0 - fx, 1.0 - fy
    yield 1, 0, fx, 1.0 - fy
    yield 0, 1, 1.0 - fx, fy
    yield 1, 1, fx, fy


def interpolate(field: ScalarField, points: np.ndarray):
    """Bilinear interpolation of ``field`` at ``points`` of shape (..., 2).

    Sample values outside the cell-center lattice and evaluation points
    outside the closed domain both count as zero, so the interpolant
    extends the field by zero.  Exact for fields affine on the stencil.
    A single point of shape (2,) returns a float.
    """
    grid = field.grid
    i0, j0, fx, fy, inside = _stencil(grid, points)
    acc = np.zeros_like(fx)
    for di, dj, wx, wy in _corner_terms(i0, j0, fx, fy):
        ii, jj = i0 + di, j0 + dj
        ok = (ii >= 0) & (ii < grid.nx) & (jj >= 0) & (jj < grid.ny)
        vals = field.values[jj.clip(0, grid.ny - 1), ii.clip(0, grid.nx - 1)]
        acc += wx * wy * np.where(ok, vals, 0.0)
    acc = np.where(inside, acc, 0.0)
    if np.asarray(points).ndim == 1:
        return float(acc)
    return acc


def interp_adjoint(grid: ImageGrid, points: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
    """Exact transpose of ``f -> interpolate(f, points)`` on raw samples.

    Scatters ``cotangent`` back onto the sample lattice with the same
    bilinear weights.  Returns a (ny, nx) array, so that
    ``sum(interpolate(f, pts) * c) == sum(f.values * interp_adjoint(...))``
    up to round-off.
    """
    i0, j0, fx, fy, inside = _stencil(grid, points)
    c = np.where(inside, np.asarray(cotangent, dtype=float), 0.0)
    out = np.zeros(grid.shape)
    for di, dj, wx, wy in _corner_terms(i0, j0, fx, fy):
        ii, jj = i0 + di, j0 + dj
        ok = (ii >= 0) & (ii < grid.nx) & (jj >= 0) & (jj < grid.ny)
        np.add.at(
            out,
            (jj[ok], ii[ok]),
            (wx * wy * c)[ok],
        )
    return out


def interp_position_gradient(
    field: ScalarField, points: np.ndarray, snap_tol: float = 1e-9
) -> np.ndarray:
    """Gradient of the bilinear interpolant with respect to position.

    Piecewise constant in x across each cell in the x-derivative and
    likewise in y; points outside the closed domain get zero.  On a
    lattice line itself the one-sided slopes differ, so points within
    ``snap_tol`` of a line get the symmetric average of the two
    adjacent cells' slopes (the x-slope is continuous across y-lines
    and vice versa, so the axes snap independently).  Shape of the
    result is ``points.shape``.
    """
    grid = field.grid
    i0, j0, fx, fy, inside = _stencil(grid, points)

    def val(di, dj):
        ii, jj = i0 + di, j0 + dj
        ok = (ii >= 0) & (ii < grid.nx) & (jj >= 0) & (jj < grid.ny)
        v = field.values[jj.clip(0, grid.ny - 1), ii.clip(0, grid.nx - 1)]
        return np.where(ok, v, 0.0)

    f00, f10, f01, f11 = val(0, 0), val(1, 0), val(0, 1), val(1, 1)
    dx = ((f10 - f00) * (1.0 - fy) + (f11 - f01) * fy) / grid.h_x
    dy = ((f01 - f00) * (1.0 - fx) + (f11 - f10) * fx) / grid.h_y

    on_x0, on_x1 = fx < snap_tol, fx > 1.0 - snap_tol
    if np.any(on_x0):
        fm0, fm1 = val(-1, 0), val(-1, 1)
        central = ((f10 - fm0) * (1.0 - fy) + (f11 - fm1) * fy) / (2.0 * grid.h_x)
        dx = np.where(on_x0, central, dx)
    if np.any(on_x1):
        f20, f21 = val(2, 0), val(2, 1)
        central = ((f20 - f00) * (1.0 - fy) + (f21 - f01) * fy) / (2.0 * grid.h_x)
        dx = np.where(on_x1, central, dx)

    on_y0, on_y1 = fy < snap_tol, fy > 1.0 - snap_tol
    if np.any(on_y0):
        g0m, g1m = val(0, -1), val(1, -1)
        central = ((f01 - g0m) * (1.0 - fx) + (f11 - g1m) * fx) / (2.0 * grid.h_y)
        dy = np.where(on_y0, central, dy)
    if np.any(on_y1):
        g02, g12 = val(0, 2), val(1, 2)
        central = ((g02 - f00) * (1.0 - fx) + (g12 - f10) * fx) / (2.0 * grid.h_y)
        dy = np.where(on_y1, central, dy)

    g = np.stack([np.where(inside, dx, 0.0), np.where(inside, dy, 0.0)], axis=-1)
    return g


def gradient_central(field: ScalarField) -> tuple[ScalarField, ScalarField]:
    """Componentwise difference gradient (d/dx, d/dy).

    Central differences in the interior, one-sided on the boundary ring;
    both stencils reproduce linear fields exactly.
    """
    gy, gx = np.gradient(field.values, field.grid.h_y, field.grid.h_x)
    return ScalarField(field.grid, gx), ScalarField(field.grid, gy)


def integrate(field: ScalarField) -> float:
    """Midpoint-rule integral over the domain: cell_area times sample sum."""
    return float(field.grid.cell_area * field.values.sum())


def norm_l1(field: ScalarField) -> float:
    return float(field.grid.cell_area * np.abs(field.values).sum())


def norm_l2(field: ScalarField) -> float:
    return float(np.sqrt(field.grid.cell_area * (field.values**2).sum()))


def norm_linf(field: ScalarField) -> float:
    return float(np.abs(field.values).max())


def inner_l2(a: ScalarField, b: ScalarField) -> float:
    require_same_grid(a.grid, b.grid, "inner product operands")
    return float(a.grid.cell_area * (a.values * b.values).sum())


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, 1] into ``num_steps`` steps.

    ``obs_indices`` marks the time indices at which measured data exists.
    Each observation index must be positive: data at t = 0 would make the
    initial image directly observed, which the model excludes.
    """

    num_steps: int
    obs_indices: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.num_steps < 1:
            raise ValueError("num_steps must be at least 1")
        obs = tuple(int(k) for k in self.obs_indices)
        object.__setattr__(self, "obs_indices", obs)
        for k in obs:
            if not (1 <= k <= self.num_steps):
                raise IndexOutOfRange(
                    f"observation index {k} outside 1..{self.num_steps}"
                )
        if any(b <= a for a, b in zip(obs, obs[1:])):
            raise ValueError("observation indices must be strictly increasing")

    @property
    def dt(self) -> float:
        return 1.0 / self.num_steps

    @cached_property
    def times(self) -> np.ndarray:
        t = np.linspace(0.0, 1.0, self.num_steps + 1)
        t.setflags(write=False)
        return t

    def time_of(self, index: int) -> float:
        if not (0 <= index <= self.num_steps):
            raise IndexOutOfRange(f"time index {index} outside 0..{self.num_steps}")
        return index * self.dt

    @property
    def num_obs(self) -> int:
        return len(self.obs_indices)

    @property
    def obs_times(self) -> tuple[float, ...]:
        if not self.obs_indices:
            raise EmptySequence("time grid has no observation indices")
        return tuple(self.time_of(k) for k in self.obs_indices)

    def interval_of(self, t: float) -> int:
        """Step index k with tau_k <= t < tau_{k+1}; t = 1 joins the last step."""
        if t < 0.0 or t > 1.0:
            raise TimeOutOfRange(f"time {t} outside [0, 1]")
        # small epsilon so times that are exact grid points under round-off
        # land in the interval they start
        k = int(np.floor(t * self.num_steps + 1e-12))
        return min(k, self.num_steps - 1)


def require_same_time_grid(a: TimeGrid, b: TimeGrid, what: str = "operands") -> None:
    if a.num_steps != b.num_steps:
        raise TimeMismatch(f"{what} carry different time grids: {a} vs {b}")
