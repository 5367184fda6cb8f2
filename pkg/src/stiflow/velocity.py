"""Gaussian kernel velocity fields with an intrinsic norm.

The admissible space of motions is realized as a reproducing-kernel
space: a field is a Gaussian-kernel expansion over a control-point
lattice, multiplied by a boundary window so it vanishes on the domain
boundary.  The norm is the Gram quadratic form of the unwindowed
expansion, so norm computations stay exact while the window keeps every
evaluated field inside the vanishing-at-the-boundary class.

Velocities are piecewise constant on the time grid: one coefficient
array per step ``[tau_k, tau_{k+1})``.

:class:`AnalyticVelocity` wraps closed-form fields (rigid rotation,
uniform translation with smooth tapers) behind the same evaluation
protocol; phantoms and convergence oracles use it, the optimizer only
ever sees :class:`VelocityField`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .errors import IndexOutOfRange, ShapeMismatch
from .grids import ImageGrid, ScalarField, TimeGrid


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _smoothstep_deriv(t: np.ndarray) -> np.ndarray:
    inside = (t > 0.0) & (t < 1.0)
    return np.where(inside, 6.0 * t * (1.0 - t), 0.0)


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian kernel width, control lattice, and boundary window.

    ``image_grid`` fixes where field-valued outputs (divergence, window
    samples, Lipschitz scans) are evaluated.  The window is an analytic
    product of per-edge ramps: exactly zero within ``edge_margin`` of the
    boundary (one image cell by default, so every boundary-ring node
    evaluates to zero) and exactly one at distance 2*sigma or more.
    """

    image_grid: ImageGrid
    sigma: float = 0.2
    control_grid: Optional[ImageGrid] = None
    edge_margin: Optional[float] = None

    def __post_init__(self) -> None:
        if self.sigma <= 0:
            raise ValueError(f"kernel width must be positive, got {self.sigma}")
        if self.control_grid is None:
            g = self.image_grid
            object.__setattr__(
                self,
                "control_grid",
                ImageGrid(16, 16, g.x_min, g.x_max, g.y_min, g.y_max),
            )
        if self.edge_margin is None:
            g = self.image_grid
            object.__setattr__(self, "edge_margin", max(g.h_x, g.h_y))
        if 2.0 * self.sigma <= self.edge_margin:
            raise ValueError("edge margin must stay below the 2*sigma window ramp")

    @cached_property
    def control_points(self) -> np.ndarray:
        pts = self.control_grid.nodes().reshape(-1, 2)
        pts.setflags(write=False)
        return pts

    @property
    def num_controls(self) -> int:
        return self.control_grid.nx * self.control_grid.ny

    @cached_property
    def gram(self) -> np.ndarray:
        K = self.kernel_matrix(self.control_points)
        K.setflags(write=False)
        return K

    def kernel_matrix(self, points: np.ndarray) -> np.ndarray:
        """Gaussian kernel values K(p, x_j), shape (num points, num controls)."""
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        c = self.control_points
        d2 = (
            (p**2).sum(axis=1)[:, None]
            + (c**2).sum(axis=1)[None, :]
            - 2.0 * (p @ c.T)
        )
        np.maximum(d2, 0.0, out=d2)
        return np.exp(-d2 / (2.0 * self.sigma**2))

    def _edge_ramps(self, points: np.ndarray):
        g = self.image_grid
        p = np.asarray(points, dtype=float)
        m, top = self.edge_margin, 2.0 * self.sigma
        span = top - m
        out = []
        for d in (
            p[..., 0] - g.x_min,
            g.x_max - p[..., 0],
            p[..., 1] - g.y_min,
            g.y_max - p[..., 1],
        ):
            t = (d - m) / span
            out.append((_smoothstep(t), _smoothstep_deriv(t) / span))
        return out

    def window_value(self, points: np.ndarray) -> np.ndarray:
        ramps = self._edge_ramps(points)
        w = np.ones_like(np.asarray(points, dtype=float)[..., 0])
        for r, _ in ramps:
            w = w * r
        return w

    def window_gradient(self, points: np.ndarray) -> np.ndarray:
        """Analytic gradient of the window, shape points.shape."""
        (rxl, dxl), (rxr, dxr), (ryb, dyb), (ryt, dyt) = self._edge_ramps(points)
        wx = rxl * rxr
        wy = ryb * ryt
        gx = (dxl * rxr - rxl * dxr) * wy
        gy = wx * (dyb * ryt - ryb * dyt)
        return np.stack([gx, gy], axis=-1)

    @cached_property
    def boundary_window(self) -> ScalarField:
        """The window sampled on the image grid."""
        return ScalarField(self.image_grid, self.window_value(self.image_grid.nodes()))


@dataclass
class VelocityField:
    """Piecewise-constant-in-time windowed kernel expansion.

    ``alpha`` has shape (num_steps, num_controls, 2): coefficient
    2-vectors per control point, one block per time step.
    """

    spec: KernelSpec
    time_grid: TimeGrid
    alpha: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.alpha, dtype=float)
        want = (self.time_grid.num_steps, self.spec.num_controls, 2)
        if a.shape != want:
            raise ShapeMismatch(f"alpha shape {a.shape}, expected {want}")
        if not np.all(np.isfinite(a)):
            raise ValueError("velocity coefficients must be finite")
        self.alpha = a

    @classmethod
    def zeros(cls, spec: KernelSpec, time_grid: TimeGrid) -> "VelocityField":
        return cls(spec, time_grid, np.zeros((time_grid.num_steps, spec.num_controls, 2)))

    def step_of(self, t: float) -> int:
        return self.time_grid.interval_of(t)

    def _expansion(self, k: int, points: np.ndarray) -> np.ndarray:
        """Unwindowed expansion sum_j K(p, x_j) alpha_j at step k."""
        p = np.asarray(points, dtype=float)
        E = self.spec.kernel_matrix(p.reshape(-1, 2))
        u = E @ self.alpha[k]
        return u.reshape(p.shape)

    def velocity_at(self, t: float, points: np.ndarray) -> np.ndarray:
        """Field value w(p) * expansion(p) at arbitrary points (..., 2)."""
        k = self.step_of(t)
        return self.velocity_at_step(k, points)

    def velocity_at_step(self, k: int, points: np.ndarray) -> np.ndarray:
        if not (0 <= k < self.time_grid.num_steps):
            raise IndexOutOfRange(f"step {k} outside 0..{self.time_grid.num_steps - 1}")
        u = self._expansion(k, points)
        w = self.spec.window_value(points)
        return w[..., None] * u

    def expansion_jacobian_at(self, k: int, points: np.ndarray):
        """Unwindowed expansion value and its spatial Jacobian at step k.

        Returns ``(u, Ju)`` with shapes (..., 2) and (..., 2, 2);
        ``Ju[..., a, b]`` is the derivative of component a along axis b.
        """
        p = np.asarray(points, dtype=float)
        flat = p.reshape(-1, 2)
        E = self.spec.kernel_matrix(flat)
        a = self.alpha[k]
        u = E @ a
        s2 = self.spec.sigma**2
        c = self.spec.control_points
        Ju = np.empty((flat.shape[0], 2, 2))
        for b in range(2):
            # d/dx_b K(p, x_j) = -(p_b - x_jb)/sigma^2 * K
            Eb = E * (c[None, :, b] - flat[:, None, b]) / s2
            Ju[:, :, b] = Eb @ a
        return u.reshape(p.shape), Ju.reshape(p.shape + (2,))

    def jacobian_at(self, t: float, points: np.ndarray) -> np.ndarray:
        """Analytic Jacobian of the windowed field, shape (..., 2, 2)."""
        k = self.step_of(t)
        u, Ju = self.expansion_jacobian_at(k, points)
        w = self.spec.window_value(points)
        gw = self.spec.window_gradient(points)
        return w[..., None, None] * Ju + u[..., :, None] * gw[..., None, :]

    def divergence_at(self, t: float, points: np.ndarray) -> np.ndarray:
        J = self.jacobian_at(t, points)
        return J[..., 0, 0] + J[..., 1, 1]


def eval_velocity(v, t: float, p: np.ndarray) -> np.ndarray:
    """Velocity value at a single point or an array of points."""
    return v.velocity_at(t, np.asarray(p, dtype=float))


def v_norm_sq(v: VelocityField, t_index: int) -> float:
    """Intrinsic squared norm of the step-``t_index`` field.

    The Gram quadratic form of the unwindowed expansion, summed over the
    two coefficient components.
    """
    if not (0 <= t_index < v.time_grid.num_steps):
        raise IndexOutOfRange(
            f"step {t_index} outside 0..{v.time_grid.num_steps - 1}"
        )
    a = v.alpha[t_index]
    return float(np.einsum("ia,ij,ja->", a, v.spec.gram, a))


def r2_energy(v: VelocityField, up_to: int) -> float:
    """Time-integrated squared norm over [0, t_i] for an observation index."""
    if up_to not in v.time_grid.obs_indices:
        raise IndexOutOfRange(
            f"index {up_to} is not an observation index {v.time_grid.obs_indices}"
        )
    dt = v.time_grid.dt
    return dt * sum(v_norm_sq(v, k) for k in range(up_to))


def divergence_field(v, t: float) -> ScalarField:
    """Analytic divergence sampled on the image grid."""
    grid = v.spec.image_grid if isinstance(v, VelocityField) else v.grid
    return ScalarField(grid, v.divergence_at(t, grid.nodes()))


def _spectral_norms_2x2(J: np.ndarray) -> np.ndarray:
    a, b = J[..., 0, 0], J[..., 0, 1]
    c, d = J[..., 1, 0], J[..., 1, 1]
    s1 = np.sqrt((a - d) ** 2 + (b + c) ** 2)
    s2 = np.sqrt((a + d) ** 2 + (b - c) ** 2)
    return 0.5 * (s1 + s2)


def lipschitz_estimate(v, t: float) -> float:
    """Max spectral norm of the field Jacobian over the image-grid nodes.

    A sampled surrogate for the Lipschitz constant of v(t, .); exact up
    to the grid resolving the kernel scale.
    """
    grid = v.spec.image_grid if isinstance(v, VelocityField) else v.grid
    J = v.jacobian_at(t, grid.nodes())
    return float(_spectral_norms_2x2(J).max())


@dataclass
class AnalyticVelocity:
    """Closed-form velocity behind the same evaluation protocol.

    ``velocity(t, points)``, and optionally ``divergence`` and
    ``jacobian``, are callables over point arrays of shape (..., 2).
    Used for phantoms and for oracles where the field must be exact.
    """

    grid: ImageGrid
    time_grid: TimeGrid
    velocity: Callable
    divergence: Optional[Callable] = None
    jacobian: Optional[Callable] = None

    def velocity_at(self, t: float, points: np.ndarray) -> np.ndarray:
        self.time_grid.interval_of(t)  # range check
        return np.asarray(self.velocity(t, np.asarray(points, dtype=float)))

    def divergence_at(self, t: float, points: np.ndarray) -> np.ndarray:
        if self.divergence is None:
            raise NotImplementedError("field has no divergence callable")
        return np.asarray(self.divergence(t, np.asarray(points, dtype=float)))

    def jacobian_at(self, t: float, points: np.ndarray) -> np.ndarray:
        if self.jacobian is None:
            raise NotImplementedError("field has no jacobian callable")
        return np.asarray(self.jacobian(t, np.asarray(points, dtype=float)))


def _plateau(r: np.ndarray, flat: float, zero: float):
    """C1 radial plateau: 1 for r <= flat, 0 for r >= zero. Returns (tau, dtau/dr)."""
    t = (zero - r) / (zero - flat)
    return _smoothstep(t), -_smoothstep_deriv(t) / (zero - flat)


def rotation_field(
    grid: ImageGrid,
    time_grid: TimeGrid,
    omega: float,
    r_flat: float = 0.7,
    r_zero: float = 0.95,
) -> AnalyticVelocity:
    """Rigid rotation omega*(-y, x) with a C1 radial taper.

    The taper keeps the field radius-preserving everywhere, so points
    starting inside the flat disk rotate at exactly ``omega`` for all
    time; the field is divergence free everywhere.
    """

    def vel(t, p):
        x, y = p[..., 0], p[..., 1]
        r = np.hypot(x, y)
        tau, _ = _plateau(r, r_flat, r_zero)
        return omega * tau[..., None] * np.stack([-y, x], axis=-1)

    def div(t, p):
        return np.zeros_like(np.asarray(p)[..., 0])

    def jac(t, p):
        x, y = p[..., 0], p[..., 1]
        r = np.hypot(x, y)
        tau, dtau = _plateau(r, r_flat, r_zero)
        rsafe = np.where(r > 1e-12, r, 1.0)
        gr = np.where(r > 1e-12, dtau / rsafe, 0.0)  # (dtau/dr)/r
        J = np.empty(np.asarray(p).shape[:-1] + (2, 2))
        J[..., 0, 0] = omega * gr * (-y) * x
        J[..., 0, 1] = omega * (gr * (-y) * y - tau)
        J[..., 1, 0] = omega * (gr * x * x + tau)
        J[..., 1, 1] = omega * gr * x * y
        return J

    return AnalyticVelocity(grid, time_grid, vel, div, jac)


def translation_field(
    grid: ImageGrid,
    time_grid: TimeGrid,
    c: tuple[float, float],
    flat_halfwidth: float = 0.45,
    zero_halfwidth: float = 0.9,
) -> AnalyticVelocity:
    """Uniform translation by ``c`` inside a C1 box taper.

    Exactly ``c`` on the centered square of half-width ``flat_halfwidth``
    and zero outside half-width ``zero_halfwidth``.
    """
    cx, cy = float(c[0]), float(c[1])

    def parts(p):
        x, y = p[..., 0], p[..., 1]
        px, dpx = _plateau(np.abs(x), flat_halfwidth, zero_halfwidth)
        py, dpy = _plateau(np.abs(y), flat_halfwidth, zero_halfwidth)
        return x, y, px, dpx * np.sign(x), py, dpy * np.sign(y)

    def vel(t, p):
        _, _, px, _, py, _ = parts(p)
        w = px * py
        return np.stack([cx * w, cy * w], axis=-1)

    def div(t, p):
        _, _, px, dpx, py, dpy = parts(p)
        return cx * dpx * py + cy * px * dpy

    def jac(t, p):
        _, _, px, dpx, py, dpy = parts(p)
        J = np.empty(np.asarray(p).shape[:-1] + (2, 2))
        J[..., 0, 0] = cx * dpx * py
        J[..., 0, 1] = cx * px * dpy
        J[..., 1, 0] = cy * dpx * py
        J[..., 1, 1] = cy * px * dpy
        return J

    return AnalyticVelocity(grid, time_grid, vel, div, jac)
