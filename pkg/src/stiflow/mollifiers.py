"""Standard mollifier, discrete convolution, and total-variation tools.

The mollifier is the classical compactly supported bump
``rho(x) = C exp(1/(|x|^2 - 1))`` for ``|x| < 1``, dilated to radius
``epsilon`` and sampled on the grid stencil.  Renormalization after
sampling makes the discrete mass exactly one, so convolution reproduces
constants and preserves mass for compactly supported fields.

Total variation uses the isotropic forward-difference form
``sum_cells sqrt((D+x f)^2 + (D+y f)^2) * cell_area`` with zero
extension past the last sample row/column.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import (
    EmptySequence,
    GridMismatch,
    KernelUnresolvable,
    NonPositiveDelta,
)
from .grids import ImageGrid, ScalarField, require_same_grid


@dataclass(frozen=True)
class Mollifier:
    """Sampled smoothing kernel of radius ``epsilon`` on a specific grid."""

    grid: ImageGrid
    epsilon: float
    C: float
    kernel_samples: np.ndarray

    @classmethod
    def standard(cls, grid: ImageGrid, epsilon: float) -> "Mollifier":
        """Build the standard bump of radius ``epsilon`` sampled on ``grid``.

        Raises :class:`KernelUnresolvable` when the radius spans fewer
        than two cells, which would make the sampled kernel degenerate.
        """
        h = max(grid.h_x, grid.h_y)
        if epsilon < 2.0 * h:
            raise KernelUnresolvable(
                f"mollifier radius {epsilon} below resolvable limit {2.0 * h}"
            )
        rx = int(np.ceil(epsilon / grid.h_x))
        ry = int(np.ceil(epsilon / grid.h_y))
        ox = np.arange(-rx, rx + 1) * grid.h_x
        oy = np.arange(-ry, ry + 1) * grid.h_y
        OX, OY = np.meshgrid(ox, oy)
        s2 = (OX**2 + OY**2) / epsilon**2
        samples = np.zeros_like(s2)
        core = s2 < 1.0
        samples[core] = np.exp(1.0 / (s2[core] - 1.0))
        scale = 1.0 / (grid.cell_area * samples.sum())
        return cls(grid, float(epsilon), float(scale * epsilon**2), samples * scale)

    @property
    def mass(self) -> float:
        return float(self.grid.cell_area * self.kernel_samples.sum())


def mollify(f: ScalarField, m: Mollifier) -> ScalarField:
    """Discrete convolution ``f * rho_eps`` with zero extension of ``f``."""
    require_same_grid(f.grid, m.grid, "field and mollifier")
    out = fftconvolve(f.values, m.kernel_samples, mode="same") * f.grid.cell_area
    return ScalarField(f.grid, out)


def _forward_diffs(f: ScalarField) -> tuple[np.ndarray, np.ndarray]:
    # zero extension: the difference past the last sample runs against 0
    dx = np.diff(f.values, axis=1, append=0.0) / f.grid.h_x
    dy = np.diff(f.values, axis=0, append=0.0) / f.grid.h_y
    return dx, dy


def _interior_mask(grid: ImageGrid, margin: float) -> np.ndarray:
    if margin <= 0.0:
        return np.ones(grid.shape, dtype=bool)
    return grid.boundary_distance(grid.nodes()) > margin


def total_variation(f: ScalarField, interior_margin: float = 0.0) -> float:
    """Isotropic discrete total variation.

    ``interior_margin > 0`` restricts the cell sum to the subgrid of
    cells more than that distance from the domain boundary (the discrete
    interior domain used by the mollification estimates).
    """
    dx, dy = _forward_diffs(f)
    density = np.hypot(dx, dy)
    mask = _interior_mask(f.grid, interior_margin)
    return float(f.grid.cell_area * density[mask].sum())


def tv_smoothed(f: ScalarField, delta: float) -> tuple[float, ScalarField]:
    """Smoothed total variation and its exact discrete gradient.

    Value is ``sum sqrt(|grad f|^2 + delta^2) * cell_area`` on the same
    forward-difference stencil as :func:`total_variation`, so the value
    always dominates the exact TV.  The returned gradient is the exact
    derivative of the discrete value in the L2 sense, i.e. the negative
    discrete divergence of the normalized gradient field.
    """
    if delta <= 0.0:
        raise NonPositiveDelta(f"smoothing parameter must be positive, got {delta}")
    g = f.grid
    dx, dy = _forward_diffs(f)
    w = np.sqrt(dx**2 + dy**2 + delta**2)
    value = float(g.cell_area * w.sum())
    px = dx / w
    py = dy / w
    # adjoint of the forward difference: backward difference with a
    # zero shifted in ahead of the first row/column
    gx = -px
    gx[:, 1:] += px[:, :-1]
    gy = -py
    gy[1:, :] += py[:-1, :]
    grad = ScalarField(g, gx / g.h_x + gy / g.h_y)
    return value, grad


@dataclass
class BvDiagnostics:
    """Per-element norms of a field sequence plus running maxima."""

    l1: np.ndarray
    linf: np.ndarray
    tv: np.ndarray
    running_max_l1: np.ndarray
    running_max_linf: np.ndarray
    running_max_tv: np.ndarray


def bv_bound_diagnostics(f_seq: list[ScalarField]) -> BvDiagnostics:
    """Boundedness diagnostics for a sequence of fields on a common grid.

    Reports (L1, Linf, TV) per element with running maxima.  This is the
    numerical shadow of uniform BV-boundedness hypotheses; it makes no
    convergence claim.
    """
    if not f_seq:
        raise EmptySequence("bv_bound_diagnostics needs at least one field")
    grid = f_seq[0].grid
    for fk in f_seq[1:]:
        if fk.grid != grid:
            raise GridMismatch("diagnostic sequence spans different grids")
    area = grid.cell_area
    l1 = np.array([area * np.abs(fk.values).sum() for fk in f_seq])
    linf = np.array([np.abs(fk.values).max() for fk in f_seq])
    tv = np.array([total_variation(fk) for fk in f_seq])
    return BvDiagnostics(
        l1=l1,
        linf=linf,
        tv=tv,
        running_max_l1=np.maximum.accumulate(l1),
        running_max_linf=np.maximum.accumulate(linf),
        running_max_tv=np.maximum.accumulate(tv),
    )
