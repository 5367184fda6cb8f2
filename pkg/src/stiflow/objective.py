"""Joint image/motion objective and its alternating minimizer.

The objective couples three terms over the observation times: projection
misfit of the transported frames, kernel energy of the velocity
coefficients accumulated up to each observation, and smoothed total
variation of the initial image.  Minimization alternates normalized
gradient descent in the image with descent in the coefficient array,
each under Armijo backtracking.

Gradients follow discretize-then-differentiate: grad_f0 applies the
exact transpose of the bilinear pullback (the scatter realizes the
density-weighted composition with the forward flow that the continuous
adjoint prescribes), and grad_v reverse-propagates cotangents through
the recorded RK4 trajectories.  Both are exact for the implemented
objective up to round-off, so finite-difference checks are sharp.

Initial step sizes are fixed multiples of the normalized gradient
direction, which makes the accepted iterate sequence invariant under a
common positive rescaling of all objective terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConfigError, NonFiniteTrajectory, ShapeMismatch, TimeMismatch
from .flows import _spans, flow_positions
from .grids import (
    ImageGrid,
    ScalarField,
    TimeGrid,
    interp_adjoint,
    interp_position_gradient,
    interpolate,
    norm_l1,
    norm_l2,
)
from .mollifiers import total_variation, tv_smoothed
from .radon import AngleSchedule, Sinogram, radon_adjoint, radon_forward
from .velocity import KernelSpec, VelocityField


@dataclass(frozen=True)
class ModelConfig:
    """Weights, smoothing, and iteration policy for the minimizer."""

    mu1: float = 1e-3
    mu2: float = 1e-2
    tv_delta: float = 1e-3
    data_weight: float = 1.0
    max_outer_iters: int = 50
    f0_steps: int = 1
    v_steps: int = 1
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 30
    step_scale_f0: float = 0.2
    step_scale_v: float = 0.2
    rel_tol: float = 1e-6
    substeps_per_interval: int = 4

    def __post_init__(self) -> None:
        if self.mu1 < 0.0:
            raise ConfigError("mu1 must be nonnegative")
        if not (self.mu2 > 0.0):
            raise ConfigError("mu2 must be positive (velocity coercivity)")
        if not (self.tv_delta > 0.0):
            raise ConfigError("tv_delta must be positive")
        if not (self.data_weight > 0.0):
            raise ConfigError("data_weight must be positive")
        if self.max_outer_iters < 1:
            raise ConfigError("need at least one outer iteration")
        if self.f0_steps < 0 or self.v_steps < 0:
            raise ConfigError("inner step counts must be nonnegative")
        if not (0.0 < self.backtrack_factor < 1.0):
            raise ConfigError("backtrack factor must sit in (0, 1)")
        if not (0.0 < self.armijo_c < 1.0):
            raise ConfigError("armijo constant must sit in (0, 1)")
        if self.max_backtracks < 1:
            raise ConfigError("need at least one backtrack")
        if not (self.step_scale_f0 > 0.0 and self.step_scale_v > 0.0):
            raise ConfigError("step scales must be positive")
        if not (self.rel_tol > 0.0):
            raise ConfigError("tolerances must be positive")
        if self.substeps_per_interval < 1:
            raise ConfigError("need at least one substep per interval")


@dataclass
class ObjectiveBreakdown:
    """Per-term values; data and r2 carry the 1/T observation average."""

    value: float
    data: float
    r2: float
    r1_smoothed: float
    r1_exact: float


@dataclass
class LogRow:
    iter: int
    objective: float
    data: float
    r1_exact_tv: float
    r1_smoothed: float
    r2: float
    f0_l1: float
    f0_linf: float
    step_f0: float
    step_v: float
    status: str


LOG_COLUMNS = (
    "iter",
    "objective",
    "data",
    "r1_exact_tv",
    "r1_smoothed",
    "r2",
    "f0_l1",
    "f0_linf",
    "step_f0",
    "step_v",
    "status",
)


@dataclass
class ModelState:
    """Current iterate plus caches tied to it.

    Backward trajectories depend only on the coefficients, so the
    position cache survives image updates and must be dropped whenever
    the velocity changes.
    """

    f0: ScalarField
    v: VelocityField
    frames: Optional[dict] = None
    breakdown: Optional[ObjectiveBreakdown] = None
    termination: str = ""
    _backpos: dict = field(default_factory=dict, repr=False)

    def invalidate_flows(self) -> None:
        self._backpos = {}
        self.frames = None
        self.breakdown = None

    def invalidate_frames(self) -> None:
        self.frames = None
        self.breakdown = None


def _obs_times(tg: TimeGrid) -> tuple:
    return tg.obs_times


def _check_data(state: ModelState, data: Sequence[Sinogram]) -> AngleSchedule:
    tg = state.v.time_grid
    if len(data) != tg.num_obs:
        raise TimeMismatch(
            f"{len(data)} sinograms for {tg.num_obs} observation times"
        )
    if not data:
        raise TimeMismatch("no observations")
    schedule = data[0].schedule
    if schedule.num_obs != tg.num_obs:
        raise ShapeMismatch("angle schedule disagrees with observation count")
    for i, g in enumerate(data):
        if g.obs_index != i or g.schedule != schedule:
            raise ShapeMismatch(f"sinogram {i} does not sit in schedule slot {i}")
    return schedule


def _backward_positions(state: ModelState, cfg: ModelConfig) -> dict:
    if state._backpos:
        return state._backpos
    grid = state.f0.grid
    nodes = grid.nodes()
    out = {}
    for t in _obs_times(state.v.time_grid):
        if t == 0.0:
            out[t] = nodes
        else:
            out[t] = flow_positions(
                state.v, t, 0.0, nodes, cfg.substeps_per_interval
            )
    state._backpos = out
    return out


def _frames_from(
    f0_values: np.ndarray, grid: ImageGrid, backpos: dict
) -> dict:
    f = ScalarField(grid, f0_values)
    return {
        t: ScalarField(grid, interpolate(f, pos)) if t != 0.0 else f.copy()
        for t, pos in backpos.items()
    }


def _r2_terms(v: VelocityField, cfg: ModelConfig) -> float:
    """Observation-averaged accumulated kernel energy."""
    tg = v.time_grid
    gram = v.spec.gram
    dt = tg.dt
    step_energy = np.einsum("kia,ij,kja->k", v.alpha, gram, v.alpha)
    total = 0.0
    for k_obs in tg.obs_indices:
        total += dt * float(step_energy[:k_obs].sum())
    return total / tg.num_obs


def _data_terms(
    frames: dict, data: Sequence[Sinogram], schedule: AngleSchedule, tg: TimeGrid
) -> tuple:
    """Mean misfit and the per-observation residual sinograms."""
    diffs = []
    total = 0.0
    for i, t in enumerate(_obs_times(tg)):
        pred = radon_forward(frames[t], i, schedule)
        diff = pred.values - data[i].values
        diffs.append(Sinogram(schedule, i, diff))
        total += schedule.det_spacing * float(np.sum(diff * diff))
    return total / tg.num_obs, diffs


def evaluate_objective(
    state: ModelState, data: Sequence[Sinogram], cfg: ModelConfig
) -> tuple:
    """Objective value and term breakdown at the current iterate.

    Frames are recomputed from the cached trajectories (or fresh ones)
    and stored on the state, never reused stale.
    """
    schedule = _check_data(state, data)
    tg = state.v.time_grid
    backpos = _backward_positions(state, cfg)
    frames = _frames_from(state.f0.values, state.f0.grid, backpos)
    data_mean, _ = _data_terms(frames, data, schedule, tg)
    r2 = _r2_terms(state.v, cfg)
    r1_s, _ = tv_smoothed(state.f0, cfg.tv_delta)
    r1_exact = total_variation(state.f0)
    value = cfg.data_weight * data_mean + cfg.mu2 * r2 + cfg.mu1 * r1_s
    state.frames = frames
    state.breakdown = ObjectiveBreakdown(
        value=value, data=data_mean, r2=r2, r1_smoothed=r1_s, r1_exact=r1_exact
    )
    return value, state.breakdown


def grad_f0(
    state: ModelState, data: Sequence[Sinogram], cfg: ModelConfig
) -> ScalarField:
    """Gradient of the objective in the initial image, L2 pairing.

    The projection residual at each observation time is back-projected,
    then pulled back to t=0 through the exact transpose of the bilinear
    sampling along the backward trajectories; the cell-density of the
    scatter supplies the Jacobian weighting of the continuous adjoint.
    """
    schedule = _check_data(state, data)
    tg = state.v.time_grid
    grid = state.f0.grid
    backpos = _backward_positions(state, cfg)
    frames = _frames_from(state.f0.values, grid, backpos)
    _, diffs = _data_terms(frames, data, schedule, tg)

    acc = np.zeros(grid.shape)
    for i, t in enumerate(_obs_times(tg)):
        r = 2.0 * radon_adjoint(diffs[i], i, schedule, grid).values
        if t == 0.0:
            acc += r
        else:
            acc += interp_adjoint(grid, backpos[t], r)
    acc *= cfg.data_weight / tg.num_obs

    _, tv_grad = tv_smoothed(state.f0, cfg.tv_delta)
    return ScalarField(grid, acc + cfg.mu1 * tv_grad.values)


def _stage_vjps(spec: KernelSpec, alpha: np.ndarray, pts: np.ndarray):
    """Velocity value plus VJP closures at one batch of stage points."""
    flat = pts.reshape(-1, 2)
    E = spec.kernel_matrix(flat)
    w = spec.window_value(flat)
    wg = spec.window_gradient(flat)
    m = E @ alpha  # unwindowed expansion
    c = spec.control_points
    gx = (E * ((c[:, 0][None, :] - flat[:, 0][:, None]) / spec.sigma**2)) @ alpha
    gy = (E * ((c[:, 1][None, :] - flat[:, 1][:, None]) / spec.sigma**2)) @ alpha

    def vjp_pos(cot: np.ndarray) -> np.ndarray:
        cf = cot.reshape(-1, 2)
        mdot = (m * cf).sum(axis=1)
        out = np.empty_like(cf)
        out[:, 0] = w * (gx * cf).sum(axis=1) + mdot * wg[:, 0]
        out[:, 1] = w * (gy * cf).sum(axis=1) + mdot * wg[:, 1]
        return out.reshape(pts.shape)

    def vjp_alpha(cot: np.ndarray) -> np.ndarray:
        cf = cot.reshape(-1, 2)
        return E.T @ (w[:, None] * cf)

    return vjp_pos, vjp_alpha


def _march_with_tape(v: VelocityField, t: float, substeps: int):
    """Backward trajectories from t to 0 plus the per-substep record.

    Mirrors the flow integrator's stepping exactly so the taped
    positions agree bitwise with the cached ones.
    """
    grid = v.spec.image_grid
    y = grid.nodes().copy()
    tape = []
    for a, b in _spans(v.time_grid, t, 0.0):
        k = v.time_grid.interval_of(0.5 * (a + b))
        h = (b - a) / substeps
        for _ in range(substeps):
            tape.append((k, h, y))
            k1 = v.velocity_at_step(k, y)
            k2 = v.velocity_at_step(k, y + 0.5 * h * k1)
            k3 = v.velocity_at_step(k, y + 0.5 * h * k2)
            k4 = v.velocity_at_step(k, y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y, tape


def _reverse_march(
    v: VelocityField, tape: list, cot: np.ndarray, alpha_bar: np.ndarray
) -> None:
    """Accumulate coefficient cotangents by unwinding one trajectory."""
    q = cot
    for k, h, y in reversed(tape):
        alpha = v.alpha[k]
        k1 = v.velocity_at_step(k, y)
        y2 = y + 0.5 * h * k1
        k2 = v.velocity_at_step(k, y2)
        y3 = y + 0.5 * h * k2
        k3 = v.velocity_at_step(k, y3)
        y4 = y + h * k3

        p1, a1 = _stage_vjps(v.spec, alpha, y)
        p2, a2 = _stage_vjps(v.spec, alpha, y2)
        p3, a3 = _stage_vjps(v.spec, alpha, y3)
        p4, a4 = _stage_vjps(v.spec, alpha, y4)

        kb4 = (h / 6.0) * q
        yb4 = p4(kb4)
        alpha_bar[k] += a4(kb4)

        kb3 = (h / 3.0) * q + h * yb4
        yb3 = p3(kb3)
        alpha_bar[k] += a3(kb3)

        kb2 = (h / 3.0) * q + 0.5 * h * yb3
        yb2 = p2(kb2)
        alpha_bar[k] += a2(kb2)

        kb1 = (h / 6.0) * q + 0.5 * h * yb2
        yb1 = p1(kb1)
        alpha_bar[k] += a1(kb1)

        q = q + yb1 + yb2 + yb3 + yb4


def grad_v(
    state: ModelState, data: Sequence[Sinogram], cfg: ModelConfig
) -> np.ndarray:
    """Exact gradient of the discrete objective in the coefficients.

    Data sensitivities flow backward through each recorded trajectory;
    the kernel-energy term adds its closed-form quadratic gradient,
    weighted by how many observation windows contain each step.
    """
    schedule = _check_data(state, data)
    tg = state.v.time_grid
    grid = state.f0.grid
    v = state.v
    T = tg.num_obs

    alpha_bar = np.zeros_like(v.alpha)
    for i, t in enumerate(_obs_times(tg)):
        if t == 0.0:
            continue
        pos, tape = _march_with_tape(v, t, cfg.substeps_per_interval)
        frame = ScalarField(grid, interpolate(state.f0, pos))
        diff = radon_forward(frame, i, schedule).values - data[i].values
        r = 2.0 * radon_adjoint(
            Sinogram(schedule, i, diff), i, schedule, grid
        ).values
        fbar = (cfg.data_weight / T) * grid.cell_area * r
        pos_cot = fbar[..., None] * interp_position_gradient(state.f0, pos)
        _reverse_march(v, tape, pos_cot, alpha_bar)

    gram = v.spec.gram
    mult = np.array(
        [sum(1 for k_obs in tg.obs_indices if k < k_obs) for k in range(tg.num_steps)],
        dtype=float,
    )
    r2_grad = 2.0 * cfg.mu2 * tg.dt / T * mult[:, None, None] * np.einsum(
        "ij,kja->kia", gram, v.alpha
    )
    return alpha_bar + r2_grad


def _objective_for_f0(
    f0_values: np.ndarray,
    grid: ImageGrid,
    backpos: dict,
    data: Sequence[Sinogram],
    schedule: AngleSchedule,
    tg: TimeGrid,
    r2: float,
    cfg: ModelConfig,
) -> float:
    frames = _frames_from(f0_values, grid, backpos)
    data_mean, _ = _data_terms(frames, data, schedule, tg)
    r1_s, _ = tv_smoothed(ScalarField(grid, f0_values), cfg.tv_delta)
    return cfg.data_weight * data_mean + cfg.mu2 * r2 + cfg.mu1 * r1_s


def _objective_for_alpha(
    alpha: np.ndarray,
    state: ModelState,
    data: Sequence[Sinogram],
    schedule: AngleSchedule,
    cfg: ModelConfig,
    r1_s: float,
) -> float:
    trial = VelocityField(state.v.spec, state.v.time_grid, alpha)
    grid = state.f0.grid
    nodes = grid.nodes()
    tg = trial.time_grid
    frames = {}
    for t in _obs_times(tg):
        if t == 0.0:
            frames[t] = state.f0
        else:
            pos = flow_positions(trial, t, 0.0, nodes, cfg.substeps_per_interval)
            frames[t] = ScalarField(grid, interpolate(state.f0, pos))
    data_mean, _ = _data_terms(frames, data, schedule, tg)
    return cfg.data_weight * data_mean + cfg.mu2 * _r2_terms(trial, cfg) + cfg.mu1 * r1_s


def _log_row(
    it: int, state: ModelState, step_f0: float, step_v: float, status: str
) -> LogRow:
    bd = state.breakdown
    return LogRow(
        iter=it,
        objective=bd.value,
        data=bd.data,
        r1_exact_tv=bd.r1_exact,
        r1_smoothed=bd.r1_smoothed,
        r2=bd.r2,
        f0_l1=norm_l1(state.f0),
        f0_linf=float(np.abs(state.f0.values).max()),
        step_f0=step_f0,
        step_v=step_v,
        status=status,
    )


def minimize(
    state: ModelState, data: Sequence[Sinogram], cfg: ModelConfig
) -> tuple:
    """Alternating Armijo descent; returns (state, list of LogRow).

    The accepted objective sequence is non-increasing by construction;
    a trial that blows up a trajectory counts as a failed backtrack.
    Terminates on relative decrease below tolerance, iteration budget,
    or a stalled line search in both blocks.
    """
    schedule = _check_data(state, data)
    tg = state.v.time_grid
    grid = state.f0.grid
    current, _ = evaluate_objective(state, data, cfg)
    log: List[LogRow] = [_log_row(0, state, 0.0, 0.0, "init")]

    scale_f0 = cfg.step_scale_f0
    scale_v = cfg.step_scale_v

    for it in range(1, cfg.max_outer_iters + 1):
        previous = current
        step_f0_used = 0.0
        step_v_used = 0.0
        f0_progress = True
        v_progress = True

        for _ in range(cfg.f0_steps):
            g = grad_f0(state, data, cfg)
            gnorm = norm_l2(g)
            if gnorm == 0.0:
                break
            backpos = _backward_positions(state, cfg)
            r2 = _r2_terms(state.v, cfg)
            accepted = False
            s = scale_f0
            for _ in range(cfg.max_backtracks):
                trial = state.f0.values - (s / gnorm) * g.values
                val = _objective_for_f0(
                    trial, grid, backpos, data, schedule, tg, r2, cfg
                )
                if val <= current - cfg.armijo_c * s * gnorm:
                    state.f0 = ScalarField(grid, trial)
                    state.invalidate_frames()
                    current = val
                    step_f0_used = s / gnorm
                    scale_f0 = 2.0 * s
                    accepted = True
                    break
                s *= cfg.backtrack_factor
            if not accepted:
                f0_progress = False
                break

        for _ in range(cfg.v_steps):
            g = grad_v(state, data, cfg)
            gnorm = float(np.sqrt(np.sum(g * g)))
            if gnorm == 0.0:
                break
            r1_s, _ = tv_smoothed(state.f0, cfg.tv_delta)
            accepted = False
            s = scale_v
            for _ in range(cfg.max_backtracks):
                trial = state.v.alpha - (s / gnorm) * g
                try:
                    val = _objective_for_alpha(
                        trial, state, data, schedule, cfg, r1_s
                    )
                except NonFiniteTrajectory:
                    val = np.inf
                if val <= current - cfg.armijo_c * s * gnorm:
                    state.v = VelocityField(state.v.spec, tg, trial)
                    state.invalidate_flows()
                    current = val
                    step_v_used = s / gnorm
                    scale_v = 2.0 * s
                    accepted = True
                    break
                s *= cfg.backtrack_factor
            if not accepted:
                v_progress = False
                break

        evaluate_objective(state, data, cfg)
        current = state.breakdown.value

        any_moved = step_f0_used > 0.0 or step_v_used > 0.0
        if not any_moved and not (f0_progress and v_progress):
            state.termination = "line_search_stall"
            log.append(_log_row(it, state, 0.0, 0.0, "line_search_stall"))
            break

        decrease = previous - current
        if decrease <= cfg.rel_tol * max(1.0, abs(previous)):
            state.termination = "converged"
            log.append(
                _log_row(it, state, step_f0_used, step_v_used, "converged")
            )
            break

        status = "ok"
        if not f0_progress:
            status = "f0_stalled"
        elif not v_progress:
            status = "v_stalled"
        log.append(_log_row(it, state, step_f0_used, step_v_used, status))
    else:
        state.termination = "max_iters"
        log[-1].status = "max_iters"

    return state, log


def initial_state(
    data: Sequence[Sinogram],
    schedule: AngleSchedule,
    grid: ImageGrid,
    spec: KernelSpec,
    time_grid: TimeGrid,
) -> ModelState:
    """Default starting point: scaled mean back-projection, still field.

    The scale is the closed-form minimizer of the data term along the
    back-projection direction.
    """
    back = np.zeros(grid.shape)
    for i, g in enumerate(data):
        back += radon_adjoint(g, i, schedule, grid).values
    back /= max(len(data), 1)
    b = ScalarField(grid, back)

    num = 0.0
    den = 0.0
    for i, g in enumerate(data):
        pred = radon_forward(b, i, schedule)
        num += schedule.det_spacing * float(np.sum(pred.values * g.values))
        den += schedule.det_spacing * float(np.sum(pred.values**2))
    scale = num / den if den > 0.0 else 0.0
    f0 = ScalarField(grid, scale * back)
    return ModelState(f0=f0, v=VelocityField.zeros(spec, time_grid))
