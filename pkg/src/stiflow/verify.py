"""Verification batteries over the library's mathematical guarantees.

Five suites, each a list of measured checks against fixed numeric
bounds at desk scale:

  flow       pointwise determinant inequality, group laws, integrator
             order, growth and determinant bounds on random fields
  transport  analytic-advection accuracy, maximum principle, linearity,
             weak-form residual decay, compositions of the solution,
             perturbation-sequence stability
  mollifier  kernel mass, indicator smoothing error, variation control
  radon      adjoint consistency, chord accuracy, positivity
  gradients  finite-difference agreement for both model gradients

``run_verify`` aggregates suites into a plain-dict report (JSON ready)
plus a process exit code; ``format_report`` renders the human table.
Fixtures are built locally so the battery stands alone in installed
copies of the package, with no test files present.
"""

from __future__ import annotations

import time

import numpy as np

from .errors import UnknownSuite
from .flows import (
    compose,
    gronwall_jacobian_report,
    hadamard_check_batch,
    integrate_flow,
    inverse_flow,
    _position_jacobian,
)
from .grids import ImageGrid, ScalarField, TimeGrid, norm_l1, norm_l2
from .mollifiers import Mollifier, mollify, total_variation
from .objective import ModelConfig, ModelState, evaluate_objective, grad_f0, grad_v
from .radon import (
    AngleSchedule,
    Sinogram,
    golden_angle_schedule,
    radon_adjoint,
    radon_forward,
    sino_inner,
)
from .transport import (
    BETA_FUNCTIONS,
    renormalization_residual,
    solve_dense,
    solve_transport,
    stability_probe,
    weak_residual,
)
from .velocity import (
    KernelSpec,
    VelocityField,
    lipschitz_estimate,
    rotation_field,
    translation_field,
)

SUITE_NAMES = ("flow", "transport", "mollifier", "radon", "gradients")

_OPS = {
    "<=": lambda a, b: a <= b,
    ">=": lambda a, b: a >= b,
    "<": lambda a, b: a < b,
    ">": lambda a, b: a > b,
    "==": lambda a, b: a == b,
}


def _check(name: str, value: float, op: str, bound: float) -> dict:
    value = float(value)
    bound = float(bound)
    return {
        "name": name,
        "value": value,
        "op": op,
        "bound": bound,
        "passed": bool(_OPS[op](value, bound)),
    }


def _pure_rotation(grid, tg, omega):
    # taper radii outside the domain: affine rigid rotation everywhere
    return rotation_field(grid, tg, omega, r_flat=10.0, r_zero=11.0)


def _rotated_nodes(grid, theta):
    c, s = np.cos(theta), np.sin(theta)
    return grid.nodes() @ np.array([[c, -s], [s, c]]).T


def _kernel_draw(seed, n_img=32, n_ctrl=12, num_steps=4, lip=0.8):
    """Random coefficient field rescaled to a prescribed Lipschitz level."""
    g = ImageGrid(n_img, n_img)
    spec = KernelSpec(g, sigma=0.2, control_grid=ImageGrid(n_ctrl, n_ctrl))
    tg = TimeGrid(num_steps)
    rng = np.random.default_rng(seed)
    alpha = rng.normal(size=(num_steps, spec.num_controls, 2))
    v = VelocityField(spec, tg, alpha)
    worst = max(lipschitz_estimate(v, tg.times[k]) for k in range(num_steps))
    return VelocityField(spec, tg, alpha * (lip / worst))


def _gaussian(grid, cx, cy, width, amplitude=1.0):
    X, Y = grid.mesh
    values = amplitude * np.exp(
        -((X - cx) ** 2 + (Y - cy) ** 2) / (2.0 * width**2)
    )
    return ScalarField(grid, values)


def _disk(grid, cx, cy, radius):
    X, Y = grid.mesh
    return ScalarField(
        grid, ((X - cx) ** 2 + (Y - cy) ** 2 <= radius**2).astype(float)
    )


def suite_flow() -> list:
    checks = []

    rng = np.random.default_rng(0)
    A = rng.uniform(-1.0, 1.0, size=(100_000, 2, 2))
    holds = hadamard_check_batch(A)[3]
    violations = int((~holds).sum())

    jac_violations = 0
    for v in (
        _pure_rotation(ImageGrid(32, 32), TimeGrid(4), 1.5),
        _kernel_draw(seed=7),
        _kernel_draw(seed=11),
    ):
        F = integrate_flow(v, 0.0, 1.0)
        J = _position_jacobian(F)[1:-1, 1:-1]
        jac_violations += int((~hadamard_check_batch(J)[3]).sum())
    checks.append(_check("hadamard_random_violations", violations, "==", 0))
    checks.append(_check("hadamard_flow_jacobian_violations", jac_violations, "==", 0))

    g = ImageGrid(64, 64)
    v = _pure_rotation(g, TimeGrid(16), omega=2.0)
    nodes = g.nodes()
    interior = np.hypot(nodes[..., 0], nodes[..., 1]) <= 0.9

    def round_trip(substeps):
        fwd = integrate_flow(v, 0.0, 1.0, substeps)
        rt = compose(fwd, inverse_flow(v, 1.0, substeps))
        return float(np.abs(rt.positions - nodes)[interior].max())

    d4, d16 = round_trip(4), round_trip(16)
    checks.append(_check("round_trip_error", d4, "<=", 1e-3))
    checks.append(_check("round_trip_refinement_factor", d4 / d16, ">=", 8.0))

    s, r, t = 0.1, 0.437, 0.9

    def semigroup(substeps):
        direct = integrate_flow(v, s, t, substeps)
        chained = compose(
            integrate_flow(v, s, r, substeps), integrate_flow(v, r, t, substeps)
        )
        return float(np.abs(direct.positions - chained.positions)[interior].max())

    e2, e8 = semigroup(2), semigroup(8)
    checks.append(_check("semigroup_error", e2, "<=", 1e-3))
    checks.append(_check("semigroup_refinement_factor", e2 / e8, ">=", 8.0))

    g48 = ImageGrid(48, 48)
    v48 = _pure_rotation(g48, TimeGrid(16), omega=2.0)
    target = _rotated_nodes(g48, 2.0)
    errs = [
        float(np.abs(integrate_flow(v48, 0.0, 1.0, m).positions - target).max())
        for m in (1, 2, 4)
    ]
    order = min(np.log2(errs[i] / errs[i + 1]) for i in range(2))
    checks.append(_check("rk4_measured_order", order, ">=", 3.7))

    lip_ratio = det_ratio = 0.0
    det_floor = np.inf
    for seed in range(10):
        vk = _kernel_draw(seed=seed, lip=0.8)
        for horizon in (0.5, 1.0):
            rep = gronwall_jacobian_report(vk, horizon)
            lip_ratio = max(lip_ratio, rep.lip_flow / rep.lip_bound)
            det_ratio = max(det_ratio, rep.det_max / (2.0 * rep.lip_flow**2))
            det_floor = min(det_floor, rep.det_min)
    checks.append(_check("gronwall_lip_ratio", lip_ratio, "<=", 1.05))
    checks.append(_check("jacobian_det_ratio", det_ratio, "<=", 1.05))
    checks.append(_check("jacobian_det_min", det_floor, ">", 0.0))
    return checks


def _advect_field(kind, grid, tg):
    if kind == "rotation":
        return rotation_field(grid, tg, 0.8)
    return translation_field(grid, tg, c=(0.25, 0.0))


def _advect_data(kind, grid):
    if kind == "smooth":
        return _gaussian(grid, 0.25, 0.0, 0.15)
    return _disk(grid, 0.1, 0.0, 0.3)


def _weak_residual_level(field_kind, data_kind, n, num_steps):
    g = ImageGrid(n, n)
    v = _advect_field(field_kind, g, TimeGrid(num_steps))
    f0 = _advect_data(data_kind, g)
    sol = solve_dense(f0, v)
    return max(abs(r) for r in weak_residual(sol, f0, v))


def suite_transport() -> list:
    checks = []

    g = ImageGrid(128, 128)
    v = _pure_rotation(g, TimeGrid(4), omega=0.5)
    f0 = _gaussian(g, 0.3, 0.0, 0.12)
    sol = solve_transport(f0, v, eval_times=[1.0], substeps_per_interval=8)
    c, s = np.cos(0.5), np.sin(0.5)
    X, Y = g.mesh
    back_x, back_y = c * X + s * Y, -s * X + c * Y
    oracle = ScalarField(
        g,
        np.exp(-((back_x - 0.3) ** 2 + back_y**2) / (2.0 * 0.12**2)),
    )
    err = norm_l2(ScalarField(g, sol.frame_at(1.0).values - oracle.values))
    checks.append(_check("rotation_l2_rel_error", err / norm_l2(oracle), "<=", 0.02))

    vk = _kernel_draw(seed=2, n_img=64, lip=0.8)
    gk = vk.spec.image_grid
    sol = solve_dense(_disk(gk, 0.1, 0.0, 0.45), vk)
    violation = 0.0
    for f in sol.frames:
        violation = max(violation, -float(f.values.min()), float(f.values.max()) - 1.0)
    checks.append(_check("max_principle_violation", max(violation, 0.0), "<=", 1e-6))

    vl = _kernel_draw(seed=5)
    gl = vl.spec.image_grid
    fa = _gaussian(gl, 0.2, 0.1, 0.2)
    fb = _disk(gl, -0.2, -0.1, 0.4)
    combo = ScalarField(gl, 2.5 * fa.values - 1.3 * fb.values)
    sa, sb, sc = solve_dense(fa, vl), solve_dense(fb, vl), solve_dense(combo, vl)
    dev = max(
        float(np.abs(fc.values - 2.5 * ff.values + 1.3 * fg.values).max())
        for fc, ff, fg in zip(sc.frames, sa.frames, sb.frames)
    )
    checks.append(_check("linearity_deviation", dev, "<=", 1e-10))

    worst_coarse = 0.0
    for field_kind in ("translation", "rotation"):
        for data_kind in ("smooth", "indicator"):
            coarse = _weak_residual_level(field_kind, data_kind, 32, 4)
            fine = _weak_residual_level(field_kind, data_kind, 64, 8)
            worst_coarse = max(worst_coarse, coarse)
            checks.append(
                _check(
                    f"weak_residual_halving_{field_kind}_{data_kind}",
                    coarse / fine,
                    ">=",
                    1.8,
                )
            )
    checks.append(_check("weak_residual_coarse_level", worst_coarse, "<=", 0.05))

    def renorm_setup(n, num_steps):
        gr = ImageGrid(n, n)
        vr = rotation_field(gr, TimeGrid(num_steps), 0.8)
        return _gaussian(gr, 0.25, 0.0, 0.15, amplitude=0.4), vr

    f0c, vc = renorm_setup(32, 4)
    f0f, vf = renorm_setup(64, 8)
    plain = max(abs(r) for r in weak_residual(solve_dense(f0c, vc), f0c, vc))
    for beta in BETA_FUNCTIONS:
        rc = renormalization_residual(f0c, vc, beta)
        rf = renormalization_residual(f0f, vf, beta)
        checks.append(_check(f"renormalization_{beta}_vs_plain", rc / plain, "<=", 2.0))
        checks.append(_check(f"renormalization_{beta}_halving", rc / rf, ">=", 1.8))

    gs = ImageGrid(64, 64)
    tgs = TimeGrid(4, obs_indices=(2, 4))
    fs = _gaussian(gs, 0.25, 0.0, 0.15)
    v_lim = rotation_field(gs, tgs, 0.6)
    v_seq = [rotation_field(gs, tgs, 0.6 * (1.0 + 2.0**-n)) for n in range(1, 5)]
    rep = stability_probe([fs] * 4, v_seq, fs, v_lim)
    drop = float(np.min(rep.distances[:-1] - rep.distances[1:]))
    checks.append(_check("stability_amplitude_strict_drop", drop, ">", 0.0))

    vm = _kernel_draw(seed=4, n_img=64, n_ctrl=16, num_steps=4, lip=0.5)
    gm = vm.spec.image_grid
    fm = _gaussian(gm, 0.0, 0.0, 0.2)
    seq = [mollify(fm, Mollifier.standard(gm, eps)) for eps in (0.12, 0.09, 0.07)]
    rep = stability_probe(seq, [vm] * 3, fm, vm)
    drop = float(np.min(rep.distances[:-1] - rep.distances[1:]))
    checks.append(_check("stability_mollified_strict_drop", drop, ">", 0.0))
    ratio = float(np.max(rep.distances / rep.cov_bounds))
    checks.append(_check("stability_cov_bound_ratio", ratio, "<=", 1.05))
    return checks


def suite_mollifier() -> list:
    checks = []
    g = ImageGrid(256, 256)
    f = _disk(g, 0.0, 0.0, 0.5)
    base_tv = total_variation(f)
    eps_schedule = (0.1, 0.05, 0.025)

    mass_err = max(
        abs(Mollifier.standard(g, eps).mass - 1.0) for eps in eps_schedule
    )
    checks.append(_check("kernel_mass_error", mass_err, "<=", 1e-10))

    errs = []
    tv_excess = -np.inf
    annulus_ratio = 0.0
    for eps in eps_schedule:
        m = Mollifier.standard(g, eps)
        smoothed = mollify(f, m)
        err = norm_l1(ScalarField(g, smoothed.values - f.values))
        errs.append(err)
        annulus_ratio = max(annulus_ratio, err / (4.0 * np.pi * 0.5 * eps))
        tv_excess = max(
            tv_excess, total_variation(smoothed, interior_margin=eps) - base_tv
        )
    checks.append(_check("disk_l1_annulus_ratio", annulus_ratio, "<=", 1.0))
    drop = min(errs[i] - errs[i + 1] for i in range(len(errs) - 1))
    checks.append(_check("disk_l1_strict_drop", drop, ">", 0.0))
    checks.append(_check("tv_non_increase_excess", tv_excess, "<=", 1e-8))
    return checks


def suite_radon() -> list:
    checks = []
    g = ImageGrid(64, 64)
    sched = golden_angle_schedule(1, g, n_angles=10)
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(20):
        f = ScalarField(g, rng.normal(size=g.shape))
        q = Sinogram(sched, 0, rng.normal(size=(10, sched.n_det)))
        lhs = sino_inner(radon_forward(f, 0, sched), q)
        rhs = float(
            g.cell_area
            * (f.values * radon_adjoint(q, 0, sched, g).values).sum()
        )
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs)))
    checks.append(_check("dot_test_rel_error", worst, "<=", 1e-6))

    gc = ImageGrid(256, 256)
    chord_sched = AngleSchedule(((0.0, 0.7, 1.3, 2.2),), 256, gc.h_x)
    r = 0.5
    sino = radon_forward(_disk(gc, 0.0, 0.0, r), 0, chord_sched)
    s = chord_sched.detector_positions
    keep = np.abs(s) <= 0.8 * r
    chord = 2.0 * np.sqrt(np.maximum(r**2 - s[keep] ** 2, 0.0))
    rel = max(
        float((np.abs(sino.values[a][keep] - chord) / chord).max())
        for a in range(4)
    )
    checks.append(_check("disk_chord_rel_error", rel, "<=", 0.02))

    full = golden_angle_schedule(4, g)
    ones = ScalarField(g, np.ones(g.shape))
    min_bin = min(
        float(radon_forward(ones, i, full).values.min()) for i in range(4)
    )
    checks.append(_check("constant_projection_min", min_bin, ">", 0.0))
    return checks


def _objective_value(grid, spec, tg, data, cfg, f0_values, alpha):
    st = ModelState(
        f0=ScalarField(grid, f0_values), v=VelocityField(spec, tg, alpha)
    )
    return evaluate_objective(st, data, cfg)[0]


def suite_gradients() -> list:
    checks = []
    eps = 1e-5

    rng = np.random.default_rng(19)
    grid = ImageGrid(32, 32)
    tg = TimeGrid(2, obs_indices=(1, 2))
    spec = KernelSpec(image_grid=grid, control_grid=ImageGrid(3, 3), sigma=0.45)
    v = VelocityField(spec, tg, 0.3 * rng.standard_normal((2, 9, 2)))
    f0 = ScalarField(grid, rng.standard_normal(grid.shape) * 0.3)
    sched = golden_angle_schedule(2, grid, n_angles=4)
    data = [
        Sinogram(sched, i, 0.2 * rng.standard_normal((4, sched.n_det)))
        for i in range(2)
    ]
    cfg = ModelConfig(mu1=3e-3, mu2=2e-2, substeps_per_interval=2)

    gimg = grad_f0(ModelState(f0=f0, v=v), data, cfg)
    d = rng.standard_normal(grid.shape)
    d /= np.sqrt((d * d).sum())
    fd = (
        _objective_value(grid, spec, tg, data, cfg, f0.values + eps * d, v.alpha)
        - _objective_value(grid, spec, tg, data, cfg, f0.values - eps * d, v.alpha)
    ) / (2.0 * eps)
    an = float(grid.cell_area * (gimg.values * d).sum())
    checks.append(_check("grad_f0_fd_rel_error", abs(fd - an) / abs(fd), "<=", 1e-4))

    rng = np.random.default_rng(7)
    grid = ImageGrid(16, 16)
    tg = TimeGrid(2, obs_indices=(1, 2))
    spec = KernelSpec(image_grid=grid, control_grid=ImageGrid(3, 3), sigma=0.45)
    alpha = 0.3 * rng.standard_normal((2, 9, 2))
    v = VelocityField(spec, tg, alpha)
    f0 = _gaussian(grid, 0.1, -0.15, 0.3, 0.8)
    sched = golden_angle_schedule(2, grid, n_angles=4)
    data = [
        Sinogram(sched, i, 0.1 * rng.standard_normal((4, sched.n_det)))
        for i in range(2)
    ]
    cfg = ModelConfig(mu1=2e-3, mu2=5e-2, substeps_per_interval=2)

    gv = grad_v(ModelState(f0=f0, v=v), data, cfg)
    d = np.random.default_rng(70).standard_normal(alpha.shape)
    d /= np.sqrt((d * d).sum())
    fd = (
        _objective_value(grid, spec, tg, data, cfg, f0.values, alpha + eps * d)
        - _objective_value(grid, spec, tg, data, cfg, f0.values, alpha - eps * d)
    ) / (2.0 * eps)
    an = float((gv * d).sum())
    checks.append(_check("grad_v_fd_rel_error", abs(fd - an) / abs(fd), "<=", 1e-3))
    return checks


_SUITE_FUNCS = {
    "flow": suite_flow,
    "transport": suite_transport,
    "mollifier": suite_mollifier,
    "radon": suite_radon,
    "gradients": suite_gradients,
}


def run_verify(suite: str) -> tuple[dict, int]:
    """Run one named suite, or all of them, and report.

    Returns (report, exit_code): code 0 when every check passed, 4
    otherwise.  Unknown suite names raise UnknownSuite.
    """
    if suite == "all":
        names = SUITE_NAMES
    elif suite in _SUITE_FUNCS:
        names = (suite,)
    else:
        raise UnknownSuite(
            f"unknown suite {suite!r}; choose from {', '.join(SUITE_NAMES)} or all"
        )
    suites = []
    for name in names:
        start = time.perf_counter()
        checks = _SUITE_FUNCS[name]()
        suites.append(
            {
                "suite": name,
                "elapsed_seconds": round(time.perf_counter() - start, 3),
                "passed": all(c["passed"] for c in checks),
                "checks": checks,
            }
        )
    passed = all(s["passed"] for s in suites)
    report = {"requested": suite, "passed": passed, "suites": suites}
    return report, 0 if passed else 4


def format_report(report: dict) -> str:
    """Human-readable pass/fail table for a run_verify report."""
    lines = []
    for s in report["suites"]:
        lines.append(f"suite {s['suite']}  ({s['elapsed_seconds']:.1f} s)")
        for c in s["checks"]:
            status = "PASS" if c["passed"] else "FAIL"
            lines.append(
                f"  {status}  {c['name']:<42s} {c['value']:>12.5g} "
                f"{c['op']} {c['bound']:g}"
            )
    total = sum(len(s["checks"]) for s in report["suites"])
    failed = sum(
        1 for s in report["suites"] for c in s["checks"] if not c["passed"]
    )
    if failed:
        lines.append(f"{failed} of {total} checks FAILED")
    else:
        lines.append(f"all {total} checks passed")
    return "\n".join(lines)
