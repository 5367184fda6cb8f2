import numpy as np
import pytest

from stiflow.errors import (
    GridMismatch,
    KernelUnresolvable,
    TestFunctionSupportViolation,
    TimeMismatch,
)
from stiflow.grids import ImageGrid, ScalarField, TimeGrid, integrate, norm_l2
from stiflow.mollifiers import Mollifier, mollify
from stiflow.transport import (
    BETA_FUNCTIONS,
    TestFunction,
    TrajectorySolution,
    mollified_initialdata_convergence,
    renormalization_residual,
    solve_dense,
    solve_transport,
    stability_probe,
    standard_test_family,
    weak_residual,
    _tensor_bump,
    _tensor_bump_grad,
)
from stiflow.flows import integrate_flow, jacobian_determinant
from stiflow.velocity import (
    KernelSpec,
    VelocityField,
    lipschitz_estimate,
    rotation_field,
    translation_field,
)


def gaussian(center, width, amplitude=1.0):
    cx, cy = center
    return lambda X, Y: amplitude * np.exp(
        -((X - cx) ** 2 + (Y - cy) ** 2) / (2.0 * width**2)
    )


def disk(center, radius):
    cx, cy = center
    return lambda X, Y: ((X - cx) ** 2 + (Y - cy) ** 2 <= radius**2).astype(float)


def pure_rotation(grid, time_grid, omega):
    return rotation_field(grid, time_grid, omega, r_flat=10.0, r_zero=11.0)


def zero_velocity(n=32, num_steps=4):
    g = ImageGrid(n, n)
    spec = KernelSpec(g, control_grid=ImageGrid(8, 8))
    return VelocityField.zeros(spec, TimeGrid(num_steps))


def scaled_kernel_draw(seed, n_img=32, n_ctrl=12, num_steps=4, lip=0.8):
    g = ImageGrid(n_img, n_img)
    spec = KernelSpec(g, sigma=0.2, control_grid=ImageGrid(n_ctrl, n_ctrl))
    tg = TimeGrid(num_steps)
    rng = np.random.default_rng(seed)
    alpha = rng.normal(size=(num_steps, spec.num_controls, 2))
    v = VelocityField(spec, tg, alpha)
    worst = max(lipschitz_estimate(v, tg.times[k]) for k in range(num_steps))
    return VelocityField(spec, tg, alpha * (lip / worst))


def rotated(fn, theta):
    c, s = np.cos(theta), np.sin(theta)
    # samples fn at the backward-rotated point
    return lambda X, Y: fn(c * X + s * Y, -s * X + c * Y)


def test_zero_velocity_reproduces_initial_image():
    v = zero_velocity()
    g = v.spec.image_grid
    f0 = ScalarField.from_function(g, gaussian((0.2, -0.1), 0.2))
    sol = solve_transport(f0, v, eval_times=[0.0, 0.5, 1.0])
    assert np.array_equal(sol.frame_at(0.0).values, f0.values)
    for t in (0.5, 1.0):
        assert np.max(np.abs(sol.frame_at(t).values - f0.values)) < 1e-13


def test_rotation_transports_bump_to_rotated_bump():
    g = ImageGrid(128, 128)
    v = pure_rotation(g, TimeGrid(4), omega=0.5)
    bump = gaussian((0.3, 0.0), 0.12)
    f0 = ScalarField.from_function(g, bump)
    sol = solve_transport(f0, v, eval_times=[1.0], substeps_per_interval=8)
    oracle = ScalarField.from_function(g, rotated(bump, 0.5))
    err = norm_l2(ScalarField(g, sol.frame_at(1.0).values - oracle.values))
    assert err / norm_l2(oracle) <= 0.02


def test_translation_transports_bump_by_ct():
    g = ImageGrid(128, 128)
    v = translation_field(g, TimeGrid(4), c=(0.25, 0.0))
    bump = gaussian((-0.15, 0.0), 0.12)
    f0 = ScalarField.from_function(g, bump)
    sol = solve_transport(f0, v, eval_times=[1.0])
    oracle = ScalarField.from_function(g, gaussian((0.10, 0.0), 0.12))
    err = norm_l2(ScalarField(g, sol.frame_at(1.0).values - oracle.values))
    assert err / norm_l2(oracle) <= 0.01


def test_eval_times_must_lie_on_the_grid():
    v = zero_velocity(num_steps=4)
    f0 = ScalarField.zeros(v.spec.image_grid)
    with pytest.raises(TimeMismatch):
        solve_transport(f0, v, eval_times=[0.3])
    with pytest.raises(TimeMismatch):
        TrajectorySolution(v.time_grid, (0.5,), ())


def test_maximum_principle_and_constancy():
    v = scaled_kernel_draw(seed=2, n_img=64, lip=0.8)
    g = v.spec.image_grid
    f0 = ScalarField.from_function(g, disk((0.1, 0.0), 0.45))
    sol = solve_dense(f0, v)
    for f in sol.frames:
        assert f.values.min() >= 0.0 - 1e-6
        assert f.values.max() <= 1.0 + 1e-6
    const = ScalarField(g, np.full(g.shape, 3.7))
    sol = solve_dense(const, v)
    for f in sol.frames:
        assert np.max(np.abs(f.values - 3.7)) < 1e-12


def test_transport_is_linear_in_the_initial_image():
    v = scaled_kernel_draw(seed=5)
    g = v.spec.image_grid
    f0 = ScalarField.from_function(g, gaussian((0.2, 0.1), 0.2))
    g0 = ScalarField.from_function(g, disk((-0.2, -0.1), 0.4))
    combo = ScalarField(g, 2.5 * f0.values - 1.3 * g0.values)
    sf = solve_dense(f0, v)
    sg = solve_dense(g0, v)
    sc = solve_dense(combo, v)
    for fc, ff, fg in zip(sc.frames, sf.frames, sg.frames):
        recon = 2.5 * ff.values - 1.3 * fg.values
        assert np.max(np.abs(fc.values - recon)) < 1e-12


def test_mass_follows_change_of_variables():
    v = scaled_kernel_draw(seed=4, n_img=64, n_ctrl=16, num_steps=8, lip=0.6)
    g = v.spec.image_grid
    f0 = ScalarField.from_function(g, gaussian((0.0, 0.0), 0.2))
    sol = solve_transport(f0, v, eval_times=[1.0])
    lhs = integrate(sol.frame_at(1.0))
    det = jacobian_determinant(integrate_flow(v, 0.0, 1.0))
    rhs = integrate(ScalarField(g, f0.values * det.values))
    assert abs(lhs - rhs) / abs(rhs) <= 0.02


def test_weak_residual_zero_data_is_exactly_zero():
    v = zero_velocity()
    f0 = ScalarField.zeros(v.spec.image_grid)
    sol = solve_dense(f0, v)
    assert weak_residual(sol, f0, v) == [0.0, 0.0, 0.0]


def test_weak_residual_static_field_telescopes():
    v = zero_velocity(n=48)
    g = v.spec.image_grid
    f0 = ScalarField.from_function(g, gaussian((0.15, -0.2), 0.25))
    sol = solve_dense(f0, v)
    res = weak_residual(sol, f0, v)
    assert max(abs(r) for r in res) <= 1e-6


def residual_at(n, num_steps, omega=0.8):
    g = ImageGrid(n, n)
    v = rotation_field(g, TimeGrid(num_steps), omega)
    f0 = ScalarField.from_function(g, gaussian((0.25, 0.0), 0.15))
    sol = solve_dense(f0, v)
    return max(abs(r) for r in weak_residual(sol, f0, v))


def test_weak_residual_halves_under_refinement():
    coarse = residual_at(32, 4)
    fine = residual_at(64, 8)
    assert coarse < 0.05
    assert coarse / fine >= 1.8


def test_weak_residual_requires_dense_frames():
    v = zero_velocity()
    f0 = ScalarField.zeros(v.spec.image_grid)
    sparse = solve_transport(f0, v, eval_times=[1.0])
    with pytest.raises(TimeMismatch):
        weak_residual(sparse, f0, v)


def test_test_function_support_is_enforced():
    v = zero_velocity()
    g = v.spec.image_grid
    f0 = ScalarField.zeros(g)
    sol = solve_dense(f0, v)
    wide = TestFunction(
        "wide",
        lambda p: np.ones(np.shape(p)[:-1]),
        lambda p: np.zeros(np.shape(p)),
        lambda t: 1.0 - t,
    )
    with pytest.raises(TestFunctionSupportViolation):
        weak_residual(sol, f0, v, [wide])
    late = TestFunction("late", _tensor_bump, _tensor_bump_grad, lambda t: 1.0)
    with pytest.raises(TestFunctionSupportViolation):
        weak_residual(sol, f0, v, [late])


def test_standard_family_vanishes_where_required():
    fam = standard_test_family()
    assert len(fam) == 3
    for phi in fam:
        assert phi.space(np.array([0.95, 0.0])) == 0.0
        assert abs(phi.q(1.0)) < 1e-14


def test_renormalization_zero_and_static_cases():
    v = zero_velocity()
    g = v.spec.image_grid
    assert renormalization_residual(ScalarField.zeros(g), v, "square") == 0.0
    f0 = ScalarField.from_function(g, gaussian((0.1, 0.1), 0.25))
    for beta in BETA_FUNCTIONS:
        assert renormalization_residual(f0, v, beta) <= 1e-6
    with pytest.raises(ValueError):
        renormalization_residual(f0, v, "tanh")


def renorm_setup(n, num_steps):
    # moderate amplitude keeps the squared trajectory's curvature, and
    # hence its quadrature error, on the scale of the plain one's
    g = ImageGrid(n, n)
    v = rotation_field(g, TimeGrid(num_steps), 0.8)
    f0 = ScalarField.from_function(g, gaussian((0.25, 0.0), 0.15, amplitude=0.4))
    return f0, v


def test_renormalization_tracks_plain_residual():
    f0, v = renorm_setup(32, 4)
    plain = max(abs(r) for r in weak_residual(solve_dense(f0, v), f0, v))
    squared = renormalization_residual(f0, v, "square")
    assert squared <= 2.0 * plain
    f0f, vf = renorm_setup(64, 8)
    finer = renormalization_residual(f0f, vf, "square")
    assert squared / finer >= 1.8


def test_mollified_initialdata_smooth_start():
    g = ImageGrid(192, 192)
    v = pure_rotation(g, TimeGrid(4), 0.5)
    f0 = ScalarField.from_function(g, gaussian((0.1, 0.0), 0.25, amplitude=0.6))
    rep = mollified_initialdata_convergence(f0, v, [0.05, 0.035, 0.025])
    assert rep.errors[0].max() <= 1e-3
    assert rep.strictly_decreasing


def test_mollified_initialdata_disk_start():
    g = ImageGrid(192, 192)
    v = pure_rotation(g, TimeGrid(4), 0.5)
    f0 = ScalarField.from_function(g, disk((0.1, 0.0), 0.5))
    rep = mollified_initialdata_convergence(f0, v, [0.1, 0.05, 0.025])
    assert rep.strictly_decreasing
    assert np.all(np.diff(rep.errors, axis=0) < 0.0)


def test_mollified_initialdata_static_field_matches_mollify():
    v = zero_velocity(n=64)
    g = v.spec.image_grid
    tg = TimeGrid(4, obs_indices=(2, 4))
    v = VelocityField.zeros(v.spec, tg)
    f0 = ScalarField.from_function(g, disk((0.0, 0.0), 0.5))
    rep = mollified_initialdata_convergence(f0, v, [0.1, 0.07])
    for i, eps in enumerate(rep.eps):
        direct = mollify(f0, Mollifier.standard(g, eps))
        gap = float(
            np.sum(np.abs(direct.values - f0.values)) * g.cell_area
        )
        assert np.allclose(rep.errors[i], gap, rtol=1e-10)
    with pytest.raises(KernelUnresolvable):
        mollified_initialdata_convergence(f0, v, [0.01])


def test_stability_constant_sequence_is_flat_zero():
    v = scaled_kernel_draw(seed=1)
    g = v.spec.image_grid
    f0 = ScalarField.from_function(g, gaussian((0.0, 0.2), 0.2))
    rep = stability_probe([f0, f0, f0], [v, v, v], f0, v)
    assert np.all(rep.distances == 0.0)


def test_stability_velocity_amplitude_sequence():
    g = ImageGrid(64, 64)
    tg = TimeGrid(4, obs_indices=(2, 4))
    f0 = ScalarField.from_function(g, gaussian((0.25, 0.0), 0.15))
    v_lim = rotation_field(g, tg, 0.6)
    v_seq = [rotation_field(g, tg, 0.6 * (1.0 + 2.0**-n)) for n in range(1, 5)]
    rep = stability_probe([f0] * 4, v_seq, f0, v_lim)
    assert rep.decreasing
    ratios = rep.distances[:-1] / rep.distances[1:]
    assert np.all(ratios >= 1.6) and np.all(ratios <= 2.6)


def test_stability_mollified_sequence_respects_jacobian_bound():
    v = scaled_kernel_draw(seed=4, n_img=64, n_ctrl=16, num_steps=4, lip=0.5)
    g = v.spec.image_grid
    f0 = ScalarField.from_function(g, gaussian((0.0, 0.0), 0.2))
    seq = [
        mollify(f0, Mollifier.standard(g, eps)) for eps in (0.12, 0.09, 0.07)
    ]
    rep = stability_probe(seq, [v] * 3, f0, v)
    assert rep.decreasing
    assert np.all(rep.distances <= rep.cov_bounds * 1.05 + 1e-12)


def test_stability_probe_input_validation():
    v = zero_velocity()
    g = v.spec.image_grid
    f0 = ScalarField.zeros(g)
    with pytest.raises(ValueError):
        stability_probe([f0], [v, v], f0, v)
    other = ScalarField.zeros(ImageGrid(48, 48))
    with pytest.raises(GridMismatch):
        stability_probe([other], [v], f0, v)
