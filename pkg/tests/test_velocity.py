import numpy as np
import pytest

from stiflow.errors import IndexOutOfRange, ShapeMismatch, TimeOutOfRange
from stiflow.grids import ImageGrid, TimeGrid
from stiflow.velocity import (
    AnalyticVelocity,
    KernelSpec,
    VelocityField,
    divergence_field,
    eval_velocity,
    lipschitz_estimate,
    r2_energy,
    rotation_field,
    translation_field,
    v_norm_sq,
)


def make_spec(n_img=32, sigma=0.2, n_ctrl=8):
    g = ImageGrid(n_img, n_img)
    return KernelSpec(g, sigma=sigma, control_grid=ImageGrid(n_ctrl, n_ctrl))


def test_zero_field_evaluates_to_zero():
    spec = make_spec()
    v = VelocityField.zeros(spec, TimeGrid(4))
    pts = np.random.default_rng(0).uniform(-1, 1, size=(50, 2))
    assert np.all(eval_velocity(v, 0.3, pts) == 0.0)


def test_single_control_point_at_origin():
    # 3x3 control lattice has a point exactly at the origin; the window is
    # one there, so K(0,0) = 1 returns the raw coefficient
    spec = make_spec(n_ctrl=3)
    tg = TimeGrid(2)
    alpha = np.zeros((2, 9, 2))
    alpha[:, 4, :] = (1.0, 0.0)
    v = VelocityField(spec, tg, alpha)
    got = eval_velocity(v, 0.0, np.array([0.0, 0.0]))
    assert got == pytest.approx([1.0, 0.0], abs=1e-12)


def test_expansion_matches_brute_force_superposition():
    spec = make_spec(n_ctrl=4)
    tg = TimeGrid(3)
    rng = np.random.default_rng(1)
    alpha = np.zeros((3, 16, 2))
    alpha[1, 3] = (0.7, -0.2)
    alpha[1, 9] = (-0.4, 1.1)
    v = VelocityField(spec, tg, alpha)
    pts = rng.uniform(-0.5, 0.5, size=(20, 2))
    got = v.velocity_at(0.5, pts)

    c = spec.control_points
    w = spec.window_value(pts)
    expect = np.zeros((20, 2))
    for j in (3, 9):
        K = np.exp(-((pts - c[j]) ** 2).sum(axis=1) / (2 * spec.sigma**2))
        expect += K[:, None] * alpha[1, j]
    expect *= w[:, None]
    assert np.max(np.abs(got - expect)) <= 1e-12


def test_velocity_vanishes_on_every_boundary_node():
    spec = make_spec()
    tg = TimeGrid(2)
    rng = np.random.default_rng(2)
    v = VelocityField(spec, tg, rng.standard_normal((2, 64, 2)))
    g = spec.image_grid
    nodes = g.nodes()
    ring = np.zeros(g.shape, dtype=bool)
    ring[0, :] = ring[-1, :] = True
    ring[:, 0] = ring[:, -1] = True
    vals = v.velocity_at(0.1, nodes[ring])
    assert np.all(vals == 0.0)


def test_time_out_of_range():
    v = VelocityField.zeros(make_spec(), TimeGrid(4))
    with pytest.raises(TimeOutOfRange):
        eval_velocity(v, 1.2, np.array([0.0, 0.0]))


def test_alpha_shape_validated():
    with pytest.raises(ShapeMismatch):
        VelocityField(make_spec(n_ctrl=4), TimeGrid(2), np.zeros((2, 9, 2)))


def test_norm_of_zero_and_single_point():
    spec = make_spec(n_ctrl=3)
    tg = TimeGrid(2)
    assert v_norm_sq(VelocityField.zeros(spec, tg), 0) == 0.0
    alpha = np.zeros((2, 9, 2))
    alpha[0, 4] = (0.3, -0.4)
    v = VelocityField(spec, tg, alpha)
    assert v_norm_sq(v, 0) == pytest.approx(0.09 + 0.16, abs=1e-14)


def test_norm_matches_dense_gram_quadratic_form():
    spec = make_spec(n_ctrl=4)
    tg = TimeGrid(1)
    rng = np.random.default_rng(3)
    alpha = np.zeros((1, 16, 2))
    idx = rng.choice(16, size=5, replace=False)
    alpha[0, idx] = rng.standard_normal((5, 2))
    v = VelocityField(spec, tg, alpha)

    c = spec.control_points
    expect = 0.0
    for i in range(16):
        for j in range(16):
            K = np.exp(-((c[i] - c[j]) ** 2).sum() / (2 * spec.sigma**2))
            expect += K * (alpha[0, i] @ alpha[0, j])
    assert v_norm_sq(v, 0) == pytest.approx(expect, rel=1e-12)


def test_norm_quadratic_and_parallelogram():
    spec = make_spec(n_ctrl=5)
    tg = TimeGrid(1)
    rng = np.random.default_rng(4)
    a = rng.standard_normal((1, 25, 2))
    b = rng.standard_normal((1, 25, 2))
    va = VelocityField(spec, tg, a)
    assert v_norm_sq(VelocityField(spec, tg, 3.0 * a), 0) == pytest.approx(
        9.0 * v_norm_sq(va, 0), rel=1e-12
    )
    lhs = v_norm_sq(VelocityField(spec, tg, a + b), 0) + v_norm_sq(
        VelocityField(spec, tg, a - b), 0
    )
    rhs = 2 * v_norm_sq(va, 0) + 2 * v_norm_sq(VelocityField(spec, tg, b), 0)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(rhs))


def test_r2_energy_accumulates_steps():
    spec = make_spec(n_ctrl=4)
    tg = TimeGrid(4, (2, 4))
    rng = np.random.default_rng(5)
    v = VelocityField(spec, tg, rng.standard_normal((4, 16, 2)))
    assert r2_energy(VelocityField.zeros(spec, tg), 4) == 0.0
    # t_i = 1/2: first two steps at dt = 1/4
    expect = 0.25 * (v_norm_sq(v, 0) + v_norm_sq(v, 1))
    assert r2_energy(v, 2) == pytest.approx(expect, rel=1e-14)
    with pytest.raises(IndexOutOfRange):
        r2_energy(v, 3)


def test_r2_energy_time_constant_field():
    spec = make_spec(n_ctrl=4)
    tg = TimeGrid(5, (5,))
    rng = np.random.default_rng(6)
    a0 = rng.standard_normal((16, 2))
    v = VelocityField(spec, tg, np.repeat(a0[None], 5, axis=0))
    assert r2_energy(v, 5) == pytest.approx(v_norm_sq(v, 0), rel=1e-12)


def test_divergence_zero_field():
    v = VelocityField.zeros(make_spec(), TimeGrid(2))
    assert np.all(divergence_field(v, 0.0).values == 0.0)


def test_divergence_of_rotational_pattern_small_at_center():
    spec = make_spec(n_img=64, n_ctrl=16)
    tg = TimeGrid(1)
    c = spec.control_points
    alpha = np.stack([-c[:, 1], c[:, 0]], axis=-1)[None] * 0.5
    v = VelocityField(spec, tg, alpha)
    div = divergence_field(v, 0.0)
    j = spec.image_grid.ny // 2
    i = spec.image_grid.nx // 2
    assert abs(div.values[j, i]) <= 1e-2


def test_analytic_divergence_matches_finite_differences():
    spec = make_spec(n_img=32, n_ctrl=8)
    tg = TimeGrid(2)
    rng = np.random.default_rng(7)
    v = VelocityField(spec, tg, 0.5 * rng.standard_normal((2, 64, 2)))
    pts = rng.uniform(-0.7, 0.7, size=(80, 2))
    got = v.divergence_at(0.1, pts)
    h = 1e-6
    ex = np.array([h, 0.0])
    ey = np.array([0.0, h])
    fd = (
        v.velocity_at(0.1, pts + ex)[:, 0] - v.velocity_at(0.1, pts - ex)[:, 0]
    ) / (2 * h) + (
        v.velocity_at(0.1, pts + ey)[:, 1] - v.velocity_at(0.1, pts - ey)[:, 1]
    ) / (2 * h)
    scale = max(np.max(np.abs(fd)), 1e-12)
    assert np.max(np.abs(got - fd)) / scale <= 1e-3


def test_analytic_jacobian_matches_finite_differences():
    spec = make_spec(n_img=32, n_ctrl=8)
    tg = TimeGrid(1)
    rng = np.random.default_rng(8)
    v = VelocityField(spec, tg, 0.5 * rng.standard_normal((1, 64, 2)))
    pts = rng.uniform(-0.9, 0.9, size=(60, 2))
    J = v.jacobian_at(0.0, pts)
    h = 1e-6
    for b, e in enumerate((np.array([h, 0.0]), np.array([0.0, h]))):
        fd = (v.velocity_at(0.0, pts + e) - v.velocity_at(0.0, pts - e)) / (2 * h)
        assert np.max(np.abs(J[:, :, b] - fd)) <= 1e-5


def test_lipschitz_zero_field():
    assert lipschitz_estimate(VelocityField.zeros(make_spec(), TimeGrid(2)), 0.0) == 0.0


def test_lipschitz_near_affine_field():
    # kernel fit of a Gaussian-damped affine field: the Jacobian peaks at the
    # center where it equals A, and the damping keeps fringe slopes below |A|
    A = np.array([[0.3, -0.5], [0.7, 0.2]])
    spec = make_spec(n_img=64, sigma=0.2, n_ctrl=24)
    tg = TimeGrid(1)
    c = spec.control_points
    s = 0.15
    damp = np.exp(-(c**2).sum(axis=1) / (2 * s**2))
    target = (c @ A.T) * damp[:, None]
    alpha = np.linalg.solve(spec.gram + 1e-10 * np.eye(len(c)), target)
    v = VelocityField(spec, tg, alpha[None])
    expect = np.linalg.norm(A, 2)
    assert lipschitz_estimate(v, 0.0) == pytest.approx(expect, rel=0.10)


def test_lipschitz_scales_linearly():
    spec = make_spec(n_ctrl=6)
    tg = TimeGrid(1)
    rng = np.random.default_rng(9)
    a = rng.standard_normal((1, 36, 2))
    l1 = lipschitz_estimate(VelocityField(spec, tg, a), 0.0)
    l2 = lipschitz_estimate(VelocityField(spec, tg, 2.0 * a), 0.0)
    assert l2 == pytest.approx(2.0 * l1, rel=1e-10)


def test_embedding_constant_over_randomized_suite():
    # sup-norms of v and grad v against the intrinsic norm: calibrate the
    # constant on the first draws, then assert it across the rest
    spec = make_spec(n_img=48, n_ctrl=8)
    tg = TimeGrid(1)
    nodes = spec.image_grid.nodes()

    def ratios(seed):
        rng = np.random.default_rng(seed)
        v = VelocityField(spec, tg, rng.standard_normal((1, 64, 2)))
        nrm = np.sqrt(v_norm_sq(v, 0))
        sup_v = np.max(np.abs(v.velocity_at(0.0, nodes)))
        sup_dv = lipschitz_estimate(v, 0.0)
        return sup_v / nrm, sup_dv / nrm

    calib = max(max(ratios(s)) for s in range(10))
    c_emb = 1.5 * calib
    for s in range(10, 40):
        rv, rdv = ratios(s)
        assert rv <= c_emb and rdv <= c_emb


def test_rotation_field_is_divergence_free_and_matches_jacobian():
    g = ImageGrid(32, 32)
    tg = TimeGrid(4)
    v = rotation_field(g, tg, omega=0.5)
    rng = np.random.default_rng(10)
    pts = rng.uniform(-0.95, 0.95, size=(100, 2))
    assert np.all(v.divergence_at(0.2, pts) == 0.0)
    J = v.jacobian_at(0.2, pts)
    h = 1e-6
    for b, e in enumerate((np.array([h, 0.0]), np.array([0.0, h]))):
        fd = (v.velocity_at(0.2, pts + e) - v.velocity_at(0.2, pts - e)) / (2 * h)
        assert np.max(np.abs(J[:, :, b] - fd)) <= 1e-5


def test_rotation_field_exact_in_flat_region():
    g = ImageGrid(32, 32)
    v = rotation_field(g, TimeGrid(2), omega=0.5, r_flat=0.7)
    p = np.array([0.3, -0.2])
    assert v.velocity_at(0.0, p) == pytest.approx(0.5 * np.array([0.2, 0.3]), abs=1e-14)


def test_translation_field_exact_in_flat_region_and_divergence():
    g = ImageGrid(32, 32)
    v = translation_field(g, TimeGrid(2), c=(0.3, -0.1), flat_halfwidth=0.45)
    p = np.array([[0.1, 0.2], [-0.4, 0.44]])
    got = v.velocity_at(0.0, p)
    assert np.max(np.abs(got - np.array([0.3, -0.1]))) <= 1e-14
    rng = np.random.default_rng(11)
    pts = rng.uniform(-0.95, 0.95, size=(100, 2))
    h = 1e-6
    fd = (
        v.velocity_at(0.0, pts + [h, 0])[:, 0] - v.velocity_at(0.0, pts - [h, 0])[:, 0]
    ) / (2 * h) + (
        v.velocity_at(0.0, pts + [0, h])[:, 1] - v.velocity_at(0.0, pts - [0, h])[:, 1]
    ) / (2 * h)
    assert np.max(np.abs(v.divergence_at(0.0, pts) - fd)) <= 1e-5
