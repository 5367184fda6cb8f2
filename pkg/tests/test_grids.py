import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stiflow.errors import (
    EmptySequence,
    GridMismatch,
    GridTooSmall,
    IndexOutOfRange,
    ShapeMismatch,
    TimeOutOfRange,
)
from stiflow.grids import (
    ImageGrid,
    ScalarField,
    TimeGrid,
    gradient_central,
    inner_l2,
    integrate,
    interp_adjoint,
    interp_position_gradient,
    interpolate,
    require_same_grid,
)


def test_spacing_and_area():
    g = ImageGrid(64, 64)
    assert g.h_x == pytest.approx(2.0 / 64, abs=0)
    assert g.h_y == pytest.approx(2.0 / 64, abs=0)
    assert g.cell_area == pytest.approx((2.0 / 64) ** 2, abs=0)
    assert g.xs[0] == pytest.approx(-1.0 + 1.0 / 64)
    assert g.xs[-1] == pytest.approx(1.0 - 1.0 / 64)


def test_grid_too_small_rejected():
    with pytest.raises(GridTooSmall):
        ImageGrid(2, 64)
    with pytest.raises(GridTooSmall):
        ImageGrid(64, 2)
    ImageGrid(3, 3)


def test_shape_mismatch_rejected():
    g = ImageGrid(8, 6)
    with pytest.raises(ShapeMismatch):
        ScalarField(g, np.zeros((8, 6)))  # transposed
    ScalarField(g, np.zeros((6, 8)))


def test_nonfinite_rejected():
    g = ImageGrid(4, 4)
    v = np.zeros((4, 4))
    v[1, 2] = np.nan
    with pytest.raises(ValueError):
        ScalarField(g, v)


def test_grid_mismatch():
    with pytest.raises(GridMismatch):
        require_same_grid(ImageGrid(8, 8), ImageGrid(16, 8))


def test_interpolation_exact_on_affine_fields():
    # bilinear interpolation reproduces affine functions wherever the full
    # stencil lies on the lattice
    g = ImageGrid(32, 24)
    f = ScalarField.from_function(g, lambda x, y: 2.0 * x - 3.0 * y + 1.0)
    rng = np.random.default_rng(7)
    pts = rng.uniform(-0.9, 0.9, size=(500, 2))
    exact = 2.0 * pts[:, 0] - 3.0 * pts[:, 1] + 1.0
    got = interpolate(f, pts)
    assert np.max(np.abs(got - exact)) <= 1e-12


def test_interpolation_zero_outside_domain():
    g = ImageGrid(16, 16)
    f = ScalarField(g, np.ones((16, 16)))
    pts = np.array([[1.5, 0.0], [0.0, -1.0001], [-2.0, 2.0]])
    assert np.all(interpolate(f, pts) == 0.0)
    assert interpolate(f, np.array([2.0, 0.0])) == 0.0


def test_interpolation_at_nodes_reproduces_samples():
    g = ImageGrid(12, 10)
    rng = np.random.default_rng(3)
    f = ScalarField(g, rng.standard_normal(g.shape))
    got = interpolate(f, g.nodes())
    assert np.max(np.abs(got - f.values)) <= 1e-14


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_interpolation_is_linear_in_the_field(a, b):
    g = ImageGrid(8, 8)
    rng = np.random.default_rng(11)
    f = rng.standard_normal(g.shape)
    h = rng.standard_normal(g.shape)
    pts = rng.uniform(-1.1, 1.1, size=(40, 2))
    lhs = interpolate(ScalarField(g, a * f + b * h), pts)
    rhs = a * interpolate(ScalarField(g, f), pts) + b * interpolate(
        ScalarField(g, h), pts
    )
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * (1 + abs(a) + abs(b))


def test_interp_adjoint_matches_forward():
    # <interp(f, pts), c> == <f, adjoint(c)> as raw sums
    g = ImageGrid(16, 12)
    rng = np.random.default_rng(123)
    f = ScalarField(g, rng.standard_normal(g.shape))
    pts = rng.uniform(-1.2, 1.2, size=(200, 2))
    c = rng.standard_normal(200)
    lhs = float(np.sum(interpolate(f, pts) * c))
    rhs = float(np.sum(f.values * interp_adjoint(g, pts, c)))
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_interp_position_gradient_finite_difference():
    g = ImageGrid(48, 48)
    f = ScalarField.from_function(g, lambda x, y: np.sin(2 * x) * np.cos(y))
    rng = np.random.default_rng(5)
    pts = rng.uniform(-0.8, 0.8, size=(100, 2))
    grad = interp_position_gradient(f, pts)
    s = 1e-7
    for axis in range(2):
        e = np.zeros(2)
        e[axis] = s
        fd = (interpolate(f, pts + e) - interpolate(f, pts - e)) / (2 * s)
        # finite differences of the piecewise-bilinear surface may straddle a
        # cell edge at isolated points; compare in the bulk
        err = np.abs(fd - grad[:, axis])
        assert np.median(err) <= 1e-6
        assert np.mean(err <= 1e-5) >= 0.95


def test_gradient_exact_on_linear_fields():
    g = ImageGrid(20, 20)
    f = ScalarField.from_function(g, lambda x, y: 3.0 * x - 2.0 * y)
    gx, gy = gradient_central(f)
    assert np.max(np.abs(gx.values - 3.0)) <= 1e-12
    assert np.max(np.abs(gy.values + 2.0)) <= 1e-12


def test_gradient_second_order_in_the_interior():
    # Richardson study on sin(pi x): interior error drops ~4x per refinement
    errs = []
    for n in (64, 128):
        g = ImageGrid(n, 8)
        f = ScalarField.from_function(g, lambda x, y: np.sin(np.pi * x))
        gx, _ = gradient_central(f)
        exact = np.pi * np.cos(np.pi * g.mesh[0])
        errs.append(np.max(np.abs(gx.values - exact)[:, 1:-1]))
    assert errs[0] / errs[1] >= 3.5


def test_integrate_quadratic():
    # integral of x^2 + y^2 over [-1,1]^2 is 8/3
    g = ImageGrid(256, 256)
    f = ScalarField.from_function(g, lambda x, y: x**2 + y**2)
    assert integrate(f) == pytest.approx(8.0 / 3.0, abs=1e-3)


def test_inner_l2_weighting():
    g = ImageGrid(8, 8)
    one = ScalarField(g, np.ones(g.shape))
    assert inner_l2(one, one) == pytest.approx(4.0, abs=1e-12)


def test_time_grid_basics():
    tg = TimeGrid(8, (2, 4, 6, 8))
    assert tg.dt == pytest.approx(0.125)
    assert tg.times[0] == 0.0 and tg.times[-1] == 1.0
    assert tg.obs_times == pytest.approx((0.25, 0.5, 0.75, 1.0))
    assert tg.num_obs == 4


def test_time_grid_interval_lookup():
    tg = TimeGrid(8)
    assert tg.interval_of(0.0) == 0
    assert tg.interval_of(0.125) == 1
    assert tg.interval_of(0.1249) == 0
    assert tg.interval_of(1.0) == 7
    with pytest.raises(TimeOutOfRange):
        tg.interval_of(1.0001)
    with pytest.raises(TimeOutOfRange):
        tg.interval_of(-0.1)


def test_time_grid_observation_validation():
    with pytest.raises(IndexOutOfRange):
        TimeGrid(8, (0, 4))  # t = 0 is not observable
    with pytest.raises(IndexOutOfRange):
        TimeGrid(8, (9,))
    with pytest.raises(ValueError):
        TimeGrid(8, (4, 4))
    with pytest.raises(EmptySequence):
        _ = TimeGrid(8).obs_times
