import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adjointlab import (
    TangentTrajectory,
    VectorField,
    directional_loss_derivative,
    make_grid,
    solve_forward,
    solve_tangent,
)
from adjointlab.backprop import loss_at
from adjointlab.harness.zoo import linear_scalar_field, zoo, zoo_names

from conftest import SCHEME_NAMES, constant_field, nonlinear_field, sum_loss

coef = st.floats(-3, 3, allow_nan=False)


def test_zero_direction_gives_zero_tangent():
    vf = nonlinear_field()
    base = solve_forward(vf, [0.5, 0.2, -0.3, 0.1], [1.0, 0.5], make_grid(0, 1, 16), "rk4")
    tan = solve_tangent(vf, base.theta, base, np.zeros(4))
    np.testing.assert_array_equal(tan.etas, 0.0)


def test_constant_field_tangent_grows_linearly():
    base = solve_forward(constant_field(), [0.7], [0.0], make_grid(0, 1, 100), "euler")
    tan = solve_tangent(constant_field(), [0.7], base, [1.0])
    assert tan.etas[-1, 0] == pytest.approx(1.0, abs=1e-13)


def test_linear_tangent_closed_form():
    vf = linear_scalar_field()
    base = solve_forward(vf, [0.0], [1.0], make_grid(0, 1, 1000), "rk4")
    tan = solve_tangent(vf, [0.0], base, [1.0])
    assert abs(tan.etas[-1, 0] - 1.0) <= 1e-9


@pytest.mark.parametrize("scheme", SCHEME_NAMES)
def test_tangent_starts_at_zero(scheme):
    vf = nonlinear_field()
    base = solve_forward(vf, [0.5, 0.2, -0.3, 0.1], [1.0, 0.5], make_grid(0, 1, 8), scheme)
    tan = solve_tangent(vf, base.theta, base, [1.0, -1.0, 0.5, 2.0])
    assert tan.etas[0].tolist() == [0.0, 0.0]


def test_directional_derivative_examples():
    g = make_grid(0, 1, 4)
    base = solve_forward(linear_scalar_field(), [0.0], [1.0], g, "rk4")
    loss = sum_loss([1.0])
    assert directional_loss_derivative(loss, base, TangentTrajectory(g, np.zeros((5, 1)))) == 0.0
    etas = np.zeros((5, 1))
    etas[-1] = 1.0
    assert directional_loss_derivative(loss, base, TangentTrajectory(g, etas)) == 1.0


def test_multilabel_directional_derivative():
    vf = linear_scalar_field()
    base = solve_forward(vf, [0.0], [1.0], make_grid(0, 1, 1000), "rk4")
    tan = solve_tangent(vf, [0.0], base, [1.0])
    assert directional_loss_derivative(sum_loss([0.5, 1.0]), base, tan) == pytest.approx(1.5, abs=1e-8)


@given(a=coef, b=coef, seed=st.integers(0, 2**32 - 1), scheme=st.sampled_from(SCHEME_NAMES))
def test_tangent_is_linear_in_direction(a, b, seed, scheme):
    rng = np.random.default_rng(seed)
    vf = nonlinear_field()
    theta = 0.5 * rng.standard_normal(4)
    base = solve_forward(vf, theta, [1.0, 0.5], make_grid(0, 1, 10), scheme)
    z1, z2 = rng.standard_normal(4), rng.standard_normal(4)
    lhs = solve_tangent(vf, theta, base, a * z1 + b * z2).etas
    rhs = a * solve_tangent(vf, theta, base, z1).etas + b * solve_tangent(vf, theta, base, z2).etas
    scale = max(np.abs(lhs).max(), np.abs(rhs).max(), 1e-300)
    assert np.abs(lhs - rhs).max() <= 1e-12 * scale + 1e-300


@pytest.mark.parametrize("name", zoo_names())
def test_directional_derivative_matches_fd(name, rng):
    vf, loss, theta, z0 = zoo(name).build()
    g = make_grid(0, 1, 64)
    base = solve_forward(vf, theta, z0, g, "rk4")
    for _ in range(3):
        zeta = rng.standard_normal(vf.dim_param)
        d = directional_loss_derivative(loss, base, solve_tangent(vf, theta, base, zeta))
        eps = 1e-5
        fd = (loss_at(vf, theta + eps * zeta, z0, g, "rk4", loss)
              - loss_at(vf, theta - eps * zeta, z0, g, "rk4", loss)) / (2 * eps)
        assert abs(d - fd) <= 1e-5 * max(abs(d), abs(fd)) + 1e-12


def test_tangent_needs_jacobians_and_matching_scheme():
    plain = VectorField(1, 1, lambda t, z, th: th * z, lambda t, z, th, v: th * v,
                        lambda t, z, th, v: v * z)
    base = solve_forward(plain, [0.1], [1.0], make_grid(0, 1, 4), "rk4")
    with pytest.raises(ValueError, match="Jacobians"):
        solve_tangent(plain, [0.1], base, [1.0])
    with pytest.raises(ValueError, match="differs"):
        solve_tangent(constant_field(), [0.1], base, [1.0], scheme="euler")
