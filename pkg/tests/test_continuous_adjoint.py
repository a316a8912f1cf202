import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adjointlab import (
    QuadratureRule,
    backprop_gradient,
    directional_loss_derivative,
    gradient_integral,
    gradient_section6_variant,
    make_grid,
    rel_discrepancy,
    solve_adjoint,
    solve_forward,
    solve_tangent,
)
from adjointlab.continuous_adjoint import OVERWRITE
from adjointlab.harness.zoo import linear_scalar_field, zoo

from conftest import SCHEME_NAMES, constant_field, exact_linear_gradient, nonlinear_field, square_loss, sum_loss


def _grad(vf, theta, z0, loss, n, fwd="rk4", bwd=None, rule=None):
    base = solve_forward(vf, theta, z0, make_grid(0, 1, n), fwd)
    adj = solve_adjoint(vf, theta, base, loss, bwd or fwd)
    return gradient_integral(vf, theta, base, adj, rule), adj, base


@pytest.mark.parametrize("bwd", SCHEME_NAMES)
def test_constant_field_adjoint_is_minus_one(bwd):
    vf = constant_field()
    base = solve_forward(vf, [0.4], [0.0], make_grid(0, 1, 10), "rk4")
    adj = solve_adjoint(vf, [0.4], base, sum_loss([1.0]), bwd)
    np.testing.assert_array_equal(adj.adjoints, -1.0)


def test_linear_adjoint_closed_form():
    vf = linear_scalar_field()
    _, adj, _ = _grad(vf, [0.0], [1.0], sum_loss([1.0]), 1000)
    np.testing.assert_allclose(adj.adjoints, -1.0, rtol=0, atol=1e-15)
    _, adj, base = _grad(vf, [1.0], [1.0], sum_loss([1.0]), 1000)
    assert abs(adj.adjoints[0, 0] + math.e) <= 1e-6
    t = base.grid.nodes
    np.testing.assert_allclose(adj.adjoints[:, 0], -np.exp(1.0 - t), rtol=1e-9)


def test_parameter_free_field_has_zero_gradient():
    vf, loss, theta, z0 = zoo("free-decay").build()
    for bwd in SCHEME_NAMES:
        g, _, _ = _grad(vf, theta, z0, loss, 40, bwd=bwd)
        assert g.tolist() == [0.0]


@pytest.mark.parametrize("theta, expected", [(0.0, 1.0), (0.3, exact_linear_gradient(0.3, 1.0, [1.0]))])
def test_linear_gradient_closed_form(theta, expected):
    g, _, _ = _grad(linear_scalar_field(), [theta], [1.0], sum_loss([1.0]), 1000)
    assert abs(g[0] - expected) <= 1e-6 * abs(expected)


def test_multilabel_gradient_closed_form():
    g, adj, _ = _grad(linear_scalar_field(), [0.0], [1.0], sum_loss([0.5, 1.0]), 1000)
    assert abs(g[0] - 1.5) <= 1e-6
    # additive reset at t = 0.5 doubles the constant adjoint
    assert adj.adjoints[0, 0] == pytest.approx(-2.0, abs=1e-14)
    assert adj.adjoints[600, 0] == pytest.approx(-1.0, abs=1e-14)


def test_jump_log():
    vf = nonlinear_field()
    theta = [0.5, 0.2, -0.3, 0.1]
    loss = square_loss([0.25, 0.5, 1.0])
    base = solve_forward(vf, theta, [1.0, 0.5], make_grid(0, 1, 40), "rk4")
    adj = solve_adjoint(vf, theta, base, loss, "rk4")
    G = loss.cotangents(base)
    # the terminal label initialises the adjoint and is not a jump
    assert [j.node for j in adj.jump_log] == [10, 20]
    assert adj.post[40].tolist() == (-G[40]).tolist()
    for j in adj.jump_log:
        np.testing.assert_array_equal(j.source, G[j.node])
        np.testing.assert_array_equal(j.post, j.pre - G[j.node])
    moved = sum(np.linalg.norm(j.pre - j.post) for j in adj.jump_log)
    assert moved == pytest.approx(sum(np.linalg.norm(G[k]) for k in (10, 20)), rel=1e-12)
    # pre and post agree away from the jumps
    mask = np.ones(41, bool)
    mask[[10, 20]] = False
    np.testing.assert_array_equal(adj.pre[mask], adj.post[mask])


def test_weighted_single_label_matches_additive():
    vf = nonlinear_field()
    theta = [0.5, 0.2, -0.3, 0.1]
    loss = square_loss([1.0])
    base = solve_forward(vf, theta, [1.0, 0.5], make_grid(0, 1, 50), "rk4")
    g_add = gradient_integral(vf, theta, base, solve_adjoint(vf, theta, base, loss, "rk4"))
    g_w = gradient_section6_variant(vf, theta, base, loss, "rk4").gradient
    assert rel_discrepancy(g_add, g_w) <= 1e-12


def test_weighted_two_labels_hand_value():
    vf = linear_scalar_field()
    base = solve_forward(vf, [0.0], [1.0], make_grid(0, 1, 1000), "rk4")
    res = gradient_section6_variant(vf, [0.0], base, sum_loss([0.5, 1.0]), "rk4")
    # overwrite reset: the adjoint is -1 on both intervals
    np.testing.assert_allclose(res.adjoint.adjoints, -1.0, rtol=0, atol=1e-15)
    assert res.adjoint.reset == OVERWRITE
    assert res.gradient[0] == pytest.approx(1.5, abs=1e-12)
    np.testing.assert_allclose(res.interval_integrals[:, 0], [-0.5, -0.5], atol=1e-12)


@given(theta=st.lists(st.floats(-1, 1), min_size=4, max_size=4),
       labels=st.sets(st.integers(1, 19), max_size=3))
def test_weighted_and_double_sum_agree(theta, labels):
    vf = nonlinear_field()
    loss = square_loss(sorted(k / 20 for k in labels) + [1.0])
    base = solve_forward(vf, theta, [1.0, 0.5], make_grid(0, 1, 20), "rk4")
    res = gradient_section6_variant(vf, theta, base, loss, "rk4")
    assert rel_discrepancy(res.gradient, res.double_sum) <= 1e-12


@pytest.mark.parametrize("name", ["linear-system", "bilinear-2d", "logistic", "multilabel-linear"])
def test_adjoint_tangent_duality(name, rng):
    vf, loss, theta, z0 = zoo(name).build()
    g, _, base = _grad(vf, theta, z0, loss, 1000)
    for _ in range(3):
        zeta = rng.standard_normal(vf.dim_param)
        d = directional_loss_derivative(loss, base, solve_tangent(vf, theta, base, zeta))
        assert abs(g @ zeta - d) <= 1e-6 * max(abs(d), abs(g @ zeta))


@pytest.mark.parametrize("bwd", SCHEME_NAMES)
def test_mismatched_schemes_converge_to_backprop(bwd):
    vf = nonlinear_field()
    theta = [0.5, 0.2, -0.3, 0.1]
    loss = square_loss([0.5, 1.0])
    errs = []
    for n in (20, 80):
        for fwd in ("euler", "rk4"):
            g, _, base = _grad(vf, theta, [1.0, 0.5], loss, n, fwd=fwd, bwd=bwd)
            errs.append(rel_discrepancy(g, backprop_gradient(vf, theta, base, loss)))
    assert errs[2] < errs[0] and errs[3] < errs[1]


def test_adjoint_must_match_base():
    vf = linear_scalar_field()
    loss = sum_loss([1.0])
    a = solve_forward(vf, [0.3], [1.0], make_grid(0, 1, 8), "rk4")
    b = solve_forward(vf, [0.3], [2.0], make_grid(0, 1, 8), "rk4")
    adj = solve_adjoint(vf, [0.3], a, loss, "rk4")
    with pytest.raises(ValueError):
        gradient_integral(vf, [0.3], b, adj)
    with pytest.raises(ValueError):
        solve_adjoint(vf, [0.3], a, loss, "rk4", reset="sideways")


@given(n=st.integers(1, 60), kind=st.sampled_from(["left-endpoint", "trapezoid", "simpson", "scheme-matched"]),
       bwd=st.sampled_from(SCHEME_NAMES), span=st.floats(0.1, 10), breaks=st.sets(st.integers(1, 59), max_size=4))
def test_quadrature_weights_sum_to_span(n, kind, bwd, span, breaks):
    grid = make_grid(0, span, n)
    pieces = QuadratureRule(kind).weights(grid, bwd, [k for k in breaks if k < n])
    assert pieces[0][0] == 0 and pieces[-1][1] == n
    assert math.fsum(w.sum() for _, _, w in pieces) == pytest.approx(span, rel=1e-12)


@pytest.mark.parametrize("kind, exact_degree", [("left-endpoint", 0), ("trapezoid", 1), ("simpson", 3)])
def test_quadrature_polynomial_exactness(kind, exact_degree):
    grid = make_grid(0, 1, 9)
    w = QuadratureRule(kind).piece_weights(kind, 9, grid.h)
    for deg in range(exact_degree + 1):
        assert w @ grid.nodes ** deg == pytest.approx(1 / (deg + 1), rel=1e-12)


def test_quadrature_scheme_matched_and_unknown():
    rule = QuadratureRule()
    assert [rule.resolve(s) for s in SCHEME_NAMES] == ["left-endpoint", "trapezoid", "simpson", "trapezoid"]
    with pytest.raises(ValueError):
        QuadratureRule("gauss")
