import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from feedsim.behavior import (
    DomainError, Exposure, UserTaste, UtilityParams, equilibrium_assignment, optimal_share_fraction,
    optimal_shares, optimal_views, quadratic_share_fraction, quadratic_utility, share_fraction_cross_partial,
    share_ratio_cross_partial, share_view_elasticity, solve_user, solve_user_quadratic, solve_users, utility,
    views_cross_partial,
)

from oracles import numeric_best_response, random_interior_params

unit = st.floats(0.001, 0.999)
thetas = st.floats(0.0, 1.0)


def test_share_fraction_examples():
    assert optimal_share_fraction(0.04, 0.16, 0.5) == pytest.approx(0.08, abs=1e-12)
    assert optimal_share_fraction(0.3, 0.1, 0.0) == pytest.approx(0.1)
    assert optimal_share_fraction(0.3, 0.1, 1.0) == pytest.approx(0.3)


def test_views_example_and_exit_region():
    params = UtilityParams(alpha=1, eta=1, beta=2, delta=4, theta=0.5)
    n = optimal_views(params, 0.05, 0.25)
    assert n == pytest.approx(2 - 0.5 * math.log(5) ** 2, abs=1e-12)
    assert n == pytest.approx(0.7048, abs=1e-4)
    s = optimal_shares(params, n, 0.05, 0.25)
    # the printed -0.2954 is off in the fourth decimal; the expression itself gives -0.29515
    assert s == pytest.approx(n / 2 - 0.25 * math.log(5) ** 2, abs=1e-12)
    assert s == pytest.approx(-0.2954, abs=5e-4) and s < 0
    out = solve_user(params, 0.05, 0.25)
    assert out.exited and out.n_views == 0 and out.n_shares == 0


def test_shares_trivial_cases():
    params = UtilityParams(alpha=1, eta=1)
    assert optimal_shares(params, 2.0, 0.1, 0.1) == pytest.approx(1.0)
    assert optimal_shares(params.replace(theta=0.0), 2.0, 0.3, 0.05) == pytest.approx(1.0)


def test_solve_user_composition():
    params = UtilityParams(alpha=1, eta=1, beta=2, delta=1, theta=0.5)
    out = solve_user(params, Exposure(0.1), UserTaste(0.1))
    assert (out.n_views, out.n_shares) == pytest.approx((2.0, 1.0))
    assert out.share_frac_toxic == pytest.approx(0.1)
    assert out.toxic_shares == pytest.approx(0.1)
    assert out.toxic_views == pytest.approx(0.2)
    assert not out.exited


@pytest.mark.parametrize("p", [0.074, 0.5])
def test_equilibrium_assignment_is_taste(p):
    assert equilibrium_assignment(p).q_t == p


def test_views_peak_at_taste():
    rng = np.random.default_rng(3)
    grid = np.linspace(0.001, 0.999, 999)
    for _ in range(10):
        params, _, p = random_interior_params(rng)
        if params.theta in (0.0, 1.0):
            continue
        best = grid[np.argmax(optimal_views(params, grid, p))]
        assert abs(best - p) <= 0.001 + 1e-12


def test_closed_forms_match_numeric_maximiser():
    rng = np.random.default_rng(11)
    for _ in range(25):
        params, q, p = random_interior_params(rng)
        out = solve_user(params, q, p)
        s, n, sh = numeric_best_response(params, q, p)
        assert (out.share_frac_toxic, out.n_views, out.n_shares) == pytest.approx((s, n, sh), abs=1e-4)


def test_gradient_vanishes_and_s_is_local_max():
    params = UtilityParams(delta=3.0, theta=0.3)
    q, p = 0.1, 0.2
    out = solve_user(params, q, p)
    x = np.array([out.share_frac_toxic, out.n_shares, out.n_views])
    h = 1e-6
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        g = (utility(params, *(x + e), q, p) - utility(params, *(x - e), q, p)) / (2 * h)
        assert abs(g) < 1e-6
    u0 = utility(params, *x, q, p)
    for d in (-1e-3, 1e-3):
        assert utility(params, x[0] + d, x[1], x[2], q, p) < u0


def test_mechanical_user_copies_taste():
    params = UtilityParams(theta=0.0, beta=1e-9, eta=1e-9)
    assert solve_user(params, 0.3, 0.07).share_frac_toxic == pytest.approx(0.07)


def test_mechanical_user_share_fraction_ignores_feed():
    s1 = optimal_share_fraction(0.1, 0.05, 0.0)
    s2 = optimal_share_fraction(0.2, 0.05, 0.0)
    assert math.log(s2 / s1) / math.log(0.2 / 0.1) == 0.0


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.1, 1.5])
def test_boundary_inputs_rejected(bad):
    with pytest.raises(DomainError):
        optimal_share_fraction(bad, 0.1, 0.5)
    with pytest.raises(DomainError):
        optimal_share_fraction(0.1, bad, 0.5)


def test_params_validation():
    with pytest.raises(ValueError):
        UtilityParams(alpha=0.0)
    with pytest.raises(ValueError):
        UtilityParams(theta=1.2)
    assert UtilityParams().equilibrium_views == 2.0
    assert UtilityParams().equilibrium_shares == 1.0


def test_quadratic_variant():
    assert quadratic_share_fraction(0.2, 0.4, 0.5) == pytest.approx(0.3)
    assert quadratic_share_fraction(0.2, 0.4, 0.0) == pytest.approx(0.4)
    params = UtilityParams(delta=5.0, theta=0.4)
    out = solve_user_quadratic(params, 0.1, 0.3)
    u0 = quadratic_utility(params, out.share_frac_toxic, out.n_shares, out.n_views, 0.1, 0.3)
    for ds, dS, dN in [(1e-3, 0, 0), (-1e-3, 0, 0), (0, 1e-3, 0), (0, 0, -1e-3)]:
        u = quadratic_utility(params, out.share_frac_toxic + ds, out.n_shares + dS, out.n_views + dN, 0.1, 0.3)
        assert u < u0


def test_quadratic_cross_partial_directions():
    params = UtilityParams(delta=5.0, theta=0.4)
    h = 1e-4
    for p in np.linspace(0.2, 0.8, 7):
        for q in np.linspace(0.05, 0.15, 5):
            def f(attr, pp, qq):
                o = solve_user_quadratic(params, qq, pp)
                return {"n": o.raw_views, "s": o.share_frac_toxic, "r": o.share_frac_toxic / qq}[attr]

            cross = {k: (f(k, p + h, q + h) - f(k, p + h, q - h) - f(k, p - h, q + h) + f(k, p - h, q - h)) / (4 * h * h)
                     for k in "nsr"}
            assert cross["n"] >= -1e-6
            assert cross["s"] == pytest.approx(0.0, abs=1e-5)
            assert cross["r"] <= 1e-6


def test_solve_users_matches_scalar():
    params = UtilityParams()
    q = np.array([0.05, 0.074, 0.3, 0.074])
    p = np.array([0.05, 0.2, 0.04, 0.6])
    views, shares, s_frac, exited = solve_users(params, q, p)
    for i in range(4):
        o = solve_user(params, q[i], p[i])
        assert (views[i], shares[i], s_frac[i], exited[i]) == pytest.approx(
            (o.n_views, o.n_shares, o.share_frac_toxic, o.exited))


def test_cross_partials_match_finite_differences():
    params = UtilityParams(theta=0.3, delta=5.0)
    h = 1e-5
    for p, q in [(0.2, 0.05), (0.5, 0.3), (0.1, 0.07)]:
        def fd(f):
            return (f(p + h, q + h) - f(p + h, q - h) - f(p - h, q + h) + f(p - h, q - h)) / (4 * h * h)

        assert fd(lambda pp, qq: optimal_views(params, qq, pp)) == pytest.approx(
            views_cross_partial(params, q, p), rel=1e-5)
        assert fd(lambda pp, qq: optimal_share_fraction(qq, pp, 0.3)) == pytest.approx(
            share_fraction_cross_partial(q, p, 0.3), abs=1e-6)
        assert fd(lambda pp, qq: optimal_share_fraction(qq, pp, 0.3) / qq) == pytest.approx(
            share_ratio_cross_partial(q, p, 0.3), rel=1e-5)


def test_share_view_elasticity():
    params = UtilityParams()
    assert share_view_elasticity(params.replace(theta=0.0), 0.3, 0.05) == pytest.approx(1.0)
    h = 1e-6
    for theta in (0.16, 0.5):
        pr = params.replace(theta=theta)
        n0 = optimal_views(pr, 0.074, 0.2)
        s0 = optimal_shares(pr, n0, 0.074, 0.2)
        pb = pr.replace(beta=pr.beta * (1 + h))
        n1 = optimal_views(pb, 0.074, 0.2)
        s1 = optimal_shares(pb, n1, 0.074, 0.2)
        assert math.log(s1 / s0) / math.log(n1 / n0) == pytest.approx(share_view_elasticity(pr, 0.074, 0.2), rel=1e-5)


@settings(max_examples=300, deadline=None)
@given(q=unit, p=unit, theta=thetas)
def test_share_fraction_between_feed_and_taste(q, p, theta):
    s = optimal_share_fraction(q, p, theta)
    assert min(p, q) * (1 - 1e-12) <= s <= max(p, q) * (1 + 1e-12)


@settings(max_examples=200, deadline=None)
@given(q=unit, p=unit, theta=thetas, delta=st.floats(0.1, 20.0))
def test_mismatch_never_raises_views(q, p, theta, delta):
    params = UtilityParams(delta=delta, theta=theta)
    assert optimal_views(params, q, p) <= params.equilibrium_views + 1e-12
    assert optimal_views(params, p, p) == pytest.approx(params.equilibrium_views)


@settings(max_examples=200, deadline=None)
@given(q=unit, p=unit, theta=thetas)
def test_solve_user_outcome_is_consistent(q, p, theta):
    out = solve_user(UtilityParams(theta=theta), q, p)
    assert out.n_views >= 0 and out.n_shares >= 0
    assert out.n_shares <= out.n_views
    assert out.toxic_shares == pytest.approx(out.share_frac_toxic * out.n_shares)
    assert out.toxic_views == pytest.approx(q * out.n_views)
    assert out.exited == (out.raw_views <= 0 or out.raw_shares <= 0)
