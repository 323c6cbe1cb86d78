import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stretchpoly import wulff as W
from stretchpoly.lattice import Potential

vec2 = st.tuples(st.floats(-2, 2), st.floats(-2, 2)).map(np.array)


def test_killed_walk_xi_closed_form():
    for lam in [0.8, 1.0, 2.0]:
        est = W.estimate_xi(Potential.free(), lam, [1.0], 30)
        assert est.slope == pytest.approx(W.killed_walk_xi_1d(lam), abs=1e-10)
        # 2 cosh xi = e^lam
        assert 2 * math.cosh(W.killed_walk_xi_1d(lam)) == pytest.approx(math.exp(lam), rel=1e-12)


def test_free_xi_matches_enumeration_slope_in_2d():
    # along e1 with a large mass the truncation is negligible
    lam = 3.0
    est = W.estimate_xi(Potential.free(), lam, [1.0, 0.0], 8, k_min=3, cap=12)
    assert est.slope == pytest.approx(W.free_walk_xi(lam, [1.0, 0.0]), rel=0.05)


def test_reflection_symmetry():
    for pot in [Potential.sausage(1.0), Potential.saw()]:
        a = W.estimate_xi(pot, 1.5, [1.0], 20)
        b = W.estimate_xi(pot, 1.5, [-1.0], 20)
        assert a.slope == pytest.approx(b.slope, rel=1e-10)


def test_sausage_xi_at_lambda0_near_beta():
    for beta in [0.5, 1.0]:
        est = W.estimate_xi(Potential.sausage(beta), math.log(2), [1.0], 60)
        assert beta <= est.slope <= beta + 0.1


def test_polar_norm_1d_and_dual_of_l1():
    ws = W.WulffShape(1.0, 1, np.array([[1.0], [-1.0]]), np.array([0.7, 0.7]))
    assert ws.polar_norm([1.4]) == pytest.approx(2.0)
    c = 1.7
    fn = lambda x: c * np.abs(x).sum()
    ws2 = W.WulffShape.from_function(fn, 1.0, 2)
    for F in [(0.3, -1.1), (2.0, 2.0), (0.0, 1.0)]:
        assert ws2.polar_norm(F) == pytest.approx(max(abs(v) for v in F) / c, rel=1e-9)
    assert ws2.polar_norm((0.0, 0.0)) == 0.0


def test_polar_norm_grid_is_lower_bound_and_refined_exact():
    ws = W.WulffShape.free_walk(2.0, 2)
    for F in [(0.3, 0.1), (1.0, 1.0), (0.5, -0.9)]:
        exact = W.free_walk_polar(2.0, F)
        assert ws.polar_norm(F, refine=False) <= exact + 1e-12
        assert ws.polar_norm(F) == pytest.approx(exact, rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(vec2, vec2, st.floats(0.1, 3.0))
def test_polar_norm_axioms(F, G, c):
    ws = W.WulffShape.from_function(lambda x: 1.3 * np.abs(x).sum(), 1.0, 2)
    assert ws.polar_norm(c * F) == pytest.approx(c * ws.polar_norm(F), rel=1e-9, abs=1e-12)
    assert ws.polar_norm(F + G) <= ws.polar_norm(F) + ws.polar_norm(G) + 1e-9


def test_membership_consistency():
    ws = W.WulffShape.free_walk(1.6, 2)
    for F in [(0.2, 0.1), (0.6, 0.0), (0.4, 0.4)]:
        inside = ws.polar_norm(F, refine=False) <= 1
        assert inside == bool(np.all(ws.directions @ np.array(F) <= ws.xi_values + 1e-15))


def test_xi_monotone_in_lambda():
    vals = [W.free_walk_xi(lam, [0.6, 0.8]) for lam in (1.5, 2.0, 3.0)]
    assert vals == sorted(vals)
    s = [W.estimate_xi(Potential.sausage(1.0), lam, [1.0], 30).slope for lam in (0.8, 1.2, 2.0)]
    assert s == sorted(s)


def test_critical_force():
    assert W.critical_force(Potential.saw(), [1.0, 0.0]) == 0.0
    a1 = W.critical_force(Potential.sausage(1.0), [1.0])
    a2 = W.critical_force(Potential.sausage(1.0), [2.0])
    assert a1 == pytest.approx(1.0, abs=0.1)
    assert a2 == pytest.approx(a1 / 2, rel=1e-12)


def test_conjugate_lambda_free_walk():
    m = W.FreeWalkModel(1)
    f = 0.8
    lam = W.conjugate_lambda(m, [f])
    assert W.killed_walk_xi_1d(lam) == pytest.approx(f, rel=1e-10)
    m2 = W.FreeWalkModel(2)
    F = np.array([0.3, -0.5])
    assert W.conjugate_lambda(m2, F) == pytest.approx(W.free_walk_mu(F), abs=1e-12)
    # fixed point: F scaled onto the unit sphere of xi*_lam
    lam0 = 2.2
    G = F / W.free_walk_polar(lam0, F)
    assert W.conjugate_lambda(m2, G) == pytest.approx(lam0, abs=1e-10)


def test_conjugate_lambda_continuity_to_lambda0():
    m = W.FreeWalkModel(2)
    mus = [W.conjugate_lambda(m, [t, 0.0]) for t in (0.1, 0.01, 0.001)]
    assert np.all(np.diff(mus) < 0) and mus[-1] - math.log(4) < 1e-5


def test_conjugate_lambda_rejects_collapsed():
    sausage = W.EstimatedModel(Potential.sausage(1.0), 1, k_max=30)
    with pytest.raises(ValueError, match="inside"):
        W.conjugate_lambda(sausage, [0.5])


def test_drift_and_hessian_free_walk():
    for F in ([0.7], [0.4, 0.0], [0.3, -0.2, 0.5]):
        F = np.array(F)
        cm = W.drift_and_hessian(W.FreeWalkModel(len(F)), F)
        S = np.sum(2 * np.cosh(F))
        v = 2 * np.sinh(F) / S
        H = np.diag(2 * np.cosh(F) / S) - np.outer(v, v)
        assert np.allclose(cm.vbar, v, rtol=1e-4, atol=1e-9)
        assert np.allclose(cm.sigma, H, atol=1e-6)
        assert cm.positive_definite
        for j in np.flatnonzero(F == 0):
            assert abs(cm.vbar[j]) < 1e-9
    # 1d: mean step of the tilted walk
    f = 0.7
    cm = W.drift_and_hessian(W.FreeWalkModel(1), [f])
    assert cm.vbar[0] == pytest.approx(math.tanh(f), rel=1e-8)


def test_direction_grids_deterministic():
    for d in (1, 2, 3, 4):
        g = W.direction_grid(d)
        assert np.allclose(np.linalg.norm(g, axis=1), 1)
        assert np.array_equal(g, W.direction_grid(d))
    assert W.direction_grid(2).shape == (64, 2) and W.direction_grid(3).shape == (128, 3)
