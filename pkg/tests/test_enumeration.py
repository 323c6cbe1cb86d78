import math

import numpy as np
import pytest

from oracles import naive_bridges, naive_cylinder, naive_endpoint_logs, naive_log_G, naive_log_Z
from stretchpoly import enumeration as E
from stretchpoly.lattice import Potential, VDistribution

CATALOG = [
    Potential.free(), Potential.saw(), Potential.domb_joyce(0.5), Potential.sausage(1.0),
    Potential.reinforced([1.0, 0.5, 0.25]), Potential.two_color(0.7),
    Potential.annealed(VDistribution("bernoulli", p=0.5, b=1.0), 1.0),
    Potential.custom([0.0, 1.0, 3.0]),
]


@pytest.mark.parametrize("pot", CATALOG, ids=lambda p: p.label)
@pytest.mark.parametrize("d", [1, 2])
def test_table_matches_naive_endpoints(pot, d):
    n = 5
    tab = E.enumeration_table(pot, d, n)
    for k in range(n + 1):
        ref = naive_endpoint_logs(pot, k, d)
        for x, val in ref.items():
            got = tab.log_Z_fixed(k, x)
            if math.isinf(val):
                assert math.isinf(got)
            else:
                assert got == pytest.approx(val, rel=1e-12, abs=1e-12)
        total = sum(1 for j in range(len(tab.coords)) if np.isfinite(tab.log_acc[k, j]))
        assert total == sum(1 for v in ref.values() if np.isfinite(v))


def test_force_and_lambda_reweighting():
    pot = Potential.domb_joyce(0.3)
    F = (0.4, -0.2)
    for n in range(5):
        assert E.enumerate_Z(pot, n, force=F, lam=0.7).value == pytest.approx(
            naive_log_Z(pot, n, 2, F, 0.7), rel=1e-12)


def test_free_walk_closed_form():
    for F in [(0.0, 0.0), (0.3, 0.1), (1.2, -0.5)]:
        mu = math.log(sum(2 * math.cosh(f) for f in F))
        for n in range(9):
            assert E.enumerate_Z(Potential.free(), n, force=F).value == pytest.approx(n * mu, rel=1e-12, abs=1e-12)


def test_saw_counts():
    known = [1, 4, 12, 36, 100, 284, 780, 2172, 5916, 16268, 44100]
    tab = E.enumeration_table(Potential.saw(), 2, 10)
    assert [round(math.exp(tab.log_Z(n))) for n in range(11)] == known


def test_two_point_matches_naive():
    pot = Potential.sausage(0.5)
    for x in [(0, 0), (1, 0), (2, 1)]:
        got = E.two_point_function(pot, 2.0, x, 5).entries[x]
        assert got == pytest.approx(naive_log_G(pot, x, 2.0, 5, 2), rel=1e-12)


def test_bridges_match_naive():
    pot = Potential.domb_joyce(0.4)
    tab = E.bridge_table(pot, 2, 5)
    for n in range(1, 6):
        assert tab.log_Z(n) == pytest.approx(naive_bridges(pot, n, 2), rel=1e-12)


@pytest.mark.parametrize("pot", [Potential.saw(), Potential.sausage(1.0), Potential.domb_joyce(0.5)], ids=lambda p: p.label)
def test_bracket_contains_extrapolated_rate(pot):
    b = E.free_energy_bracket(pot, 10, 2)
    assert b.lower <= b.upper
    if pot.kind == "saw":
        assert b.contains(math.log(2.63815853))


def test_bracket_is_nested_in_n():
    pot = Potential.saw()
    b8, b10 = E.free_energy_bracket(pot, 8, 2), E.free_energy_bracket(pot, 10, 2)
    assert b10.lower >= b8.lower - 1e-15 and b10.upper <= b8.upper + 1e-15


def test_tail_bound_dominates_exact_tail_1d_saw():
    # in d=1 every SAW is straight: Z_n = 2 for n >= 1
    lam, cap = 0.8, 6
    t = E.two_point_function(Potential.saw(), lam, (2,), cap)
    exact = math.log(2 * math.exp(-lam * (cap + 1)) / (1 - math.exp(-lam)))
    assert t.controlled and t.tail_bound >= exact - 1e-12


def test_truncated_two_point_is_uncontrolled_below_bracket():
    t = E.two_point_function(Potential.free(), 0.5, (1,), 6)
    assert not t.controlled and math.isinf(t.tail_bound)


def test_cap_refusal_reports_cost():
    with pytest.raises(E.EnumerationCapExceeded, match="nodes"):
        E.enumerate_Z(Potential.saw(), 40, d=2)


def test_cube_transfer_matches_capped_enumeration():
    pot = Potential.sausage(0.7)
    lam = 3.5
    res = E.cube_confined_sum(pot, lam, 1, 2)
    assert res.method == "transfer"
    acc = E._run_kernel(pot, 2, 12, lo=np.full(2, -1), hi=np.full(2, 1))
    from scipy.special import logsumexp
    capped = logsumexp(acc - lam * np.arange(13)[:, None])
    assert res.value == pytest.approx(float(capped), abs=1e-9)


def test_cube_free_walk_divergence_flag():
    # the 1d walk on {-2..2}: Perron root 2cos(pi/6) = sqrt(3)
    ok = E.cube_confined_sum(Potential.free(), math.log(math.sqrt(3)) + 0.01, 2, 1)
    bad = E.cube_confined_sum(Potential.free(), math.log(math.sqrt(3)) - 0.01, 2, 1)
    assert math.isfinite(ok.value) and bad.value == math.inf and bad.spectral_radius >= 1


@pytest.mark.parametrize("half", [False, True])
def test_cylinder_sums_match_naive(half):
    pot = Potential.domb_joyce(0.3)
    s = E.halfspace_and_cylinder_sums(pot, 1.0, 2, 6, 2)
    got = s.log_halfspace if half else s.log_cylinder
    assert got == pytest.approx(naive_cylinder(pot, 1.0, 2, 6, 2, half=half), rel=1e-12)


def test_supermultiplicativity_report_1d():
    rep = E.supermultiplicativity_report(Potential.domb_joyce(0.5), 1.0, 6, 20, 1)
    assert rep and all(r["slack"] >= 0 for r in rep)


def test_critical_mass_terms_free():
    terms = E.critical_mass_terms(Potential.free(), math.log(4), 10, 2)
    assert np.all(terms == 1.0)
    assert np.all(E.critical_mass_terms(Potential.free(), math.log(2), 20, 1) == 1.0)
    saw = Potential.saw()
    ref = np.exp(E.enumeration_table(saw, 2, 8).log_Z_series() - 1.2 * np.arange(9))
    assert np.allclose(E.critical_mass_terms(saw, 1.2, 8, 2), ref, rtol=1e-13, atol=0)
