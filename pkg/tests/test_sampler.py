import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import binom

from stretchpoly import enumeration as E
from stretchpoly import sampler as S
from stretchpoly.lattice import Potential


def test_free_walk_endpoint_bins_match_binomial():
    n = 10
    ss = S.sample(Potential.free(), n, [0.0], S.SamplerConfig(n_samples=200_000, seed=11))
    tally = ss.tallies()
    m = ss.n_samples
    ess_factor = m / ss.ess()
    for k in range(n + 1):
        x = 2 * k - n
        p = binom.pmf(k, n, 0.5)
        sd = math.sqrt(m * p * (1 - p) * max(ess_factor, 1.0))
        assert abs(tally.get((x,), 0) - m * p) < 4 * sd + 1


def test_seed_determinism():
    cfg = S.SamplerConfig(n_samples=5000, seed=42, n_chains=2)
    a = S.sample(Potential.domb_joyce(0.5), 8, [0.2, 0.1], cfg)
    b = S.sample(Potential.domb_joyce(0.5), 8, [0.2, 0.1], cfg)
    assert np.array_equal(a.endpoints, b.endpoints)
    assert a.acceptance == b.acceptance
    c = S.sample(Potential.domb_joyce(0.5), 8, [0.2, 0.1], S.SamplerConfig(n_samples=5000, seed=43, n_chains=2))
    assert not np.array_equal(a.endpoints, c.endpoints)


def test_tally_total_and_rates():
    ss = S.sample(Potential.saw(), 12, [0.3, 0.0], S.SamplerConfig(n_samples=3000, seed=1))
    assert sum(ss.tallies().values()) == ss.n_samples == 3000
    assert all(0 <= r <= 1 for r in ss.acceptance.values())


def test_saw_chain_stays_in_support():
    ss = S.sample(Potential.saw(), 7, [0.0, 0.0], S.SamplerConfig(n_samples=20_000, seed=5, keep_paths=50))
    from stretchpoly.lattice import interaction_energy, path_from_steps
    for steps in ss.paths:
        assert math.isfinite(interaction_energy(path_from_steps(steps, 2), Potential.saw()))


def test_tv_decreases_with_samples():
    pot = Potential.sausage(0.6)
    exact = E.enumeration_table(pot, 2, 4).endpoint_law(4, [0.4, 0.0])
    tvs = [S.total_variation(S.sample(pot, 4, [0.4, 0.0], S.SamplerConfig(n_samples=m, seed=3)).endpoint_law(), exact)
           for m in (10_000, 100_000, 1_000_000)]
    assert tvs[0] > tvs[1] > tvs[2]
    assert tvs[2] < 0.01


steps_st = st.lists(st.integers(0, 3), min_size=3, max_size=9)


@settings(max_examples=60, deadline=None)
@given(steps_st, st.integers(0, 10_000))
def test_hastings_ratio_antisymmetric(steps, r):
    rng = np.random.default_rng(r)
    pot = Potential.domb_joyce(0.7)
    F = np.array([0.4, -0.3])
    old = np.array(steps)
    n = len(old)
    # corner swap
    i = rng.integers(0, n - 1)
    new = old.copy()
    new[i], new[i + 1] = old[i + 1], old[i]
    assert S.log_acceptance_ratio(pot, F, old, new, "local") == pytest.approx(
        -S.log_acceptance_ratio(pot, F, new, old, "local"))
    # tail regrow: the tilt cancels against the proposal
    k = int(rng.integers(1, min(4, n) + 1))
    new = old.copy()
    new[n - k:] = rng.integers(0, 4, size=k)
    fwd = S.log_acceptance_ratio(pot, F, old, new, "regrow")
    assert fwd == pytest.approx(-S.log_acceptance_ratio(pot, F, new, old, "regrow"))
    from stretchpoly.lattice import interaction_energy, path_from_steps
    dphi = interaction_energy(path_from_steps(new, 2), pot) - interaction_energy(path_from_steps(old, 2), pot)
    assert fwd == pytest.approx(-dphi, abs=1e-12)
    # pivot with a random symmetry
    g = S.symmetry_maps(2)[rng.integers(0, 7)]
    j = int(rng.integers(0, n))
    new = old.copy()
    new[j:] = g[old[j:]]
    assert S.log_acceptance_ratio(pot, F, old, new, "pivot") == pytest.approx(
        -S.log_acceptance_ratio(pot, F, new, old, "pivot"))


def test_symmetry_group_sizes():
    assert len(S.symmetry_maps(1)) == 1
    assert len(S.symmetry_maps(2)) == 7
    assert len(S.symmetry_maps(3)) == 47
    for m in S.symmetry_maps(3):
        assert sorted(m) == list(range(6))


def test_direct_sampler_mean_step():
    F = np.array([0.5, 0.0])
    ss = S.sample_tilted_free(50, F, 100_000, seed=2)
    S_ = np.sum(2 * np.cosh(F))
    v = 2 * np.sinh(F) / S_
    H = np.diag(2 * np.cosh(F) / S_) - np.outer(v, v)
    rep = S.endpoint_clt_check(ss, v, H)
    assert rep.mean_rel_err[0] < 1e-2
    assert abs(rep.transverse_z[1]) < 4
    assert rep.positive_definite and np.all(rep.cov_rel_err < 0.05)


def test_phase_probe_verdicts():
    cfg = S.SamplerConfig(n_samples=5000, seed=3, n_chains=2)
    v = S.phase_probe(Potential.sausage(1.0), [16, 32], [0.0, 0.0], 0.1, cfg)
    assert v.verdict == "collapsed-consistent"
    v = S.phase_probe(Potential.saw(), [16, 32], [0.5, 0.0], 0.1, cfg)
    assert v.verdict == "stretched-consistent"


def test_abort_on_frozen_chain():
    # an enormous force makes every move but a tiny fraction fail
    with pytest.raises(S.SamplerAbort):
        S.sample(Potential.saw(), 30, [60.0],
                 S.SamplerConfig(n_samples=100, seed=0, moves=(1.0, 0.0, 1.0), abort_window=5_000))


def test_config_validation():
    with pytest.raises(ValueError):
        S.SamplerConfig(moves=(1.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        S.SamplerConfig(moves=(1.0, -1.0, 1.0))


def test_rhat_near_one_for_mixed_chains():
    ss = S.sample(Potential.domb_joyce(0.5), 10, [0.3, 0.0], S.SamplerConfig(n_samples=40_000, seed=9, n_chains=4))
    assert ss.rhat() < 1.05
