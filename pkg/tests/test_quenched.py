import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import all_paths
from stretchpoly import quenched as Q
from stretchpoly.lattice import VDistribution

BERN = VDistribution("bernoulli", b=1.0, p=0.3)
LAM2 = math.log(4) + 1.0


def test_environment_reproducible_across_boxes():
    env = Q.Environment(BERN, 11, 2)
    a = Q.solve_quenched_green(env, LAM2, 0.5, 3, 4)
    b = Q.solve_quenched_green(env, LAM2, 0.5, 3, 6)
    va = env.V(a.geometry.coords())
    vb = env.V(b.geometry.coords())
    assert np.array_equal(va, vb[2:, 2:-2])
    assert set(np.unique(va)) <= {0.0, 1.0}


def test_environment_requires_zero_in_support():
    with pytest.raises(ValueError):
        Q.Environment(VDistribution("point", b=1.0), 0, 2)


def test_lambda_precondition_names_parameters():
    with pytest.raises(ValueError, match="beta=0.2"):
        Q.solve_quenched_green(Q.Environment(BERN, 0, 2), math.log(4), 0.2, 2, 3)


@pytest.mark.parametrize("N", [0, 1, 2, 3, 4])
def test_solver_equals_length_capped_sums(N):
    env = Q.Environment(BERN, 7, 2)
    r = Q.quenched_partition(env, LAM2, 0.5, N)
    z, tail = Q.layered_partition(env, LAM2, 0.5, N, 60)
    assert tail < 1e-20
    assert r.Z == pytest.approx(z, rel=1e-10)
    assert r.residual < 1e-12


def test_small_box_brute_force_paths():
    # paths of length <= 7 from 0 stopped at x1 = 2, against the length-capped sum
    env = Q.Environment(BERN, 3, 2)
    lam, beta, N, L = LAM2, 0.8, 2, 7
    tot = 0.0
    for n in range(1, L + 1):
        for p in all_paths(n, 2):
            w = np.array(p)
            if w[-1, 0] == N and np.all(w[:-1, 0] < N):
                tot += math.exp(Q.quenched_path_log_weight(w, env, lam, beta))
    z, _ = Q.layered_partition(env, lam, beta, N, L)
    assert z == pytest.approx(tot, rel=1e-12)


def test_empty_path_at_N0():
    env = Q.Environment(BERN, 7, 2)
    v0 = float(env.V(np.zeros((1, 2), dtype=np.int64))[0])
    assert Q.solve_quenched_green(env, LAM2, 0.9, 0, 3).Z == pytest.approx(math.exp(-0.9 * v0))


@pytest.mark.parametrize("lam", [0.8, 1.5])
def test_one_dimensional_first_passage(lam):
    env = Q.Environment(BERN, 1, 1)
    f = Q.homogeneous_first_passage(lam, 1)
    for N in range(1, 6):
        assert Q.solve_quenched_green(env, lam, 0.0, N, 0, M1=40).Z == pytest.approx(f ** N, rel=1e-12)


def test_zero_potential_matches_beta_zero():
    env0 = Q.Environment(VDistribution("point", b=0.0), 1, 2)
    env = Q.Environment(BERN, 1, 2)
    a = Q.solve_quenched_green(env0, LAM2, 2.0, 3, 6).Z
    b = Q.solve_quenched_green(env, LAM2, 0.0, 3, 6).Z
    assert a == pytest.approx(b, rel=1e-14)


def test_beta_zero_green_is_homogeneous():
    env = Q.Environment(BERN, 1, 2)
    r = Q.solve_quenched_green(env, LAM2, 0.0, 4, 10)
    assert r.Z == pytest.approx(Q.homogeneous_first_passage(LAM2, 2) ** 4, rel=1e-9)


def test_rank_one_site_perturbation():
    # raising V at one site x* changes g by the resolvent identity
    env = Q.Environment(VDistribution("point", b=0.0), 0, 2)
    from scipy.sparse.linalg import spsolve
    import scipy.sparse as sp
    lam, beta, N, M = LAM2, 0.7, 3, 3
    base = Q.solve_quenched_green(env, lam, beta, N, M)
    geo = base.geometry
    shape = geo.shape
    n = int(np.prod(shape))
    idx = np.arange(n).reshape(shape)
    rows, cols = [], []
    for ax in range(2):
        for sh in (1, -1):
            a = np.roll(idx, sh, axis=ax)
            mask = np.ones(shape, bool)
            if sh == 1:
                mask[(slice(None),) * ax + (0,)] = False
            else:
                mask[(slice(None),) * ax + (-1,)] = False
            rows.append(idx[mask]); cols.append(a[mask])
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    s = math.exp(-lam)
    K = sp.csr_matrix((np.full(len(rows), s), (rows, cols)), shape=(n, n))
    b = np.zeros(n); b[idx[geo.origin]] = 1.0
    g0 = spsolve(sp.eye(n) - K, b)
    assert np.allclose(g0.reshape(shape), base.g, rtol=1e-12, atol=1e-15)
    # perturb x* = (1, 1): multiply row x* of K by c
    xs = idx[(geo.M1 + 1, geo.M + 1)]
    c = math.exp(-beta * 1.0)
    D = sp.diags(np.where(np.arange(n) == xs, c, 1.0))
    g1 = spsolve(sp.eye(n) - D @ K, b)
    # Sherman-Morrison with u = (c - 1) e_x*, v = K[x*, :]
    A0 = sp.eye(n) - K
    e = np.zeros(n); e[xs] = 1.0
    z = spsolve(A0.tocsc(), e)
    vk = K[xs].toarray().ravel()
    g_sm = g0 + (c - 1) * z * (vk @ g0) / (1 - (c - 1) * (vk @ z))
    assert np.allclose(g1, g_sm, rtol=1e-12, atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0, 2), st.floats(0.01, 1))
def test_monotone_in_beta(seed, beta, db):
    env = Q.Environment(BERN, seed, 2)
    assert Q.solve_quenched_green(env, LAM2, beta + db, 2, 3).Z <= Q.solve_quenched_green(env, LAM2, beta, 2, 3).Z


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=0, max_size=8), st.floats(0.05, 2))
def test_annealed_consistency_per_path(steps, beta):
    from stretchpoly.lattice import path_from_steps
    p = path_from_steps(steps, 2)
    lam = 1.7
    for dist in (BERN, VDistribution("discrete", values=(0.0, 0.5, 2.0), probs=(0.2, 0.5, 0.3))):
        e = Q.annealed_path_expectation(p, dist, lam, beta)
        assert math.log(e) == pytest.approx(Q.annealed_path_log_weight(p, dist, lam, beta), abs=1e-12)


def test_uniform_annealed_phi_closed_form():
    from stretchpoly.lattice import annealed_phi
    dist = VDistribution("uniform", b=2.0)
    for ell in (1, 2, 5):
        t = 0.3 * ell * 2.0
        assert annealed_phi(dist, ell, 0.3) == pytest.approx(-math.log((1 - math.exp(-t)) / t), rel=1e-12)


def test_ratio_series_basics():
    rs = Q.ratio_series(BERN, LAM2, 0.0, [1, 2, 3], 8, seed=1, d=2, M=5)
    assert np.all(rs.Xi == 1.0)
    rs = Q.ratio_series(BERN, LAM2, 0.5, [1, 2, 3], 8, seed=1, d=2, M=5)
    assert np.all(rs.Xi > 0)
    assert np.allclose(rs.mean_Xi, 1.0, rtol=1e-12)
    assert len(rs.records) == 24
    with pytest.raises(ValueError):
        Q.ratio_series(BERN, LAM2, 0.5, [1], 7)


def test_ratio_series_parallel_is_identical():
    a = Q.ratio_series(BERN, LAM2, 0.5, [1, 2], 8, seed=3, d=2, M=4)
    b = Q.ratio_series(BERN, LAM2, 0.5, [1, 2], 8, seed=3, d=2, M=4, workers=2)
    assert np.array_equal(a.log_Z, b.log_Z)


def test_homogeneous_transverse_variance():
    env = Q.Environment(BERN, 1, 2)
    for N in (2, 5):
        r = Q.solve_quenched_green(env, LAM2, 0.0, N, 16)
        mean, sq = r.transverse_moments()
        assert abs(mean[0]) < 1e-12
        assert sq / N == pytest.approx(Q.homogeneous_transverse_variance(LAM2, 2), rel=1e-8)
    xi = -math.log(Q.homogeneous_first_passage(LAM2, 2))
    assert Q.homogeneous_transverse_variance(LAM2, 2) == pytest.approx(1 / math.sinh(xi), rel=1e-12)


def test_diffusivity_probe_beta_zero():
    rep = Q.diffusivity_probe(BERN, LAM2, 0.0, [2, 4], 8, d=2, M=14)
    assert np.allclose(rep.per_N, rep.homogeneous, rtol=1e-7)
    assert rep.richardson_flags == []
    assert rep.max_abs_mean < 1e-12


def test_quenched_renewal_identity():
    env = Q.Environment(VDistribution("bernoulli", b=1.0, p=0.5), 5, 2)
    lam = math.log(4) + 0.5
    r0 = Q.verify_quenched_renewal(env, lam, 0.0, [2, 4, 6])
    assert r0.ansatz == 1.0
    r = Q.verify_quenched_renewal(env, lam, 0.3, [2, 4, 6])
    assert r.monotone and r.single_piece_exact
    assert r.residual[-1] < 1e-13
