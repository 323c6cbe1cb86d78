"""Cone points, irreducible decompositions and the renewal identities.

For a force F and mass lam the forward cone is
``Y = {x : <x, F> > kappa xi_lam(x)}``; it is a convex cone because
``xi_lam`` is a norm.  A vertex ``w(k)`` (``0 < k < l``) is a cone point when
the past lies in ``w(k) - Y`` and the future in ``w(k) + Y``.  Splitting at
every cone point yields irreducible bulk pieces; by convexity of Y the
junctions are visited once, so a path made only of bulk pieces has weight
``exp(-phi(1)) * prod P(w_i)`` with
``P(w) = exp(phi(1) - Phi(w) - lam |w| + <F, D(w)>)``.

In d <= 2 the cone is polyhedral (one or two linear functionals), which
gives a linear-time cone-point scan and lets the piece enumeration run in
numba.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from .enumeration import endpoint_coords
from .lattice import Potential, as_path, interaction_energy, unit_steps


# ---------------------------------------------------------------------------
# cone
# ---------------------------------------------------------------------------

@dataclass
class Cone:
    """Forward cone ``{x : <x, F> > kappa xi(x)}``.

    ``xi`` is any norm evaluator (homogeneous, defined on R^d).  In d <= 2
    ``functionals`` holds rows ``a`` with ``x in Y  <=>  a @ x > 0`` for all rows.
    """

    F: np.ndarray
    lam: float
    kappa: float
    xi: Callable = field(repr=False)
    functionals: np.ndarray | None = None

    @classmethod
    def build(cls, F, lam: float, xi: Callable, kappa: float | None = None) -> "Cone":
        F = np.atleast_1d(np.asarray(F, float))
        d = len(F)
        if not np.any(F):
            raise ValueError("the cone needs a non-zero force")
        steps = unit_steps(d).astype(float)
        ratios = [float(e @ F) / xi(e) for e in steps if e @ F > 0]
        if kappa is None:
            kappa = 0.5 * min(ratios)
        if not 0 < kappa < 1:
            raise ValueError("kappa must lie in (0, 1)")
        if not any(r > kappa for r in ratios):
            raise ValueError("Y contains no neighbour of the origin for this kappa")
        cone = cls(F, lam, kappa, xi)
        if d == 1:
            cone.functionals = np.array([[math.copysign(1.0, F[0])]])
        elif d == 2:
            cone.functionals = cone._planar_functionals()
        return cone

    def h(self, x) -> float:
        x = np.asarray(x, float)
        return float(x @ self.F) - self.kappa * self.xi(x)

    def contains(self, x) -> bool:
        x = np.asarray(x, float)
        if not np.any(x):
            return False
        return self.h(x) > 0

    def contains_fast(self, X) -> np.ndarray:
        """Vectorised membership via the linear functionals (d <= 2)."""
        X = np.atleast_2d(np.asarray(X, float))
        if self.functionals is None:
            return np.array([self.contains(x) for x in X])
        return np.all(X @ self.functionals.T > 0, axis=1)

    def _planar_functionals(self) -> np.ndarray:
        def hh(t):
            return self.h(np.array([math.cos(t), math.sin(t)]))

        grid = np.linspace(-np.pi, np.pi, 3601)
        vals = np.array([hh(t) for t in grid])
        j = int(np.argmax(vals))
        t0 = grid[j]
        # walk out to the sign changes on each side
        step = 2 * np.pi / 3600
        lo = t0
        while hh(lo) > 0:
            lo -= step
        hi = t0
        while hh(hi) > 0:
            hi += step
        t_minus = brentq(hh, lo, lo + step, xtol=1e-15)
        t_plus = brentq(hh, hi - step, hi, xtol=1e-15)
        if t_plus - t_minus >= np.pi:
            raise ValueError("cone opening must be below pi")
        a_m = np.array([math.cos(t_minus), math.sin(t_minus)])
        a_p = np.array([math.cos(t_plus), math.sin(t_plus)])
        # cross(a_m, x) > 0 and cross(x, a_p) > 0
        return np.array([[-a_m[1], a_m[0]], [a_p[1], -a_p[0]]])

    def contains_neighbour(self) -> bool:
        return any(self.contains(e) for e in unit_steps(len(self.F)))


# ---------------------------------------------------------------------------
# cone points
# ---------------------------------------------------------------------------

def find_cone_points_reference(path, cone: Cone) -> list[int]:
    """O(l^2) scan straight from the definition, with the xi-based membership."""
    w = as_path(path)
    l = len(w) - 1
    out = []
    for k in range(1, l):
        if all(cone.contains(w[k] - w[j]) for j in range(k)) and \
           all(cone.contains(w[j] - w[k]) for j in range(k + 1, l + 1)):
            out.append(k)
    return out


@numba.njit(cache=True)
def _cone_mask(vals):
    """vals[j, q] = functional q at vertex j; True where vertex k is a cone point."""
    m, nq = vals.shape
    l = m - 1
    pre = np.empty((m, nq))
    suf = np.empty((m, nq))
    for q in range(nq):
        pre[0, q] = vals[0, q]
        for j in range(1, m):
            pre[j, q] = max(pre[j - 1, q], vals[j, q])
        suf[l, q] = vals[l, q]
        for j in range(l - 1, -1, -1):
            suf[j, q] = min(suf[j + 1, q], vals[j, q])
    mask = np.zeros(m, dtype=np.bool_)
    for k in range(1, l):
        ok = True
        for q in range(nq):
            if not (pre[k - 1, q] < vals[k, q] < suf[k + 1, q]):
                ok = False
                break
        mask[k] = ok
    return mask


def find_cone_points(path, cone: Cone) -> list[int]:
    """Cone-point indices.  Linear time for polyhedral cones (d <= 2)."""
    w = as_path(path).astype(float)
    if cone.functionals is not None:
        return [int(k) for k in np.flatnonzero(_cone_mask(w @ cone.functionals.T))]
    # general d: projection prefilter then exact check of the survivors
    proj = w @ cone.F
    l = len(w) - 1
    pre = np.maximum.accumulate(proj)
    suf = np.minimum.accumulate(proj[::-1])[::-1]
    out = []
    for k in range(1, l):
        if not (pre[k - 1] < proj[k] < suf[k + 1]):
            continue
        if all(cone.contains(w[k] - w[j]) for j in range(k)) and \
           all(cone.contains(w[j] - w[k]) for j in range(k + 1, l + 1)):
            out.append(k)
    return out


# ---------------------------------------------------------------------------
# decomposition
# ---------------------------------------------------------------------------

@dataclass
class IrreducibleDecomposition:
    omega_L: np.ndarray | None
    pieces: list
    omega_R: np.ndarray | None
    cone_points: list

    @property
    def m(self) -> int:
        return len(self.pieces)

    @property
    def sector(self) -> bool:
        """True when both boundary pieces are empty."""
        return self.omega_L is None and self.omega_R is None

    def concatenate(self) -> np.ndarray:
        parts = [p for p in [self.omega_L, *self.pieces, self.omega_R] if p is not None]
        out = [parts[0]]
        for p in parts[1:]:
            out.append(p[1:])
        return np.concatenate(out)


def is_cone_confined(w, cone: Cone) -> bool:
    """``w(j) in w(0) + Y`` for j >= 1 and ``w(j) in w(l) - Y`` for j < l."""
    w = as_path(w)
    if len(w) < 2:
        return False
    fwd = w[1:] - w[0]
    bwd = w[-1] - w[:-1]
    return bool(np.all(cone.contains_fast(fwd)) and np.all(cone.contains_fast(bwd)))


def decompose(path, cone: Cone) -> IrreducibleDecomposition:
    """Split at every cone point; label unconfined end segments as boundary pieces.

    Segments between consecutive cone points are automatically confined and
    irreducible (Y + Y is contained in Y), so no merging is ever needed; the
    check is kept as an assertion.
    """
    w = as_path(path)
    cps = find_cone_points(w, cone)
    cuts = [0, *cps, len(w) - 1]
    segs = [w[a:b + 1] for a, b in zip(cuts[:-1], cuts[1:])]
    left = right = None
    if len(segs) == 1:
        if is_cone_confined(segs[0], cone):
            return IrreducibleDecomposition(None, [segs[0]], None, [])
        return IrreducibleDecomposition(segs[0], [], None, [])
    if not is_cone_confined(segs[0], cone):
        left = segs.pop(0)
    if not is_cone_confined(segs[-1], cone):
        right = segs.pop()
    for s in segs:
        if not is_cone_confined(s, cone):  # pragma: no cover - excluded by convexity
            raise AssertionError("bulk segment violates cone confinement")
    return IrreducibleDecomposition(left, segs, right, cps)


def is_irreducible(w, cone: Cone) -> bool:
    return is_cone_confined(w, cone) and not find_cone_points(w, cone)


def log_irreducible_weight(omega, pot: Potential, lam: float, F, cone: Cone | None = None) -> float:
    w = as_path(omega)
    if cone is not None and not is_irreducible(w, cone):
        raise ValueError("path is not an irreducible piece for this cone")
    F = np.atleast_1d(np.asarray(F, float))
    energy = interaction_energy(w, pot)
    if math.isinf(energy):
        return -math.inf
    D = (w[-1] - w[0]).astype(float)
    return pot.phi1 - energy - lam * (len(w) - 1) + float(F @ D)


def irreducible_measure_weight(omega, pot: Potential, lam: float, F, cone: Cone | None = None) -> float:
    """``P_lam^F(omega) = exp(phi(1) - Phi - lam |omega| + <F, D(omega)>)``."""
    return math.exp(log_irreducible_weight(omega, pot, lam, F, cone))


# ---------------------------------------------------------------------------
# enumeration of pieces and bulk-only paths (polyhedral cones)
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _cone_dfs(n_max, d, inc, Lf, mode, acc_m, acc_s):
    """DFS over paths whose vertices j >= 1 all lie in Y.

    mode 0 records irreducible pieces, mode 1 records bulk-only paths
    (last segment after the final cone point is confined).
    """
    two_d = 2 * d
    side = 2 * n_max + 1
    nq = Lf.shape[0]
    size = side ** d
    grid = np.zeros(size, dtype=np.int64)
    pos = np.zeros((n_max + 1, d), dtype=np.int64)
    vals = np.zeros((n_max + 1, nq))
    choice = np.zeros(n_max + 1, dtype=np.int64)
    energy = np.zeros(n_max + 1)
    gidx = np.zeros(n_max + 1, dtype=np.int64)
    g0 = 0
    mul = 1
    for i in range(d):
        g0 += n_max * mul
        mul *= side
    gidx[0] = g0
    grid[g0] = 1
    energy[0] = inc[0]
    if math.isinf(energy[0]):
        return
    depth = 0
    choice[0] = 0
    while True:
        c = choice[depth]
        if depth == n_max or c >= two_d:
            if depth == 0:
                break
            grid[gidx[depth]] -= 1
            depth -= 1
            choice[depth] += 1
            continue
        ax = c // 2
        sgn = 1 if c % 2 == 0 else -1
        inside = True
        for q in range(nq):
            v = vals[depth, q] + sgn * Lf[q, ax]
            if v <= 0:
                inside = False
        if not inside:
            choice[depth] += 1
            continue
        g = gidx[depth] + sgn * (side ** ax)
        cnt = grid[g]
        de = inc[cnt]
        if math.isinf(de):
            choice[depth] += 1
            continue
        grid[g] = cnt + 1
        depth += 1
        gidx[depth] = g
        for i in range(d):
            pos[depth, i] = pos[depth - 1, i]
        pos[depth, ax] += sgn
        for q in range(nq):
            vals[depth, q] = vals[depth - 1, q] + sgn * Lf[q, ax]
        energy[depth] = energy[depth - 1] + de
        choice[depth] = 0
        l = depth
        mask = _cone_mask(vals[: l + 1])
        last = 0
        for k in range(1, l):
            if mask[k]:
                last = k
        if mode == 0 and last > 0:
            continue
        ok = True
        for j in range(max(last, 1), l):
            for q in range(nq):
                if vals[j, q] >= vals[l, q]:
                    ok = False
        if not ok:
            continue
        ep = 0
        mul = 1
        for i in range(d):
            ep += (pos[l, i] + n_max) * mul
            mul *= side
        w = -energy[l]
        m = acc_m[l, ep]
        if w > m:
            acc_s[l, ep] = acc_s[l, ep] * math.exp(m - w) + 1.0
            acc_m[l, ep] = w
        else:
            acc_s[l, ep] += math.exp(w - m)


def _cone_table(pot: Potential, cone: Cone, n_max: int, mode: int) -> np.ndarray:
    if cone.functionals is None:
        raise NotImplementedError("piece enumeration needs a polyhedral cone (d <= 2)")
    d = len(cone.F)
    n_ep = (2 * n_max + 1) ** d
    m = np.full((n_max + 1, n_ep), -np.inf)
    s = np.zeros((n_max + 1, n_ep))
    _cone_dfs(n_max, d, pot.increments(n_max + 2), np.ascontiguousarray(cone.functionals), mode, m, s)
    with np.errstate(divide="ignore"):
        return m + np.log(s)


@dataclass
class PieceTable:
    """Irreducible pieces up to length L: ``log sum exp(-Phi)`` per (length, D)."""

    pot: Potential
    cone: Cone
    L: int
    log_acc: np.ndarray
    coords: np.ndarray

    def log_P(self, lam: float, F) -> np.ndarray:
        F = np.atleast_1d(np.asarray(F, float))
        return (self.pot.phi1 + self.log_acc - lam * np.arange(self.L + 1)[:, None]
                + (self.coords @ F)[None, :])

    def length_law(self, lam: float, F) -> np.ndarray:
        """Truncated piece-length masses ``P(|w| = l)`` for l <= L."""
        with np.errstate(invalid="ignore"):
            return np.exp(logsumexp(self.log_P(lam, F), axis=1))

    def total_mass(self, lam: float, F) -> float:
        return float(np.nansum(self.length_law(lam, F)))


def enumerate_pieces(pot: Potential, cone: Cone, L: int) -> PieceTable:
    d = len(cone.F)
    return PieceTable(pot, cone, L, _cone_table(pot, cone, L, 0), endpoint_coords(L, d))


def enumerate_bulk_paths(pot: Potential, cone: Cone, P: int) -> PieceTable:
    """Paths of length <= P whose decomposition has no boundary pieces."""
    d = len(cone.F)
    return PieceTable(pot, cone, P, _cone_table(pot, cone, P, 1), endpoint_coords(P, d))


# ---------------------------------------------------------------------------
# renewal identities
# ---------------------------------------------------------------------------

def _renewal_lengths(p: np.ndarray, n_max: int) -> np.ndarray:
    u = np.zeros(n_max + 1)
    u[0] = 1.0
    for n in range(1, n_max + 1):
        u[n] = sum(p[l] * u[n - l] for l in range(1, min(n, len(p) - 1) + 1))
    return u


def _renewal_displacements(Pw: np.ndarray, coords_p: np.ndarray, P: int, d: int) -> dict:
    """Sum over strings of pieces with total length <= P: mass per total displacement."""
    side = 2 * P + 1
    shape = (P + 1,) + (side,) * d
    u = np.zeros(shape)
    u[(0,) + (P,) * d] = 1.0
    entries = [(l, tuple(int(v) for v in coords_p[j]), Pw[l, j])
               for l in range(1, Pw.shape[0]) for j in np.flatnonzero(Pw[l] > 0)]
    for n in range(1, P + 1):
        for l, y, w in entries:
            if l > n:
                continue
            src = u[n - l]
            # shift src by y
            sl_dst, sl_src = [], []
            for a in range(d):
                if y[a] >= 0:
                    sl_dst.append(slice(y[a], side))
                    sl_src.append(slice(0, side - y[a]))
                else:
                    sl_dst.append(slice(0, side + y[a]))
                    sl_src.append(slice(-y[a], side))
            u[n][tuple(sl_dst)] += w * src[tuple(sl_src)]
    return u


@dataclass
class RenewalReport:
    caps: list
    cpf1_n: list
    cpf1_lhs: list  # bulk-only Z_n^F e^{-lam n}
    cpf1_rhs: list  # per cap, list over n
    cpf1_residual: list  # per cap, max relative residual over n
    cpf2_x: list
    cpf2_lhs: list
    cpf2_rhs: list
    cpf2_residual: list
    boundary_fraction_Z: list  # 1 - bulk/full per n
    single_piece_exact: bool
    monotone: bool
    flags: list = field(default_factory=list)


def verify_renewal_identities(pot: Potential, lam: float, F, cone: Cone, n_list, x_list, caps,
                              path_cap: int | None = None) -> RenewalReport:
    """Compare bulk-only sums with renewal convolutions of truncated piece laws.

    CPF1 at each n: ``sum_{bulk gamma, |gamma| = n} W`` versus
    ``exp(-phi(1)) sum_N (P restricted to |w| <= L)^{*N}(|.| = n)``.
    CPF2 at each x: the same with total displacement x and total length
    ``<= path_cap``.  The residual at cap L is exactly the mass of strings
    using a piece longer than L, so it decreases to 0 at ``L = path_cap``.
    """
    from .enumeration import enumeration_table

    F = np.atleast_1d(np.asarray(F, float))
    d = len(F)
    P = path_cap if path_cap is not None else max(max(n_list), max(caps))
    caps = sorted(caps)
    bulk = enumerate_bulk_paths(pot, cone, P)
    pieces = enumerate_pieces(pot, cone, max(caps))
    e_phi1 = math.exp(-pot.phi1)
    with np.errstate(invalid="ignore"):
        bulkP = np.exp(bulk.log_P(lam, F) - pot.phi1)  # W_lam^F per (length, endpoint)
        base = np.exp(pieces.log_P(lam, F))
    bulkP = np.nan_to_num(bulkP)
    base = np.nan_to_num(base)
    lhs1 = [float(bulkP[n].sum()) for n in n_list]
    full = enumeration_table(pot, d, min(max(n_list), 14 if d == 2 else max(n_list)))
    bfrac = []
    for n in n_list:
        if n <= full.n_max:
            zfull = math.exp(full.log_Z(n, F, lam))
            bfrac.append(1 - bulkP[n].sum() / zfull)
        else:
            bfrac.append(float("nan"))
    idx_P = {tuple(int(v) for v in c): j for j, c in enumerate(bulk.coords)}
    lhs2 = [float(bulkP[:, idx_P[tuple(x)]].sum()) if tuple(x) in idx_P else 0.0 for x in x_list]
    rhs1, rhs2, res1, res2 = [], [], [], []
    for L in caps:
        Pw = base[: L + 1]
        p = Pw.sum(axis=1)
        u = _renewal_lengths(p, max(n_list))
        r1 = [e_phi1 * u[n] for n in n_list]
        rhs1.append(r1)
        res1.append(max(abs(a - b) / a if a > 0 else abs(b) for a, b in zip(lhs1, r1)))
        coords_p = pieces.coords
        U = _renewal_displacements(Pw, coords_p, P, d).sum(axis=0)
        r2 = []
        for x in x_list:
            ix = tuple(int(v) + P for v in x)
            r2.append(e_phi1 * float(U[ix]) if all(0 <= i < 2 * P + 1 for i in ix) else 0.0)
        rhs2.append(r2)
        res2.append(max(abs(a - b) / a if a > 0 else abs(b) for a, b in zip(lhs2, r2)) if x_list else 0.0)
    # length-1 bulk paths are single steps into Y: one-piece strings only
    p1 = base[1].sum()
    single = math.isclose(float(bulkP[1].sum()), e_phi1 * float(p1), rel_tol=1e-12)
    mono = all(res1[i + 1] <= res1[i] + 1e-15 for i in range(len(caps) - 1)) and \
        all(res2[i + 1] <= res2[i] + 1e-15 for i in range(len(caps) - 1))
    flags = [] if mono else ["residual not decreasing in the piece cap"]
    return RenewalReport(caps, list(n_list), lhs1, rhs1, res1, [tuple(x) for x in x_list], lhs2, rhs2, res2,
                         bfrac, bool(single), mono, flags)


# ---------------------------------------------------------------------------
# statistics of sampled decompositions
# ---------------------------------------------------------------------------

@dataclass
class TailFit:
    threshold: float
    nu2: float
    nu2_ci: tuple[float, float]
    nu1: float
    n_tail: int


def geometric_tail_fit(lengths, level: float = 0.95) -> TailFit:
    """Geometric MLE on the upper half: exceedances over the median."""
    from scipy.stats import norm

    x = np.asarray(lengths, float)
    if len(x) < 100:
        raise ValueError("fewer than 100 pieces: tail fit refused")
    t = float(np.median(x))
    exc = x[x >= t] - t
    m = len(exc)
    mean = float(exc.mean())
    if mean == 0:
        return TailFit(t, math.inf, (math.inf, math.inf), float(np.mean(x > t)), m)
    p = 1.0 / (1.0 + mean)
    nu2 = -math.log1p(-p)
    se = p / math.sqrt(m * (1 - p))
    z = norm.ppf(0.5 + level / 2)
    nu1 = float(np.mean(x > t)) * math.exp(nu2 * t)
    return TailFit(t, nu2, (nu2 - z * se, nu2 + z * se), nu1, m)


@dataclass
class PieceStats:
    lengths: np.ndarray
    displacements: np.ndarray
    pieces_per_path: np.ndarray
    path_length: int
    length_fit: TailFit | None
    displacement_fit: TailFit | None
    max_length: int
    sector_fraction: float

    def length_histogram(self) -> tuple[np.ndarray, np.ndarray]:
        vals, cnt = np.unique(self.lengths, return_counts=True)
        return vals, cnt

    def count_check(self) -> dict:
        """Piece count against ``n / E|w|`` in units of its spread."""
        mean_len = float(self.lengths.mean())
        expect = self.path_length / mean_len
        m = self.pieces_per_path
        z = (float(m.mean()) - expect) / max(float(m.std(ddof=1)), 1e-12)
        return {"mean_pieces": float(m.mean()), "expected": expect, "z": z,
                "within_3sd": bool(abs(float(m.mean()) - expect) <= 3 * float(m.std(ddof=1)))}


def piece_statistics(paths, cone: Cone) -> PieceStats:
    lengths, disps, counts = [], [], []
    n_sector = 0
    n = None
    for p in paths:
        w = as_path(p)
        n = len(w) - 1
        dec = decompose(w, cone)
        n_sector += dec.sector
        counts.append(dec.m)
        for piece in dec.pieces:
            lengths.append(len(piece) - 1)
            disps.append(float(np.linalg.norm(piece[-1] - piece[0])))
    lengths = np.array(lengths, dtype=np.int64)
    disps = np.array(disps)
    lf = geometric_tail_fit(lengths) if len(lengths) >= 100 else None
    df = geometric_tail_fit(np.ceil(disps)) if len(disps) >= 100 else None
    return PieceStats(lengths, disps, np.array(counts), int(n or 0), lf, df,
                      int(lengths.max()) if len(lengths) else 0, n_sector / max(len(counts), 1))


def steps_to_paths(step_rows, d: int) -> list[np.ndarray]:
    from .lattice import path_from_steps
    return [path_from_steps(s, d) for s in step_rows]


# ---------------------------------------------------------------------------
# invariance principle
# ---------------------------------------------------------------------------

def interpolated_trajectory(path, cone: Cone | None, vbar, t_grid) -> np.ndarray:
    """``g_n(t) = (G_n(t n) - t n vbar) / sqrt(n)`` on ``t_grid``.

    ``G_n`` interpolates linearly through the space-time points of the cone
    points (plus both end vertices); without a cone it runs through every
    vertex.
    """
    w = as_path(path).astype(float)
    n = len(w) - 1
    knots = [0, *find_cone_points(w, cone), n] if cone is not None else list(range(n + 1))
    knots = np.array(sorted(set(knots)))
    pts = w[knots]
    T = np.asarray(t_grid, float) * n
    out = np.empty((len(T), w.shape[1]))
    for a in range(w.shape[1]):
        out[:, a] = np.interp(T, knots, pts[:, a])
    return (out - T[:, None] * np.asarray(vbar, float)[None, :]) / math.sqrt(n)


@dataclass
class InvarianceReport:
    t_grid: np.ndarray
    cov: np.ndarray  # (len(t), len(t), d, d)
    target: np.ndarray
    rel_err_at_1: np.ndarray
    increment_corr: float
    g0_zero: bool


def invariance_diagnostic(paths, vbar, sigma, t_grid, cone: Cone | None = None,
                          trajectories: np.ndarray | None = None) -> InvarianceReport:
    """Empirical ``Cov(g_n(s), g_n(t))`` against ``min(s, t) sigma``.

    ``trajectories`` (samples, len(t_grid), d) may be passed to skip the
    interpolation.  ``increment_corr`` is the largest |correlation| between
    increments over the disjoint windows [0, 1/2] and [1/2, 1] (grid must
    contain 0.5 and 1 for it to be computed).
    """
    t_grid = np.asarray(t_grid, float)
    sigma = np.atleast_2d(np.asarray(sigma, float))
    if trajectories is None:
        trajectories = np.array([interpolated_trajectory(p, cone, vbar, t_grid) for p in paths])
    g = trajectories
    m, nt, d = g.shape
    gc = g - g.mean(axis=0, keepdims=True)
    cov = np.einsum("msa,mtb->stab", gc, gc) / (m - 1)
    target = np.minimum.outer(t_grid, t_grid)[:, :, None, None] * sigma[None, None]
    j1 = int(np.argmin(np.abs(t_grid - 1.0)))
    scale = np.sqrt(np.outer(np.diag(sigma), np.diag(sigma)))
    rel = np.abs(cov[j1, j1] - sigma) / scale
    corr = float("nan")
    if np.any(np.isclose(t_grid, 0.5)) and np.any(np.isclose(t_grid, 1.0)):
        jh = int(np.argmin(np.abs(t_grid - 0.5)))
        d1 = g[:, jh] - g[:, 0]
        d2 = g[:, j1] - g[:, jh]
        c = np.corrcoef(np.hstack([d1, d2]).T)[:d, d:]
        corr = float(np.nanmax(np.abs(c)))
    j0 = np.flatnonzero(t_grid == 0)
    g0 = bool(len(j0) == 0 or np.allclose(g[:, j0[0]], 0.0, atol=0))
    return InvarianceReport(t_grid, cov, target, rel, corr, g0)
