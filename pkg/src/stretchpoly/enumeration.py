"""Exact enumeration of weighted lattice paths.

A single depth-first kernel walks every path from the origin up to a length
cap, carrying the interaction energy incrementally from the local-time
counts.  It accumulates ``log sum exp(-Phi)`` per (length, end-point), so one
pass serves canonical partition functions for every force, fixed end-point
sums and truncated two-point functions for every ``lambda``.

Restricted families (cube, half-space, cylinder, bridges) reuse the kernel
through box bounds, a stopping hyperplane and a bridge flag.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import logsumexp

from .lattice import Potential, classify_potential, unit_steps

INF = math.inf

DEFAULT_CAPS = {1: 30, 2: 14, 3: 10}


class EnumerationCapExceeded(ValueError):
    """Raised instead of starting an enumeration that is too large."""


def check_cap(n: int, d: int, cap: int | None = None) -> None:
    limit = DEFAULT_CAPS.get(d, 8) if cap is None else cap
    if n > limit:
        nodes = float(2 * d) ** n
        raise EnumerationCapExceeded(
            f"n={n} exceeds the enumeration cap {limit} for d={d}; "
            f"a full traversal visits up to {nodes:.3g} nodes"
        )


# ---------------------------------------------------------------------------
# kernel
# ---------------------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _dfs_kernel(n_max, d, inc, lo, hi, hit_target, bridge, first_step, acc_m, acc_s):
    """Depth-first traversal; fills the online log-sum-exp accumulators.

    ``acc_m[l, e]`` / ``acc_s[l, e]`` hold ``m`` and ``s`` with the running sum
    equal to ``exp(m) * s`` for length ``l`` and end-point index ``e``.
    """
    two_d = 2 * d
    side = 2 * n_max + 1
    dims = hi - lo + 1
    strides = np.ones(d, dtype=np.int64)
    for i in range(1, d):
        strides[i] = strides[i - 1] * dims[i - 1]
    size = strides[d - 1] * dims[d - 1]
    grid = np.zeros(size, dtype=np.int64)
    pos = np.zeros(d, dtype=np.int64)
    choice = np.zeros(n_max + 1, dtype=np.int64)
    energy = np.zeros(n_max + 1)
    runmax = np.zeros(n_max + 1, dtype=np.int64)

    g0 = 0
    for i in range(d):
        g0 += (pos[i] - lo[i]) * strides[i]
    grid[g0] = 1
    energy[0] = inc[0]
    if math.isinf(energy[0]):
        return
    ep0 = 0
    mul = 1
    for i in range(d):
        ep0 += (pos[i] + n_max) * mul
        mul *= side
    if hit_target < 0 and not bridge and first_step <= 0:
        w = -energy[0]
        acc_m[0, ep0] = w
        acc_s[0, ep0] = 1.0

    depth = 0
    choice[0] = 0 if first_step < 0 else first_step
    while True:
        c = choice[depth]
        limit = two_d
        if depth == 0 and first_step >= 0:
            limit = first_step + 1
        if depth == n_max or c >= limit:
            if depth == 0:
                break
            g = 0
            for i in range(d):
                g += (pos[i] - lo[i]) * strides[i]
            grid[g] -= 1
            prev = choice[depth - 1]
            ax = prev // 2
            pos[ax] -= 1 if prev % 2 == 0 else -1
            depth -= 1
            choice[depth] += 1
            continue
        ax = c // 2
        sgn = 1 if c % 2 == 0 else -1
        newc = pos[ax] + sgn
        if newc < lo[ax] or newc > hi[ax]:
            choice[depth] += 1
            continue
        if bridge and ((ax == 0 and newc <= 0) or (ax != 0 and pos[0] <= 0)):
            choice[depth] += 1
            continue
        pos[ax] = newc
        g = 0
        for i in range(d):
            g += (pos[i] - lo[i]) * strides[i]
        cnt = grid[g]
        de = inc[cnt]
        if math.isinf(de):
            pos[ax] -= sgn
            choice[depth] += 1
            continue
        grid[g] = cnt + 1
        depth += 1
        energy[depth] = energy[depth - 1] + de
        choice[depth] = 0
        rm = runmax[depth - 1]
        if depth == 1 or pos[0] > rm:
            rm = pos[0]
        runmax[depth] = rm
        record = True
        if hit_target >= 0:
            if pos[0] == hit_target:
                choice[depth] = two_d  # stopped on first hit
            else:
                record = False
        elif bridge:
            record = pos[0] == rm
        if record:
            ep = 0
            mul = 1
            for i in range(d):
                ep += (pos[i] + n_max) * mul
                mul *= side
            w = -energy[depth]
            m = acc_m[depth, ep]
            if w > m:
                acc_s[depth, ep] = acc_s[depth, ep] * math.exp(m - w) + 1.0
                acc_m[depth, ep] = w
            else:
                acc_s[depth, ep] += math.exp(w - m)


def _run_kernel(pot: Potential, d: int, n_max: int, lo=None, hi=None, hit_target=-1,
                bridge=False, workers: int = 1) -> np.ndarray:
    """Return ``log_acc[length, endpoint]`` (``-inf`` where empty)."""
    inc = pot.increments(n_max + 2)
    lo = np.full(d, -n_max, dtype=np.int64) if lo is None else np.maximum(np.asarray(lo, np.int64), -n_max)
    hi = np.full(d, n_max, dtype=np.int64) if hi is None else np.minimum(np.asarray(hi, np.int64), n_max)
    n_ep = (2 * n_max + 1) ** d

    def branch(first):
        m = np.full((n_max + 1, n_ep), -np.inf)
        s = np.zeros((n_max + 1, n_ep))
        _dfs_kernel(n_max, d, inc, lo, hi, int(hit_target), bool(bridge), int(first), m, s)
        with np.errstate(divide="ignore"):
            return m + np.log(s)

    if n_max == 0:
        return branch(-1)
    # one branch per first step, reduced in a fixed order for determinism
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        parts = list(pool.map(branch, range(2 * d)))
    out = parts[0]
    for part in parts[1:]:
        out = np.logaddexp(out, part)
    return out


def endpoint_coords(n_max: int, d: int) -> np.ndarray:
    side = 2 * n_max + 1
    idx = np.arange(side ** d)
    coords = np.empty((side ** d, d), dtype=np.int64)
    for i in range(d):
        coords[:, i] = idx % side - n_max
        idx = idx // side
    return coords


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PartitionResult:
    value: float  # log-domain
    n: int | None
    force: tuple[float, ...]
    restriction: str = "none"
    endpoint: tuple[int, ...] | None = None
    lam: float = 0.0


@dataclass
class EnumerationTable:
    """Per-(length, end-point) log sums of ``exp(-Phi)`` for lengths <= n_max."""

    pot: Potential
    d: int
    n_max: int
    log_acc: np.ndarray
    restriction: str = "none"
    coords: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.coords = endpoint_coords(self.n_max, self.d)

    def index(self, x) -> int:
        x = np.atleast_1d(np.asarray(x, dtype=np.int64))
        if x.shape != (self.d,) or np.any(np.abs(x) > self.n_max):
            return -1
        side = 2 * self.n_max + 1
        return int(sum((int(x[i]) + self.n_max) * side ** i for i in range(self.d)))

    def log_Z(self, n: int, force=None, lam: float = 0.0) -> float:
        row = self.log_acc[n]
        if force is not None:
            row = row + self.coords @ np.asarray(force, float).reshape(self.d)
        return float(logsumexp(row)) - lam * n

    def log_Z_fixed(self, n: int, x, lam: float = 0.0, force=None) -> float:
        j = self.index(x)
        if j < 0:
            return -INF
        val = self.log_acc[n, j]
        if force is not None and not math.isinf(val):
            val += float(np.dot(np.asarray(force, float).reshape(self.d), np.atleast_1d(x)))
        return float(val) - lam * n

    def log_G(self, x, lam: float, cap: int | None = None) -> float:
        j = self.index(x)
        if j < 0:
            return -INF
        cap = self.n_max if cap is None else min(cap, self.n_max)
        col = self.log_acc[: cap + 1, j] - lam * np.arange(cap + 1)
        return float(logsumexp(col))

    def log_G_all(self, lam: float, cap: int | None = None) -> np.ndarray:
        cap = self.n_max if cap is None else min(cap, self.n_max)
        return logsumexp(self.log_acc[: cap + 1] - lam * np.arange(cap + 1)[:, None], axis=0)

    def endpoint_law(self, n: int, force=None) -> dict[tuple[int, ...], float]:
        row = self.log_acc[n]
        if force is not None:
            row = row + self.coords @ np.asarray(force, float).reshape(self.d)
        logz = logsumexp(row)
        out = {}
        for j in np.flatnonzero(np.isfinite(row)):
            out[tuple(int(v) for v in self.coords[j])] = float(np.exp(row[j] - logz))
        return out

    def log_Z_series(self, force=None, lam: float = 0.0) -> np.ndarray:
        return np.array([self.log_Z(n, force, lam) for n in range(self.n_max + 1)])


_TABLE_CACHE: dict = {}


def enumeration_table(pot: Potential, d: int, n_max: int, cap: int | None = None,
                      workers: int = 1) -> EnumerationTable:
    """Unrestricted table, cached per (potential, d, n_max)."""
    check_cap(n_max, d, cap)
    key = (pot, d, n_max)
    tab = _TABLE_CACHE.get(key)
    if tab is None:
        tab = EnumerationTable(pot, d, n_max, _run_kernel(pot, d, n_max, workers=workers))
        _TABLE_CACHE[key] = tab
    return tab


def _force_tuple(force, d):
    if force is None:
        return (0.0,) * d
    return tuple(float(v) for v in np.asarray(force, float).reshape(d))


def enumerate_Z(pot: Potential, n: int, force=None, d: int | None = None, cap: int | None = None,
                lam: float = 0.0) -> PartitionResult:
    """``log Z_n^F`` summed over all length-n paths from the origin."""
    d = len(np.atleast_1d(force)) if d is None else d
    tab = enumeration_table(pot, d, n, cap)
    return PartitionResult(tab.log_Z(n, force, lam), n, _force_tuple(force, d), lam=lam)


def enumerate_Z_fixed_endpoint(pot: Potential, n: int, x, lam: float = 0.0, force=None,
                               cap: int | None = None) -> PartitionResult:
    x = tuple(int(v) for v in np.atleast_1d(x))
    d = len(x)
    restriction = "fixed-endpoint"
    if sum(abs(v) for v in x) > n or (n - sum(abs(v) for v in x)) % 2:
        return PartitionResult(-INF, n, _force_tuple(force, d), restriction, x, lam)
    tab = enumeration_table(pot, d, n, cap)
    return PartitionResult(tab.log_Z_fixed(n, x, lam, force), n, _force_tuple(force, d), restriction, x, lam)


# ---------------------------------------------------------------------------
# free energy
# ---------------------------------------------------------------------------

def concatenation_inequalities(pot: Potential, ell_max: int = 32) -> tuple[bool, bool]:
    """Which concatenation bounds hold for splitting a path at a vertex.

    Returns ``(sub, super)`` where ``sub`` means
    ``Z_{n+m} <= exp(phi(1)) Z_n Z_m`` and ``super`` the reversed inequality.
    Both need the site-wise inequality and its junction variant
    ``phi(a+b-1) + phi(1)`` versus ``phi(a) + phi(b)``.
    """
    ph = pot.phi_array(2 * ell_max)
    p1 = ph[1]
    sub = sup = True
    for a in range(1, ell_max + 1):
        for b in range(1, ell_max + 1):
            for lhs, rhs in ((ph[a + b], ph[a] + ph[b]), (ph[a + b - 1] + p1, ph[a] + ph[b])):
                if math.isinf(lhs) and math.isinf(rhs):
                    continue
                tol = 1e-12 * max(1.0, abs(rhs)) if not math.isinf(rhs) else 0.0
                if lhs < rhs - tol:
                    sub = False
                if lhs > rhs + tol:
                    sup = False
    return sub, sup


@dataclass(frozen=True)
class FreeEnergyBracket:
    lower: float
    upper: float
    n_used: int
    classification: str
    heuristic: bool = False
    sub_valid: bool = False
    super_valid: bool = False
    shifted: tuple[float, ...] = ()  # (log Z_n + phi(1)) / n
    bridge_shifted: tuple[float, ...] = ()
    lower_source: str = ""
    upper_source: str = ""

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float, tol: float = 1e-12) -> bool:
        return self.lower - tol <= value <= self.upper + tol


def bridge_table(pot: Potential, d: int, n_max: int, cap: int | None = None) -> EnumerationTable:
    check_cap(n_max, d, cap)
    key = (pot, d, n_max, "bridge")
    tab = _TABLE_CACHE.get(key)
    if tab is None:
        tab = EnumerationTable(pot, d, n_max, _run_kernel(pot, d, n_max, bridge=True), "bridge")
        _TABLE_CACHE[key] = tab
    return tab


def free_energy_bracket(pot: Potential, n_max: int, d: int, cap: int | None = None) -> FreeEnergyBracket:
    """Rigorous bracket for ``lambda_0`` from finite-n data.

    Bounds used, each only where licensed:
      * ``log(2d)`` from above (phi >= 0);
      * ``min_n (log Z_n + phi(1)) / n`` from above when splitting is
        submultiplicative with constant ``exp(phi(1))`` (Fekete);
      * ``max_n (log Z_n + phi(1)) / n`` from below in the supermultiplicative case;
      * ``max_n (log B_n + phi(1)) / n`` from below for bridges ``B_n``,
        which concatenate with exactly that constant for every potential;
      * for finite phi that is eventually linear with slope ``rho``:
        ``log(2d) - rho`` from below, because paths kept inside a box B pay at
        most ``rho (n + 1) + |B| sup(phi(l) - rho l)`` and the box growth
        rate ``log(2 sum_i cos(pi / (2K + 2)))`` tends to ``log(2d)``; and
        ``log(2d) - rho`` from above when ``phi(l) >= rho l`` for all l.
    """
    cls = classify_potential(pot, 64)
    sub, sup = concatenation_inequalities(pot)
    tab = enumeration_table(pot, d, n_max, cap)
    p1 = pot.phi1
    shifted = np.array([(tab.log_Z(n) + p1) / n for n in range(1, n_max + 1)])
    btab = bridge_table(pot, d, n_max, cap)
    bshift = np.array([(btab.log_Z(n) + p1) / n for n in range(1, n_max + 1)])
    upper, usrc = math.log(2 * d), "entropy"
    lower, lsrc = float(np.max(bshift)), "bridges"
    if sub and float(np.min(shifted)) < upper:
        upper, usrc = float(np.min(shifted)), "fekete"
    if sup and float(np.max(shifted)) > lower:
        lower, lsrc = float(np.max(shifted)), "fekete"
    lin = eventual_slope(pot)
    if lin is not None:
        rho, dominated = lin
        if math.log(2 * d) - rho > lower:
            lower, lsrc = math.log(2 * d) - rho, "confinement"
        if dominated and math.log(2 * d) - rho < upper:
            upper, usrc = math.log(2 * d) - rho, "linear"
    if upper < lower <= upper + 1e-12:  # rounding in the shifted sequence
        lower = upper
    return FreeEnergyBracket(lower, upper, n_max, cls, heuristic=(cls == "neither"),
                             sub_valid=sub, super_valid=sup,
                             shifted=tuple(shifted), bridge_shifted=tuple(bshift),
                             lower_source=lsrc, upper_source=usrc)


def eventual_slope(pot: Potential):
    """``(rho, phi >= rho l everywhere)`` for finite, eventually linear phi, else None."""
    r = pot.dependence_range()
    if r is None:
        return None
    ph = pot.phi_array(r + 2)
    if not np.all(np.isfinite(ph)):
        return None
    rho = float(ph[r + 1] - ph[r])
    dominated = bool(np.all(ph - rho * np.arange(r + 3) >= -1e-15))
    return rho, dominated


def box_growth_rate(K: int, d: int) -> float:
    """Log Perron root of the nearest-neighbour adjacency of ``[-K, K]^d``."""
    return math.log(2 * d * math.cos(math.pi / (2 * K + 2)))


def _log_tail_bound(pot: Potential, d: int, lam: float, cap: int, n_max: int,
                    tab: EnumerationTable, sub: bool) -> float:
    """log of an upper bound on ``sum_{n > cap} Z_n exp(-lam n)``."""
    p1 = pot.phi1
    best = -INF
    # trivial bound Z_n <= (2d)^n exp(-phi(1))
    rho = math.log(2 * d) - lam
    if rho < 0:
        best = -p1 + (cap + 1) * rho - math.log1p(-math.exp(rho))
    else:
        best = INF
    if sub:
        a = np.array([tab.log_Z(k) + p1 for k in range(n_max + 1)])
        for m in range(1, n_max + 1):
            lr = a[m] - lam * m
            if lr >= 0:
                continue
            terms = []
            for r in range(m):
                q0 = max(0, (cap - r) // m + 1)
                while q0 * m + r <= cap:
                    q0 += 1
                # sum_{q >= q0} exp(a_r - lam r + q lr) * exp(-phi1)
                terms.append(-p1 + a[r] - lam * r + q0 * lr - math.log1p(-math.exp(lr)))
            best = min(best, float(logsumexp(terms)))
    return best


@dataclass
class TwoPointTable:
    lam: float
    entries: dict
    ell_cap: int
    tail_bound: float  # log-domain; +inf when uncontrolled
    controlled: bool


def two_point_function(pot: Potential, lam: float, x, ell_cap: int, d: int | None = None,
                       cap: int | None = None) -> TwoPointTable:
    """Truncated ``G_lam(x)`` over paths of length <= ell_cap, with a tail bound."""
    xs = [tuple(int(v) for v in np.atleast_1d(p)) for p in (x if isinstance(x, list) else [x])]
    d = len(xs[0]) if d is None else d
    tab = enumeration_table(pot, d, ell_cap, cap)
    bracket = free_energy_bracket(pot, ell_cap, d, cap)
    controlled = lam > bracket.upper
    tail = _log_tail_bound(pot, d, lam, ell_cap, ell_cap, tab, bracket.sub_valid) if controlled else INF
    if math.isinf(tail) and tail > 0:
        controlled = False
    entries = {p: tab.log_G(p, lam, ell_cap) for p in xs}
    return TwoPointTable(lam, entries, ell_cap, tail, controlled)


def critical_mass_probe(pot: Potential, lam: float, ell_cap: int, d: int) -> np.ndarray:
    """Partial sums ``sum_{n <= N} Z_n exp(-lam n)`` for N = 0..ell_cap."""
    tab = enumeration_table(pot, d, ell_cap)
    terms = np.exp(tab.log_Z_series() - lam * np.arange(ell_cap + 1))
    return np.cumsum(terms)


def critical_mass_terms(pot: Potential, lam: float, ell_cap: int, d: int) -> np.ndarray:
    """Terms ``Z_n exp(-lam n)`` for n = 0..ell_cap.

    Accumulated in the linear domain from the kernel's (max, multiplier)
    pairs with ``q = exp(-lam)`` raised to integer powers, so integer path
    counts times powers of two come out exact.
    """
    check_cap(ell_cap, d)
    inc = pot.increments(ell_cap + 2)
    lo = np.full(d, -ell_cap, dtype=np.int64)
    hi = np.full(d, ell_cap, dtype=np.int64)
    n_ep = (2 * ell_cap + 1) ** d
    lin = np.zeros(ell_cap + 1)
    for first in (range(2 * d) if ell_cap > 0 else [-1]):
        m = np.full((ell_cap + 1, n_ep), -np.inf)
        s = np.zeros((ell_cap + 1, n_ep))
        _dfs_kernel(ell_cap, d, inc, lo, hi, -1, False, int(first), m, s)
        lin += np.where(s > 0, np.exp(np.where(s > 0, m, 0.0)) * s, 0.0).sum(axis=1)
    q = math.exp(-lam)
    return lin * np.array([q ** k for k in range(ell_cap + 1)])


# ---------------------------------------------------------------------------
# confined families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConfinedSum:
    value: float  # log-domain, +inf when divergent
    method: str  # "transfer" or "enumeration"
    n_states: int = 0
    spectral_radius: float | None = None
    truncated: bool = False
    tail_bound: float = -INF


def _state_space(pot: Potential, lam: float, sites: list[tuple], r: int, max_states: int):
    """Markov-chain states ``(position, capped local times)`` reachable from 0."""
    index = {s: i for i, s in enumerate(sites)}
    d = len(sites[0])
    steps = [tuple(v) for v in unit_steps(d)]
    nbrs = []
    for s in sites:
        row = []
        for e in steps:
            t = tuple(a + b for a, b in zip(s, e))
            if t in index:
                row.append(index[t])
        nbrs.append(row)
    inc = pot.increments(r + 2)
    origin = index[(0,) * d]
    counts0 = [0] * len(sites)
    counts0[origin] = min(1, r)
    start = (origin, bytes(counts0))
    states = {start: 0}
    order = [start]
    rows, cols, vals = [], [], []
    head = 0
    while head < len(order):
        p, cnt = order[head]
        src = head
        head += 1
        for q in nbrs[p]:
            c = cnt[q] if r > 0 else 0
            de = inc[min(c, r)]
            if math.isinf(de):
                continue
            if r > 0:
                lst = bytearray(cnt)
                lst[q] = min(c + 1, r)
                key = (q, bytes(lst))
            else:
                key = (q, cnt)
            j = states.get(key)
            if j is None:
                if len(order) >= max_states:
                    return None
                j = len(order)
                states[key] = j
                order.append(key)
            rows.append(j)
            cols.append(src)
            vals.append(math.exp(-lam - de))
    n = len(order)
    T = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return T, n


def _spectral_radius(T: sp.spmatrix) -> float:
    n = T.shape[0]
    if T.nnz == 0:
        return 0.0
    if n <= 1500:
        return float(np.max(np.abs(np.linalg.eigvals(T.toarray()))))
    try:
        val = spla.eigs(T, k=1, which="LM", return_eigenvectors=False, tol=1e-10, maxiter=20000)
        return float(np.abs(val[0]))
    except spla.ArpackNoConvergence:
        # power iteration fallback on a non-negative matrix
        v = np.ones(n)
        rho = 0.0
        for _ in range(5000):
            w = T @ v
            nrm = np.linalg.norm(w)
            if nrm == 0:
                return 0.0
            rho, v = nrm / np.linalg.norm(v), w / nrm
        return float(rho)


def transfer_sum(pot: Potential, lam: float, sites: list[tuple], max_states: int = 200_000):
    """Sum of ``W_lam`` over all paths from 0 confined to ``sites``.

    Returns ``(log_sum, n_states, spectral_radius)`` or None if the capped
    local-time state space is too large or phi lacks a finite dependence range.
    """
    r = pot.dependence_range()
    if r is None:
        return None
    built = _state_space(pot, lam, sites, r, max_states)
    if built is None:
        return None
    T, n = built
    rho = _spectral_radius(T)
    if rho >= 1.0:
        return INF, n, rho
    b = np.zeros(n)
    b[0] = math.exp(-pot.phi1)
    z = spla.spsolve((sp.identity(n, format="csc") - T).tocsc(), b)
    return math.log(float(np.sum(z))), n, rho


def cube_sites(K: int, d: int) -> list[tuple]:
    axes = [range(-K, K + 1)] * d
    return [tuple(int(v) for v in p) for p in np.array(np.meshgrid(*axes, indexing="ij")).reshape(d, -1).T]


def cube_confined_sum(pot: Potential, lam: float, K: int, d: int, ell_cap: int | None = None,
                      max_states: int = 200_000) -> ConfinedSum:
    """``sum`` of ``W_lam`` over paths from 0 that stay in ``[-K, K]^d``."""
    res = transfer_sum(pot, lam, cube_sites(K, d), max_states)
    if res is not None:
        val, n, rho = res
        return ConfinedSum(val, "transfer", n, rho)
    cap = ell_cap if ell_cap is not None else DEFAULT_CAPS.get(d, 8)
    check_cap(cap, d, cap)
    acc = _run_kernel(pot, d, cap, lo=np.full(d, -K), hi=np.full(d, K))
    logs = logsumexp(acc - lam * np.arange(cap + 1)[:, None])
    tab = enumeration_table(pot, d, cap)
    sub, _ = concatenation_inequalities(pot)
    tail = _log_tail_bound(pot, d, lam, cap, cap, tab, sub)
    return ConfinedSum(float(logs), "enumeration", truncated=True, tail_bound=tail)


@dataclass
class HalfSpaceSums:
    K: int
    lam: float
    ell_cap: int
    log_halfspace: float
    log_cylinder: float
    cylinder_by_length: np.ndarray  # log weight per path length
    halfspace_by_length: np.ndarray


def halfspace_and_cylinder_sums(pot: Potential, lam: float, K: int, ell_cap: int, d: int) -> HalfSpaceSums:
    """Capped sums over half-space paths and cylindrical paths reaching x1 = K."""
    if K < 1:
        raise ValueError("K must be positive")
    check_cap(ell_cap, d, max(ell_cap, DEFAULT_CAPS.get(d, 8)))
    lo_h = np.full(d, -ell_cap)
    hi = np.full(d, ell_cap)
    hi[0] = K
    half = _run_kernel(pot, d, ell_cap, lo=lo_h, hi=hi, hit_target=K)
    lo_c = lo_h.copy()
    lo_c[0] = 0
    cyl = _run_kernel(pot, d, ell_cap, lo=lo_c, hi=hi, hit_target=K)
    shift = lam * np.arange(ell_cap + 1)
    half_n = logsumexp(half, axis=1) - shift
    cyl_n = logsumexp(cyl, axis=1) - shift
    return HalfSpaceSums(K, lam, ell_cap, float(logsumexp(half_n)), float(logsumexp(cyl_n)), cyl_n, half_n)


def supermultiplicativity_report(pot: Potential, lam: float, K_max: int, ell_cap: int, d: int) -> list[dict]:
    """Check ``C(K+L) >= exp(-phi(1)) C(K) C(L)`` on the capped range.

    The right side only keeps pairs whose total length fits under the cap,
    so the comparison is between sums over matching path families.
    """
    sums = {K: halfspace_and_cylinder_sums(pot, lam, K, ell_cap, d) for K in range(1, K_max + 1)}
    p1 = pot.phi1
    out = []
    for K in range(1, K_max + 1):
        for L in range(1, K_max - K + 1):
            cK, cL = sums[K].cylinder_by_length, sums[L].cylinder_by_length
            conv = np.full(ell_cap + 1, -INF)
            for n1 in range(ell_cap + 1):
                if not np.isfinite(cK[n1]):
                    continue
                for n2 in range(ell_cap + 1 - n1):
                    conv[n1 + n2] = np.logaddexp(conv[n1 + n2], cK[n1] + cL[n2])
            rhs = -p1 + float(logsumexp(conv))
            lhs = sums[K + L].log_cylinder
            out.append({"K": K, "L": L, "log_lhs": lhs, "log_rhs": rhs, "slack": lhs - rhs})
    return out


# ---------------------------------------------------------------------------
# one-dimensional range states
# ---------------------------------------------------------------------------

@dataclass
class IntervalGreen:
    """``G_lam(x)`` on ``x in [-m_left, m_right]`` from the (range, position) chain."""

    lam: float
    m_left: int
    m_right: int
    log_G: np.ndarray  # index x + m_left
    n_states: int

    def __call__(self, x: int) -> float:
        return float(self.log_G[int(x) + self.m_left])


def interval_two_point(pot: Potential, lam: float, m_left: int, m_right: int) -> IntervalGreen:
    """Two-point function in d=1 for potentials with dependence range <= 1.

    A 1d path's visited set is the interval ``[a, b]`` it spans and, for
    such potentials, the weight only depends on whether a step enters a new
    site.  States ``(a, b, p)`` with ``-m_left <= a <= 0 <= b <= m_right``;
    paths leaving the window are dropped, so the result is a lower bound
    converging as the window grows.
    """
    r = pot.dependence_range()
    if r is None or r > 1:
        raise ValueError("interval states need a dependence range <= 1")
    inc = pot.increments(3)
    fresh = math.exp(-lam - inc[0]) if math.isfinite(inc[0]) else 0.0
    again = math.exp(-lam - inc[1]) if math.isfinite(inc[1]) else 0.0
    A = np.arange(-m_left, 1)
    B = np.arange(0, m_right + 1)
    # enumerate states (a, b, p), index = offset[a, b] + (p - a)
    widths = (B[None, :] - A[:, None] + 1).ravel()
    offsets = np.concatenate([[0], np.cumsum(widths)[:-1]]).reshape(len(A), len(B))
    n = int(widths.sum())

    def idx(a, b, p):
        return offsets[a + m_left, b] + (p - a)

    rows, cols, vals = [], [], []
    for ia, a in enumerate(A):
        for b in B:
            ps = np.arange(a, b + 1)
            src = idx(a, b, ps)
            if again > 0 and b > a:
                inner = ps[ps < b]  # step right, revisit
                rows.append(idx(a, b, inner + 1)); cols.append(idx(a, b, inner)); vals.append(np.full(len(inner), again))
                inner = ps[ps > a]
                rows.append(idx(a, b, inner - 1)); cols.append(idx(a, b, inner)); vals.append(np.full(len(inner), again))
            if fresh > 0:
                if b + 1 <= m_right:
                    rows.append([idx(a, b + 1, b + 1)]); cols.append([idx(a, b, b)]); vals.append([fresh])
                if a - 1 >= -m_left:
                    rows.append([idx(a - 1, b, a - 1)]); cols.append([idx(a, b, a)]); vals.append([fresh])
            del src
    rows = np.concatenate([np.asarray(v, np.int64) for v in rows]) if rows else np.zeros(0, np.int64)
    cols = np.concatenate([np.asarray(v, np.int64) for v in cols]) if cols else np.zeros(0, np.int64)
    vals = np.concatenate([np.asarray(v, float) for v in vals]) if vals else np.zeros(0)
    T = sp.csc_matrix((vals, (rows, cols)), shape=(n, n))
    rhs = np.zeros(n)
    rhs[idx(0, 0, 0)] = math.exp(-pot.phi1)
    z = spla.spsolve((sp.identity(n, format="csc") - T).tocsc(), rhs)
    G = np.zeros(m_left + m_right + 1)
    for ia, a in enumerate(A):
        for b in B:
            ps = np.arange(a, b + 1)
            np.add.at(G, ps + m_left, z[idx(a, b, ps)])
    with np.errstate(divide="ignore"):
        return IntervalGreen(lam, m_left, m_right, np.log(np.maximum(G, 0.0)), n)
