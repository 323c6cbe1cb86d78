"""Exact solvers for the one-dimensional discrete sausage.

With ``phi(l) = beta 1{l >= 1}`` a 1d path pays ``beta`` per site of its
range, and the range is the interval ``[-a, b]`` it spans.  The dynamic
program walks simple-random-walk probabilities over states ``(a, b, p)``
and only applies the ``beta`` cost at readout, so one pass gives the
endpoint tables of every length up to ``n``.

The two-colour variant ``phi_2(l) = beta 1{l >= 1} + beta 1{l >= 2}`` is
handled separately (see :func:`two_color_table`).
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numba import njit
from scipy.special import gammaln, logsumexp

from .enumeration import EnumerationCapExceeded

LOG2 = math.log(2.0)
DEFAULT_DP_CAP = 400


# ---------------------------------------------------------------------------
# range dynamic program
# ---------------------------------------------------------------------------

@njit(cache=True)
def _range_offsets(n, amax, bmax):
    off = np.full((n + 1, n + 1), -1, dtype=np.int64)
    tot = 0
    for a in range(min(n, amax) + 1):
        for b in range(min(n - a, bmax) + 1):
            off[a, b] = tot
            tot += (a + b) // 2 + 1
    return off, tot


@njit(cache=True)
def _range_dp(n, beta, amax, bmax):
    """``out[k, p + n] = log sum_{|gamma|=k, gamma(k)=p} e^{-beta |range|}``.

    Paths with ``a > amax`` or ``b > bmax`` are dropped.  Probabilities of
    the simple walk are propagated in the linear domain (the smallest
    nonzero value is ``2^-n``) and the ``2^k`` and ``beta`` factors are put
    back in logs when a layer is read out.
    """
    off, tot = _range_offsets(n, amax, bmax)
    cur = np.zeros(tot)
    nxt = np.zeros(tot)
    out = np.full((n + 1, 2 * n + 1), -np.inf)
    lin = np.zeros((n + 2, 2 * n + 1))
    cur[off[0, 0]] = 1.0
    for k in range(n + 1):
        # readout of layer k
        lin[:, :] = 0.0
        for a in range(min(k, amax) + 1):
            for b in range(min(k - a, bmax) + 1):
                w = a + b
                base = off[a, b]
                par = (k + a) & 1
                for j in range(par, w + 1, 2):
                    q = cur[base + (j >> 1)]
                    if q != 0.0:
                        lin[w, j - a + n] += q
        for p in range(-k, k + 1, 2):
            m = -np.inf
            for w in range(k + 1):
                v = lin[w, p + n]
                if v > 0.0:
                    t = math.log(v) - beta * (w + 1)
                    if t > m:
                        m = t
            if m == -np.inf:
                continue
            s = 0.0
            for w in range(k + 1):
                v = lin[w, p + n]
                if v > 0.0:
                    s += math.exp(math.log(v) - beta * (w + 1) - m)
            out[k, p + n] = m + math.log(s) + k * math.log(2.0)
        if k == n:
            break
        # propagate to layer k + 1
        for a in range(min(k + 1, amax) + 1):
            for b in range(min(k + 1 - a, bmax) + 1):
                base = off[a, b]
                for s_ in range((a + b) // 2 + 1):
                    nxt[base + s_] = 0.0
        for a in range(min(k, amax) + 1):
            for b in range(min(k - a, bmax) + 1):
                w = a + b
                base = off[a, b]
                par = (k + a) & 1
                for j in range(par, w + 1, 2):
                    q = cur[base + (j >> 1)]
                    if q == 0.0:
                        continue
                    h = 0.5 * q
                    if j + 1 <= w:
                        nxt[base + ((j + 1) >> 1)] += h
                    elif b + 1 <= bmax:
                        nxt[off[a, b + 1] + ((w + 1) >> 1)] += h
                    if j >= 1:
                        nxt[base + ((j - 1) >> 1)] += h
                    elif a + 1 <= amax:
                        nxt[off[a + 1, b]] += h
        cur, nxt = nxt, cur
    return out


@dataclass
class SausageTable:
    """Endpoint tables ``log Z_{k,x}`` (F = lam = 0) for ``k <= n``."""

    beta: float
    n: int
    log_Zkx: np.ndarray  # (n + 1, 2n + 1), column x + n
    amax: int | None = None
    bmax: int | None = None

    def xs(self) -> np.ndarray:
        return np.arange(-self.n, self.n + 1)

    def row(self, k: int) -> np.ndarray:
        return self.log_Zkx[k]

    def log_Z(self, k: int, F: float = 0.0, lam: float = 0.0) -> float:
        return float(logsumexp(self.log_Zkx[k] + F * self.xs()) - lam * k)

    def log_Z_fixed(self, k: int, x: int, lam: float = 0.0) -> float:
        if abs(x) > self.n:
            return -math.inf
        return float(self.log_Zkx[k, x + self.n] - lam * k)

    def endpoint_law(self, k: int, F: float = 0.0) -> np.ndarray:
        """Law of ``gamma(k)`` under the tilted measure, on ``xs()``."""
        lw = self.log_Zkx[k] + F * self.xs()
        return np.exp(lw - logsumexp(lw))

    def mean_displacement(self, k: int, F: float = 0.0) -> float:
        return float(self.endpoint_law(k, F) @ self.xs())

    def tail(self, k: int, F: float, threshold: float) -> float:
        """``P_k^F(D > threshold)``."""
        law = self.endpoint_law(k, F)
        return float(law[self.xs() > threshold].sum())


@lru_cache(maxsize=16)
def _cached_table(beta: float, n: int, amax: int, bmax: int) -> SausageTable:
    out = _range_dp(n, beta, amax, bmax)
    return SausageTable(beta, n, out, None if amax >= n else amax, None if bmax >= n else bmax)


def sausage_table(beta: float, n: int, cap: int | None = DEFAULT_DP_CAP,
                  amax: int | None = None, bmax: int | None = None) -> SausageTable:
    """Run the range DP up to ``n`` steps, optionally confined to ``[-amax, bmax]``."""
    if cap is not None and n > cap:
        raise EnumerationCapExceeded(f"n={n} exceeds the sausage DP cap {cap}")
    if n < 0:
        raise ValueError("n must be >= 0")
    a = n if amax is None else min(int(amax), n)
    b = n if bmax is None else min(int(bmax), n)
    if a < 0 or b < 0:
        raise ValueError("confinement bounds must be >= 0")
    return _cached_table(float(beta), int(n), a, b)


@dataclass
class SausageResult:
    beta: float
    n: int
    F: float
    lam: float
    log_Z: float
    xs: np.ndarray
    endpoint_law: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.endpoint_law @ self.xs)


def dp_partition(beta: float, n: int, F: float = 0.0, lam: float = 0.0,
                 cap: int | None = DEFAULT_DP_CAP) -> SausageResult:
    """Exact ``log Z_n^{F, lam}`` and law of ``gamma(n)`` for the 1d sausage."""
    t = sausage_table(beta, n, cap)
    return SausageResult(float(beta), int(n), float(F), float(lam), t.log_Z(n, F, lam), t.xs(),
                         t.endpoint_law(n, F))


# ---------------------------------------------------------------------------
# continuity probe
# ---------------------------------------------------------------------------

@dataclass
class TransitionTable:
    beta: float
    epsilon: float
    h: float
    rows: list  # (n, alpha, tail_prob, vbar)
    slopes: dict  # alpha -> fitted slope of log P vs n
    a1_proxy: dict  # alpha -> -slope / epsilon^2

    def vbar(self, alpha: float, n: int) -> float:
        for r in self.rows:
            if r[0] == n and math.isclose(r[1], alpha):
                return r[3]
        raise KeyError((alpha, n))

    def tail(self, alpha: float, n: int) -> float:
        for r in self.rows:
            if r[0] == n and math.isclose(r[1], alpha):
                return r[2]
        raise KeyError((alpha, n))


def transition_probe(beta: float, epsilon: float, alpha_list, n_list, h: float | None = None,
                     cap: int | None = DEFAULT_DP_CAP) -> TransitionTable:
    """Exact ``P_n^{alpha h}(D/n > epsilon)`` and ``vbar(n) = E[D]/n``.

    ``h`` defaults to ``beta``, the value of ``xi_{log 2}(1)`` for the 1d
    sausage.  The slope of ``log P`` against ``n`` is a least-squares fit
    over the points of ``n_list`` with positive probability.
    """
    h = float(beta) if h is None else float(h)
    n_list = sorted(int(n) for n in n_list)
    table = sausage_table(beta, n_list[-1], cap)
    rows, slopes, a1 = [], {}, {}
    for alpha in alpha_list:
        F = float(alpha) * h
        ns, lp = [], []
        for n in n_list:
            tp = table.tail(n, F, epsilon * n)
            vb = table.mean_displacement(n, F) / n
            rows.append((n, float(alpha), tp, vb))
            if tp > 0:
                ns.append(n)
                lp.append(math.log(tp))
        if len(ns) >= 2:
            slope = float(np.polyfit(ns, lp, 1)[0])
        else:
            slope = math.nan
        slopes[float(alpha)] = slope
        a1[float(alpha)] = -slope / epsilon ** 2
    return TransitionTable(float(beta), float(epsilon), h, rows, slopes, a1)


# ---------------------------------------------------------------------------
# checks of the inequality chain
# ---------------------------------------------------------------------------

def srw_log_prob(n: int, x: int) -> float:
    """``log P_SRW(X_n = x)``."""
    if abs(x) > n or (n + x) % 2:
        return -math.inf
    k = (n + x) // 2
    return float(gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1) - n * LOG2)


def ruin_probability(x: int) -> float:
    """``P_SRW(tau_{-1} > tau_x)`` from 0 by solving the harmonic system."""
    if x < 1:
        raise ValueError("x must be >= 1")
    # u(y) = (u(y-1) + u(y+1)) / 2 on 0..x-1 with u(-1) = 0, u(x) = 1
    A = np.zeros((x, x))
    rhs = np.zeros(x)
    for i in range(x):
        A[i, i] = 1.0
        if i - 1 >= 0:
            A[i, i - 1] = -0.5
        if i + 1 < x:
            A[i, i + 1] = -0.5
        else:
            rhs[i] = 0.5
    return float(np.linalg.solve(A, rhs)[0])


def _interval_green(L: int, R: int, u: int, v: int) -> float:
    """Green function of the simple walk on ``{L..R}`` killed on exit."""
    if R < L or not (L <= u <= R and L <= v <= R):
        return 0.0
    if u > v:
        u, v = v, u
    return 2.0 * (u - L + 1) * (R + 1 - v) / (R - L + 2)


@dataclass
class GreenBound:
    x: int
    log_G: float
    log_err: float  # log of an upper bound on the neglected mass

    @property
    def log_upper(self) -> float:
        return float(np.logaddexp(self.log_G, self.log_err))


def sausage_green(beta: float, x: int, extra: int | None = None) -> GreenBound:
    """``G_{log 2}(x)`` for the 1d sausage with a rigorous truncation bound.

    Paths are grouped by their range ``[L, R]``; the 2^-|gamma| mass of
    paths from 0 to x whose range is exactly ``[L, R]`` follows from the
    killed-walk Green functions by inclusion-exclusion.  Ranges wider than
    ``|x| + 1 + extra`` are dropped; their mass is at most
    ``sum_w w (w + 1) / 2 e^{-beta w}`` over the dropped widths ``w``.
    """
    if beta <= 0:
        raise ValueError("beta must be > 0 for a finite two-point function")
    x = int(x)
    lo, hi = min(0, x), max(0, x)
    w0 = hi - lo + 1
    if extra is None:
        extra = int(math.ceil(60.0 / beta)) + 20
    terms = []
    for width in range(w0, w0 + extra + 1):
        acc = 0.0
        for L in range(hi - width + 1, lo + 1):
            R = L + width - 1
            acc += (_interval_green(L, R, 0, x) - _interval_green(L + 1, R, 0, x)
                    - _interval_green(L, R - 1, 0, x) + _interval_green(L + 1, R - 1, 0, x))
        if acc > 0:
            terms.append(math.log(acc) - beta * width)
    # tail: at most `width` placements, each with Green function <= (width + 1) / 2
    ws = np.arange(w0 + extra + 1, w0 + extra + 2000)
    log_err = float(logsumexp(np.log(ws) + np.log(ws + 1.0) - LOG2 - beta * ws))
    return GreenBound(x, float(logsumexp(terms)), log_err)


@dataclass
class CheckLine:
    name: str
    log_lhs: float
    log_rhs: float
    direction: str  # "<=" or ">="

    @property
    def log_slack(self) -> float:
        return self.log_rhs - self.log_lhs if self.direction == "<=" else self.log_lhs - self.log_rhs

    @property
    def holds(self) -> bool:
        return self.log_slack >= 0

    @property
    def strict(self) -> bool:
        return self.log_slack > 0


@dataclass
class ProofReport:
    beta: float
    n: int
    x: int
    alpha: float
    checks: list = field(default_factory=list)
    paper_forms: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)

    def by_name(self, name: str) -> CheckLine:
        for c in self.checks + self.paper_forms:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def all_strict(self) -> bool:
        return all(c.strict for c in self.checks)


def proof_quantity_check(beta: float, n: int, x: int, alpha: float = 1.05) -> ProofReport:
    """Evaluate each inequality of the continuity argument exactly.

    ``checks`` holds the forms that are asserted (with the range cost
    ``x + 1`` for paths reaching ``x``); ``paper_forms`` keeps the versions
    with ``e^{-beta x}`` for the lower bound, which can fail.
    """
    beta, alpha = float(beta), float(alpha)
    rep = ProofReport(beta, int(n), int(x), alpha)
    tab = sausage_table(beta, n)
    lzx = tab.log_Z_fixed(n, x, LOG2)  # Z_{n,x}^{lambda_0} = E_SRW[e^-Phi, X_n = x]
    lp = srw_log_prob(n, x)
    rep.checks.append(CheckLine("range_bound", lzx, -beta * x + lp, "<="))
    rep.checks.append(CheckLine("range_bound_sharp", lzx, -beta * (x + 1) + lp, "<="))

    g = sausage_green(beta, x)
    rep.checks.append(CheckLine("subadditivity", g.log_upper, -beta * abs(x), "<="))
    ruin = ruin_probability(abs(x)) if x != 0 else 1.0
    rep.constants["ruin_probability"] = ruin
    rep.constants["ruin_identity_error"] = abs(ruin - 1.0 / (abs(x) + 1))
    rep.checks.append(CheckLine("ruin_bound", g.log_G, -beta * (abs(x) + 1) - math.log(abs(x) + 1), ">="))
    rep.paper_forms.append(CheckLine("ruin_bound_paper", g.log_G, -beta * abs(x) - math.log(abs(x) + 1), ">="))

    # denominator: confinement to 0 <= gamma(k) < M
    M = (n / beta) ** (1.0 / 3.0)
    width = int(math.ceil(M)) - 1  # sites 0..width satisfy gamma < M
    F = alpha * beta
    full = tab.log_Z(n, F)
    strip = sausage_table(beta, n, amax=0, bmax=width).log_Z(n, F)
    p_strip = sausage_table(0.0, n, amax=0, bmax=width).log_Z(n) - n * LOG2
    rep.checks.append(CheckLine("strip_restriction", full, strip, ">="))
    rep.checks.append(CheckLine("strip_lower", strip, -beta * M + n * LOG2 + p_strip, ">="))
    rep.constants.update(M=M, log_p_strip=p_strip, c_strip=-p_strip * M * M / n,
                         c3=-(full - n * LOG2) / (beta ** (2 / 3) * n ** (1 / 3)))
    return rep


# ---------------------------------------------------------------------------
# two-colour variant
# ---------------------------------------------------------------------------

def two_color_mask_table(beta: float, n: int) -> np.ndarray:
    """Reference DP for ``phi_2`` over ``(lo, hi, p, once-visited mask)``.

    Exact but the number of masks grows geometrically; meant for checks.
    Returns ``log Z_{k,x}`` with the layout of :class:`SausageTable`.
    """
    eb = math.exp(-beta)
    cur = {(0, 0, 0, 1): eb}
    out = np.full((n + 1, 2 * n + 1), -np.inf)
    for k in range(n + 1):
        acc = defaultdict(float)
        for (lo, hi, p, m), w in cur.items():
            acc[p] += w
        for p, w in acc.items():
            out[k, p + n] = math.log(w)
        if k == n:
            break
        nxt = defaultdict(float)
        for (lo, hi, p, m), w in cur.items():
            for q in (p - 1, p + 1):
                if q < lo:
                    nxt[(q, hi, q, (m << 1) | 1)] += w * eb
                elif q > hi:
                    nxt[(lo, q, q, m | (1 << (q - lo)))] += w * eb
                else:
                    bit = 1 << (q - lo)
                    if m & bit:
                        nxt[(lo, hi, q, m & ~bit)] += w * eb
                    else:
                        nxt[(lo, hi, q, m)] += w
        cur = nxt
    return out


# status of the current site
_REVISITED, _SINGLE, _MULTI = 0, 1, 2
_NONE = None


def two_color_table(beta: float, n: int, cap: int | None = 120) -> SausageTable:
    """Polynomial DP for ``phi_2`` by labelling sites at their first visit.

    Each new site is guessed to be visited once (S) or at least twice (M).
    An S site may never be re-entered, so the nearest S site on each side
    is a wall; an M site has to be re-entered, and since the walk moves by
    unit steps only the farthest pending M site on each side matters.  A
    path survives with exactly one labelling, the true one, and its weight
    is ``e^{-beta (|range| + #M)} = e^{-Phi_2}``.

    State ``(p, lo, lwall, hi, rwall, lpend, rpend, status)``; with a wall
    the corresponding end stores the wall site instead of the range end.
    """
    if cap is not None and n > cap:
        raise EnumerationCapExceeded(f"n={n} exceeds the two-colour DP cap {cap}")
    e1, e2 = math.exp(-beta), math.exp(-2 * beta)
    cur: dict = defaultdict(float)
    cur[(0, 0, False, 0, False, _NONE, _NONE, _SINGLE)] += e1
    cur[(0, 0, False, 0, False, _NONE, _NONE, _MULTI)] += e2
    out = np.full((n + 1, 2 * n + 1), -np.inf)
    for k in range(n + 1):
        acc = defaultdict(float)
        for (p, lo, lw, hi, rw, lp, rp, st), w in cur.items():
            if lp is None and rp is None and st != _MULTI:
                acc[p] += w
        for p, w in acc.items():
            if w > 0:
                out[k, p + n] = math.log(w)
        if k == n:
            break
        nxt: dict = defaultdict(float)
        for (p, lo, lw, hi, rw, lp, rp, st), w in cur.items():
            for step in (1, -1):
                q = p + step
                if step == 1:
                    if rw and q == hi:
                        continue
                    # the site we leave ends up below the walker
                    nlo, nlw, nlp = lo, lw, lp
                    if st == _SINGLE:
                        if lp is not None:
                            continue
                        nlo, nlw = p, True
                    elif st == _MULTI and lp is None:
                        nlp = p
                    if q > hi:
                        base = (q, nlo, nlw, q, False, nlp, _NONE)
                        nxt[base + (_SINGLE,)] += w * e1
                        nxt[base + (_MULTI,)] += w * e2
                    else:
                        nrp = None if rp == q else rp
                        nxt[(q, nlo, nlw, hi, rw, nlp, nrp, _REVISITED)] += w
                else:
                    if lw and q == lo:
                        continue
                    nhi, nrw, nrp = hi, rw, rp
                    if st == _SINGLE:
                        if rp is not None:
                            continue
                        nhi, nrw = p, True
                    elif st == _MULTI and rp is None:
                        nrp = p
                    if q < lo:
                        base = (q, q, False, nhi, nrw, _NONE, nrp)
                        nxt[base + (_SINGLE,)] += w * e1
                        nxt[base + (_MULTI,)] += w * e2
                    else:
                        nlp = None if lp == q else lp
                        nxt[(q, lo, lw, nhi, nrw, nlp, nrp, _REVISITED)] += w
        cur = nxt
    return SausageTable(float(beta), int(n), out)


@dataclass
class TwoColorReport:
    betas: list
    n: int
    x_list: list
    ballisticity: dict  # beta -> array of x / E_x[|gamma|] over x_list
    truncation_mass: dict  # beta -> largest fraction of G_x mass at the top 10% of lengths
    vbar: dict  # beta -> E[D]/n at the supplied tilt
    force: dict
    ordered: bool


def pinned_length_law(table: SausageTable, x: int) -> np.ndarray:
    """``P_x^{log 2}(|gamma| = k)`` for ``k <= table.n``, renormalised."""
    lw = table.log_Zkx[:, x + table.n] - LOG2 * np.arange(table.n + 1)
    if not np.isfinite(lw).any():
        return np.zeros(table.n + 1)
    return np.exp(lw - logsumexp(lw))


def two_color_probe(betas=(0.2, 4.0), n: int = 60, x_list=(4, 6, 8), force: dict | None = None) -> TwoColorReport:
    """Compare how ballistically pinned ``phi_2`` polymers reach ``x``.

    At ``lambda = log 2`` the law of ``|gamma|`` for paths ``0 -> x`` is read
    from the exact DP, truncated at ``n`` steps; the ratio ``x / E|gamma|``
    is 1 for a straight path and small for diffusive ones.  ``vbar`` is
    ``E[D]/n`` at the tilt ``force[beta]`` (default ``min(2 beta, beta + log 2)``,
    the cheaper of the diffusive and the ballistic strategy).
    """
    betas = [float(b) for b in betas]
    force = dict(force or {})
    ball, trunc, vbar, used = {}, {}, {}, {}
    for b in betas:
        t = two_color_table(b, n)
        ks = np.arange(n + 1)
        r, tm = [], 0.0
        for x in x_list:
            law = pinned_length_law(t, x)
            r.append(x / float(law @ ks))
            tm = max(tm, float(law[int(0.9 * n):].sum()))
        ball[b] = np.array(r)
        trunc[b] = tm
        F = force.get(b, min(2 * b, b + LOG2))
        used[b] = F
        vbar[b] = t.mean_displacement(n, F) / n
    order = sorted(betas)
    ok = all(np.all(ball[lo] <= ball[hi]) for lo, hi in zip(order, order[1:]))
    return TwoColorReport(betas, n, list(x_list), ball, trunc, vbar, used, bool(ok))
