"""Inverse correlation length, Wulff shapes and the conjugate map.

``xi_lam(x)`` is read off the decay of the two-point function along rays
``[k x]``.  The polar norm ``xi*_lam(F) = max <F, x> / xi_lam(x)`` gives the
Wulff shape as its unit ball, and ``mu(F)`` is the ``lam`` for which F sits
on the boundary of ``K_lam``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq, minimize, minimize_scalar

from . import enumeration as E
from .lattice import Potential

# ---------------------------------------------------------------------------
# free walk closed forms
# ---------------------------------------------------------------------------


def free_walk_mu(F) -> float:
    """``log sum_i 2 cosh F_i``: the lam whose Wulff shape has F on its boundary."""
    F = np.atleast_1d(np.asarray(F, float))
    return float(np.log(np.sum(2 * np.cosh(F))))


def first_passage_root(s: float) -> float:
    """``f(s) = (1 - sqrt(1 - 4 s^2)) / (2 s)``, the 1d first-passage generating function."""
    if not 0 < s <= 0.5:
        raise ValueError("need 0 < s <= 1/2")
    return (1 - math.sqrt(1 - 4 * s * s)) / (2 * s)


def killed_walk_xi_1d(lam: float) -> float:
    return -math.log(first_passage_root(math.exp(-lam)))


def free_walk_xi(lam: float, x) -> float:
    """Exact ``xi_lam(x) = sup{<F, x> : sum 2 cosh F_i <= e^lam}`` for the simple walk."""
    x = np.atleast_1d(np.asarray(x, float))
    d = len(x)
    if lam <= math.log(2 * d):
        raise ValueError("need lam > log(2d)")
    if not np.any(x):
        return 0.0
    target = math.exp(lam)

    def g(log_nu):
        nu = math.exp(log_nu)
        return float(np.sum(2 * np.sqrt(1 + (x / (2 * nu)) ** 2))) - target

    hi = 0.0
    while g(hi) > 0:
        hi += 5.0
    lo = hi - 5.0
    while g(lo) < 0:
        lo -= 5.0
    nu = math.exp(brentq(g, lo, hi, xtol=1e-15, rtol=1e-15))
    return float(np.sum(x * np.arcsinh(x / (2 * nu))))


def free_walk_polar(lam: float, F) -> float:
    """Gauge of ``K_lam = {sum 2 cosh F_i <= e^lam}`` at F."""
    F = np.atleast_1d(np.asarray(F, float))
    d = len(F)
    if lam <= math.log(2 * d):
        raise ValueError("need lam > log(2d)")
    if not np.any(F):
        return 0.0
    target = math.exp(lam)

    def g(log_t):
        return float(np.sum(2 * np.cosh(F / math.exp(log_t)))) - target

    lo, hi = -1.0, 1.0
    while g(lo) < 0:
        lo -= 2.0
    while g(hi) > 0:
        hi += 2.0
    return math.exp(brentq(g, lo, hi, xtol=1e-15, rtol=1e-15))


# ---------------------------------------------------------------------------
# estimating xi
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class XiEstimate:
    direction: tuple[float, ...]
    slope: float
    intercept: float
    stderr: float
    k_range: tuple[int, int]
    method: str
    flagged: bool = False
    controlled: bool = True

    @property
    def xi(self) -> float:
        return self.slope


def _lattice_point(u, k):
    return tuple(int(v) for v in np.trunc(k * np.asarray(u, float) + 1e-12 * np.sign(u)))


def _ray_log_G(pot: Potential, lam: float, u, ks, d, cap, method):
    if method == "free":
        s = math.exp(-lam)
        if d == 1:
            f = first_passage_root(s)
            return np.array([abs(_lattice_point(u, k)[0]) * math.log(f) - 0.5 * math.log(1 - 4 * s * s)
                             for k in ks]), True
        method = "enumeration"
    if method == "interval":
        kmax = max(ks)
        m = kmax + 40
        g = E.interval_two_point(pot, lam, m, m)
        return np.array([g(_lattice_point(u, k)[0]) for k in ks]), True
    cap = cap if cap is not None else E.DEFAULT_CAPS.get(d, 8)
    tab = E.enumeration_table(pot, d, cap)
    bracket = E.free_energy_bracket(pot, cap, d)
    controlled = bool(lam > bracket.upper)
    return np.array([tab.log_G(_lattice_point(u, k), lam, cap) for k in ks]), controlled


def default_method(pot: Potential, d: int) -> str:
    if pot.kind == "free" and d == 1:
        return "free"
    r = pot.dependence_range()
    if d == 1 and r is not None and r <= 1:
        return "interval"
    return "enumeration"


def estimate_xi(pot: Potential, lam: float, direction, k_max: int, k_min: int = 4,
                cap: int | None = None, method: str | None = None) -> XiEstimate:
    """Least-squares slope of ``-log G_lam([k u])`` over ``k_min <= k <= k_max``.

    ``direction`` is normalised to the Euclidean unit sphere.  With the
    enumeration method the sum over paths is truncated at ``cap`` and rays
    are cut where ``[k u]`` leaves the reachable ball.
    """
    u = np.atleast_1d(np.asarray(direction, float))
    d = len(u)
    u = u / np.linalg.norm(u)
    method = method or default_method(pot, d)
    if method == "enumeration":
        cap_ = cap if cap is not None else E.DEFAULT_CAPS.get(d, 8)
        k_max = min(k_max, int(cap_ / max(np.abs(u).sum(), 1e-12)))
    ks = np.arange(min(k_min, k_max - 1), k_max + 1)
    ks = ks[ks >= 1]
    if len(ks) < 2:
        raise ValueError("need at least two points along the ray")
    logG, controlled = _ray_log_G(pot, lam, u, ks, d, cap, method)
    ok = np.isfinite(logG)
    ks, y = ks[ok], -logG[ok]
    if len(ks) < 2:
        raise ValueError("two-point function vanishes along the ray")
    A = np.vstack([ks, np.ones_like(ks)]).T.astype(float)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    if len(ks) > 2:
        resid = y - A @ coef
        s2 = float(resid @ resid) / (len(ks) - 2)
        stderr = math.sqrt(s2 / float(np.sum((ks - ks.mean()) ** 2)))
    else:
        stderr = 0.0
    flagged = (stderr > abs(slope)) or not controlled
    return XiEstimate(tuple(float(v) for v in u), slope, intercept, stderr,
                      (int(ks[0]), int(ks[-1])), method, flagged, controlled)


@dataclass
class CorrelationLength:
    lam: float
    directions: np.ndarray
    entries: list

    @property
    def xi(self) -> np.ndarray:
        return np.array([e.slope for e in self.entries])

    @property
    def stderr(self) -> np.ndarray:
        return np.array([e.stderr for e in self.entries])


def correlation_length(pot: Potential, lam: float, d: int, k_max: int, directions=None,
                       **kw) -> CorrelationLength:
    dirs = direction_grid(d) if directions is None else np.atleast_2d(np.asarray(directions, float))
    entries = [estimate_xi(pot, lam, u, k_max, **kw) for u in dirs]
    return CorrelationLength(lam, dirs, entries)


# ---------------------------------------------------------------------------
# Wulff shape
# ---------------------------------------------------------------------------

def direction_grid(d: int, n: int | None = None) -> np.ndarray:
    """Deterministic unit directions: +-1 in d=1, equally spaced angles in d=2,
    a Fibonacci sphere in d=3 and fixed-seed Gaussian directions beyond."""
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        n = n or 64
        th = 2 * np.pi * np.arange(n) / n
        return np.column_stack([np.cos(th), np.sin(th)])
    if d == 3:
        n = n or 128
        i = np.arange(n) + 0.5
        z = 1 - 2 * i / n
        phi = np.pi * (3 - math.sqrt(5)) * i
        rr = np.sqrt(1 - z * z)
        return np.column_stack([rr * np.cos(phi), rr * np.sin(phi), z])
    n = n or 256
    g = np.random.default_rng(12345).standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


@dataclass
class WulffShape:
    """Polar norm of a (sampled) inverse correlation length.

    ``xi_fn``, when given, evaluates ``xi_lam`` at arbitrary non-zero points
    and enables continuous refinement of the grid maximum.
    """

    lam: float
    d: int
    directions: np.ndarray
    xi_values: np.ndarray
    xi_fn: Callable | None = field(default=None, repr=False)

    @classmethod
    def from_function(cls, xi_fn, lam: float, d: int, directions=None) -> "WulffShape":
        dirs = direction_grid(d) if directions is None else np.atleast_2d(np.asarray(directions, float))
        vals = np.array([xi_fn(u) for u in dirs])
        return cls(lam, d, dirs, vals, xi_fn)

    @classmethod
    def free_walk(cls, lam: float, d: int, directions=None) -> "WulffShape":
        return cls.from_function(lambda x: free_walk_xi(lam, x), lam, d, directions)

    @classmethod
    def from_correlation_length(cls, cl: CorrelationLength) -> "WulffShape":
        return cls(cl.lam, cl.directions.shape[1], cl.directions, cl.xi)

    def polar_norm(self, F, refine: bool = True) -> float:
        F = np.atleast_1d(np.asarray(F, float))
        if len(self.directions) == 0:
            raise ValueError("empty direction grid")
        if not np.any(F):
            return 0.0
        ratios = (self.directions @ F) / self.xi_values
        j = int(np.argmax(ratios))
        best = float(ratios[j])
        if not refine or self.xi_fn is None or self.d == 1:
            return best
        fn = self.xi_fn
        if self.d == 2:
            th0 = math.atan2(self.directions[j, 1], self.directions[j, 0])
            step = 2 * np.pi / len(self.directions)

            def neg(th):
                u = np.array([math.cos(th), math.sin(th)])
                return -float(u @ F) / fn(u)

            res = minimize_scalar(neg, bounds=(th0 - step, th0 + step), method="bounded",
                                  options={"xatol": 1e-12})
            return max(best, -float(res.fun))

        def neg(v):
            nv = np.linalg.norm(v)
            if nv == 0:
                return 0.0
            u = v / nv
            return -float(u @ F) / fn(u)

        res = minimize(neg, self.directions[j], method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000})
        return max(best, -float(res.fun))

    def contains(self, F, tol: float = 0.0) -> bool:
        return self.polar_norm(F) <= 1 + tol

    def support(self, x) -> float:
        """``xi_lam(x)`` extended by homogeneity (exact with ``xi_fn``, else nearest grid)."""
        x = np.atleast_1d(np.asarray(x, float))
        nx = np.linalg.norm(x)
        if nx == 0:
            return 0.0
        if self.xi_fn is not None:
            return float(self.xi_fn(x / nx)) * nx
        j = int(np.argmax(self.directions @ (x / nx)))
        return float(self.xi_values[j]) * nx

    def unit_ball_boundary(self, n: int | None = None) -> np.ndarray:
        """Boundary points ``u / xi*(u)`` of ``K_lam`` (for plotting)."""
        dirs = direction_grid(self.d, n)
        return np.array([u / self.polar_norm(u) for u in dirs])


# ---------------------------------------------------------------------------
# models: families of Wulff shapes indexed by lam
# ---------------------------------------------------------------------------

class FreeWalkModel:
    """Exact Wulff shapes of the simple random walk."""

    def __init__(self, d: int):
        self.d = d
        self.lam0 = math.log(2 * d)
        self.classification = "repulsive"

    def polar(self, lam: float, F) -> float:
        return free_walk_polar(lam, F)

    def shape(self, lam: float) -> WulffShape:
        return WulffShape.free_walk(lam, self.d)


class EstimatedModel:
    """Wulff shapes built from ``estimate_xi`` on a direction grid.

    Each ``lam`` needs one estimate per grid direction; results are cached.
    In d=1 only the two directions are estimated (and symmetrised).
    """

    def __init__(self, pot: Potential, d: int, k_max: int = 30, n_max: int | None = None, **kw):
        self.pot, self.d, self.k_max, self.kw = pot, d, k_max, kw
        n_max = n_max or E.DEFAULT_CAPS.get(d, 8)
        self.bracket = E.free_energy_bracket(pot, min(n_max, 14 if d <= 2 else n_max), d)
        self.lam0 = self.bracket.upper
        self.classification = self.bracket.classification
        self._cache = {}

    def shape(self, lam: float) -> WulffShape:
        key = round(lam, 15)
        if key not in self._cache:
            if self.d == 1:
                xi = estimate_xi(self.pot, lam, [1.0], self.k_max, **self.kw).slope
                self._cache[key] = WulffShape(lam, 1, np.array([[1.0], [-1.0]]), np.array([xi, xi]))
            else:
                cl = correlation_length(self.pot, lam, self.d, self.k_max, **self.kw)
                self._cache[key] = WulffShape.from_correlation_length(cl)
        return self._cache[key]

    def polar(self, lam: float, F) -> float:
        return self.shape(lam).polar_norm(F)


def critical_force(pot: Potential, h, model=None, k_max: int = 40) -> float:
    """``alpha_c = 1 / xi*_{lam_0}(h)``; zero for repulsive potentials.

    For attractive potentials frame the Wulff shape at ``lam_0`` taken from
    the free-energy bracket (``log 2d`` when it is pinned).
    """
    h = np.atleast_1d(np.asarray(h, float))
    d = len(h)
    if model is None:
        model = FreeWalkModel(d) if pot.kind == "free" else EstimatedModel(pot, d, k_max)
    if model.classification != "attractive":
        return 0.0  # K_{lam_0} = {0} in the repulsive case
    return 1.0 / model.shape(model.lam0).polar_norm(h)


def conjugate_lambda(model, F, tol: float = 1e-13, lo: float | None = None, hi: float | None = None) -> float:
    """Root of ``xi*_lam(F) = 1`` in lam (``mu(F)``)."""
    F = np.atleast_1d(np.asarray(F, float))
    lam0 = model.lam0
    lo = lam0 + 1e-6 if lo is None else lo
    hi = lam0 + 10.0 if hi is None else hi

    def g(lam):
        return model.polar(lam, F) - 1.0

    glo = g(lo)
    eps = lo - lam0
    while glo <= 0 and eps > 1e-12:
        # tiny forces: move the lower end toward lam_0 before giving up
        eps /= 1000
        lo = lam0 + eps
        glo = g(lo)
    if glo <= 0:
        raise ValueError("F lies inside K_{lam_0}: no conjugate parameter (collapsed phase)")
    width = hi - lo
    while g(hi) > 0:
        width *= 2
        hi = lo + width
        if width > 1e4:
            raise RuntimeError("failed to bracket the conjugate parameter")
    return float(brentq(g, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps))


@dataclass
class ConjugateMap:
    F: tuple[float, ...]
    mu: float
    vbar: np.ndarray
    sigma: np.ndarray
    h_fd: float
    positive_definite: bool


def drift_and_hessian(model, F, h_fd: float = 1e-3) -> ConjugateMap:
    """Central differences of ``mu`` with one Richardson step (h and h/2)."""
    F = np.atleast_1d(np.asarray(F, float))
    d = len(F)
    mu0 = conjugate_lambda(model, F)
    cache = {}

    def mu(shift):
        key = tuple(np.round(shift, 15))
        if key not in cache:
            cache[key] = conjugate_lambda(model, F + shift)
        return cache[key]

    eye = np.eye(d)

    def grad(h):
        return np.array([(mu(h * eye[i]) - mu(-h * eye[i])) / (2 * h) for i in range(d)])

    def hess(h):
        H = np.empty((d, d))
        for i in range(d):
            H[i, i] = (mu(h * eye[i]) - 2 * mu0 + mu(-h * eye[i])) / h ** 2
            for j in range(i + 1, d):
                e = h * (eye[i] + eye[j])
                f = h * (eye[i] - eye[j])
                H[i, j] = H[j, i] = (mu(e) - mu(f) - mu(-f) + mu(-e)) / (4 * h * h)
        return H

    g = (4 * grad(h_fd / 2) - grad(h_fd)) / 3
    H = (4 * hess(h_fd / 2) - hess(h_fd)) / 3
    H = (H + H.T) / 2
    pd = bool(np.all(np.linalg.eigvalsh(H) > 1e-8))
    return ConjugateMap(tuple(F), mu0, g, H, h_fd, pd)
