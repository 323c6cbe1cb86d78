"""Semi-directed polymer in a quenched random potential.

Paths start at the origin and are stopped when they first hit the
hyperplane ``L_N = {x_1 = N}``; every earlier vertex lies in
``H_N^- = {x_1 < N}``.  The quenched weight is
``exp(-beta sum_{i=0}^{n} V(gamma(i)) - lam n)``, so the initial vertex is
charged too and ``Z_0 = exp(-beta V_0)``.

The Green function on a truncated half-space box is obtained from the
linear system ``g = e^{-beta V_0} delta_0 + K g`` with
``K(y, z) = e^{-lam - beta V_y} 1{|y - z|_1 = 1}``, by a Neumann iteration
whose contraction factor is at most ``2d e^{-lam} < 1``.  The mass lost
through the artificial faces of the box is bounded using the homogeneous
first-passage generating function.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .lattice import VDistribution, annealed_phi, unit_steps

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def splitmix64(z: np.ndarray) -> np.ndarray:
    """Vectorised splitmix64 finaliser (wrapping uint64 arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@dataclass(frozen=True)
class Environment:
    """i.i.d. site potentials drawn lazily from a counter-based hash.

    ``V(x)`` depends only on ``(seed, x)``, so the same environment is seen
    by every box size.
    """

    dist: VDistribution
    seed: int
    d: int

    def __post_init__(self):
        if self.dist.support_min() != 0:
            raise ValueError("0 must belong to the support of V")

    def uniforms(self, coords: np.ndarray) -> np.ndarray:
        c = np.asarray(coords, dtype=np.int64)
        if c.shape[-1] != self.d:
            raise ValueError(f"coordinates must have {self.d} components")
        h = np.full(c.shape[:-1], np.uint64(self.seed & 0xFFFFFFFFFFFFFFFF), dtype=np.uint64)
        h = splitmix64(h)
        for j in range(self.d):
            h = splitmix64(h ^ c[..., j].astype(np.uint64))
        return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)

    def V(self, coords) -> np.ndarray:
        return self.dist.sample(self.uniforms(coords))

    def shifted(self, y) -> "ShiftedEnvironment":
        return ShiftedEnvironment(self, np.asarray(y, dtype=np.int64))


@dataclass(frozen=True)
class ShiftedEnvironment:
    """``upsilon_y theta``: the environment seen from ``y``."""

    base: Environment
    shift: np.ndarray

    @property
    def d(self) -> int:
        return self.base.d

    def V(self, coords) -> np.ndarray:
        return self.base.V(np.asarray(coords, dtype=np.int64) + self.shift)


def environment_seeds(seed: int, n_env: int) -> list[int]:
    """Independent 63-bit environment keys from a ``SeedSequence`` spawn."""
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)) for c in ss.spawn(n_env)]


# ---------------------------------------------------------------------------
# homogeneous first passage
# ---------------------------------------------------------------------------

def _check_lambda(lam: float, beta: float, d: int) -> None:
    if not lam > math.log(2 * d):
        raise ValueError(f"need lambda > log(2d) = {math.log(2 * d):.6g} for decay; got lambda={lam}, beta={beta}")


def layer_step_weight(lam: float, d: int, u: float = 0.0) -> float:
    """Weight of one move in the first coordinate after summing the transverse moves.

    With ``s = e^-lam`` and a tilt ``u`` on one transverse coordinate this is
    ``s / (1 - s (2 cosh u + 2(d - 2)))``.
    """
    s = math.exp(-lam)
    c = 2 * (d - 1) if d > 1 else 0.0
    if d > 1:
        c = 2 * math.cosh(u) + 2 * (d - 2)
    den = 1 - s * c
    if den <= 0:
        raise ValueError("transverse moves do not converge")
    return s / den


def homogeneous_first_passage(lam: float, d: int, u: float = 0.0) -> float:
    """Generating value ``f(s~)`` of first passage to the next layer (beta = 0)."""
    st = layer_step_weight(lam, d, u)
    if not 0 < st <= 0.5:
        raise ValueError("layer weight outside (0, 1/2]")
    return (1 - math.sqrt(1 - 4 * st * st)) / (2 * st)


def homogeneous_transverse_variance(lam: float, d: int) -> float:
    """``E|X|^2 / N`` for beta = 0, summed over the ``d - 1`` transverse axes.

    ``log Z_N(u) = N log f(s~(u))``; since ``s~'(0) = 0`` the second
    derivative is ``f'(s~)/f(s~) s~''(0)`` with ``s~''(0) = 2 s^2 / (1 - s c_0)^2``.
    """
    if d < 2:
        return 0.0
    s = math.exp(-lam)
    c0 = 2.0 * (d - 1)
    st = s / (1 - s * c0)
    r = math.sqrt(1 - 4 * st * st)
    f = (1 - r) / (2 * st)
    fp = (8 * st * st / r - 2 + 2 * r) / (4 * st * st)
    stpp = 2 * s * s / (1 - s * c0) ** 2
    return (d - 1) * fp / f * stpp


# ---------------------------------------------------------------------------
# Green function on a truncated half-space
# ---------------------------------------------------------------------------

@dataclass
class HalfSpaceGeometry:
    """Box ``x_1 in [-M1, N-1]``, ``|x_j| <= M`` (j >= 2) and its hit layer ``L_N``."""

    N: int
    M: int
    M1: int
    d: int

    @property
    def shape(self) -> tuple:
        return (self.M1 + self.N,) + (2 * self.M + 1,) * (self.d - 1)

    @property
    def origin(self) -> tuple:
        return (self.M1,) + (self.M,) * (self.d - 1)

    def coords(self) -> np.ndarray:
        axes = [np.arange(-self.M1, self.N)] + [np.arange(-self.M, self.M + 1)] * (self.d - 1)
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def layer_coords(self) -> np.ndarray:
        axes = [np.array([self.N])] + [np.arange(-self.M, self.M + 1)] * (self.d - 1)
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)[0]

    def transverse(self) -> np.ndarray:
        """Transverse coordinates of ``L_N``, shape ``layer + (d - 1,)``."""
        return self.layer_coords()[..., 1:]


@dataclass
class QuenchedGreen:
    geometry: HalfSpaceGeometry
    lam: float
    beta: float
    g: np.ndarray  # Green function on the box
    hit: np.ndarray  # first-hit mass on L_N
    residual: float
    iterations: int
    truncation_bound: float

    @property
    def Z(self) -> float:
        return float(self.hit.sum())

    @property
    def log_Z(self) -> float:
        return math.log(self.Z)

    def transverse_moments(self):
        """Mean and second moment of the transverse end-point under ``mu_N``."""
        X = self.geometry.transverse()
        w = self.hit / self.hit.sum()
        mean = np.tensordot(w, X, axes=(range(w.ndim), range(w.ndim)))
        sq = float((w * (X ** 2).sum(axis=-1)).sum())
        return mean, sq


def _neighbour_sum(g: np.ndarray) -> np.ndarray:
    out = np.zeros_like(g)
    for ax in range(g.ndim):
        sl_a = [slice(None)] * g.ndim
        sl_b = [slice(None)] * g.ndim
        sl_a[ax], sl_b[ax] = slice(1, None), slice(None, -1)
        out[tuple(sl_a)] += g[tuple(sl_b)]
        out[tuple(sl_b)] += g[tuple(sl_a)]
    return out


def solve_quenched_green(env, lam: float, beta: float, N: int, M: int, M1: int | None = None,
                         tol: float = 1e-14, max_iter: int = 100_000) -> QuenchedGreen:
    """Absorbing solve on the box; see the module docstring for the system."""
    d = env.d
    _check_lambda(lam, beta, d)
    if N < 0 or M < 0:
        raise ValueError("N and M must be >= 0")
    M1 = M if M1 is None else int(M1)
    geo = HalfSpaceGeometry(int(N), int(M), M1, d)
    if N == 0:
        v0 = env.V(np.zeros((1, d), dtype=np.int64))[0]
        hit = np.zeros((2 * M + 1,) * (d - 1))
        hit[(M,) * (d - 1)] = math.exp(-beta * v0)
        return QuenchedGreen(geo, lam, beta, np.zeros(geo.shape), hit, 0.0, 0, 0.0)
    V = env.V(geo.coords())
    a = np.exp(-lam - beta * V)
    b = np.zeros(geo.shape)
    b[geo.origin] = math.exp(-beta * V[geo.origin])
    # Neumann series on increments D_k = A^k b.  A^2 preserves each parity
    # class, and r = max D_{k+2} / D_k over both classes cannot increase for
    # a non-negative A, so the remainder is <= r / (1 - r) (D_{k-1} + D_k).
    D = [b]
    g = b.copy()
    it = 0
    while True:
        it += 1
        D.append(a * _neighbour_sum(D[-1]))
        g += D[-1]
        if len(D) > 4:
            D.pop(0)
        if len(D) == 4 and it % 4 == 0:
            r, ok = 0.0, True
            for lo, hi in ((D[0], D[2]), (D[1], D[3])):
                pos = lo > 0
                if np.any(hi[~pos] > 0):
                    ok = False
                    break
                if np.any(pos):
                    r = max(r, float(np.max(hi[pos] / lo[pos])))
            if ok and r < 1:
                rem = r / (1 - r) * (D[2] + D[3])
                mask = g > 0
                if float(np.max(rem[mask] / g[mask])) <= tol:
                    break
        if it >= max_iter:
            raise RuntimeError(f"iteration did not converge for lambda={lam}, beta={beta}")
    residual = float(np.max(np.abs(b + a * _neighbour_sum(g) - g)))
    VL = env.V(geo.layer_coords())
    hit = np.exp(-lam - beta * VL) * g[-1]
    # mass leaving through the artificial faces, continued by the homogeneous walk
    s = math.exp(-lam)
    f = homogeneous_first_passage(lam, d)
    cont = f ** (N - np.arange(-M1, N))  # side-face sites keep x1
    bound = s * float(g[0].sum()) * f ** (N + M1 + 1)
    for ax in range(1, d):
        for end in (0, -1):
            face = np.take(g, end, axis=ax)
            per = face.reshape(face.shape[0], -1).sum(axis=1)
            bound += s * float(per @ cont)
    return QuenchedGreen(geo, lam, beta, g, hit, residual, it, bound)


def quenched_partition(env, lam: float, beta: float, N: int, M: int | None = None, tol: float = 1e-10,
                       M_max: int = 64) -> QuenchedGreen:
    """``Z_N^theta``; grows ``M`` (with ``M1 = M``) until the truncation bound is below ``tol``."""
    if M is not None:
        return solve_quenched_green(env, lam, beta, N, M)
    M = 2
    while True:
        res = solve_quenched_green(env, lam, beta, N, M)
        if res.truncation_bound <= tol * res.Z or M >= M_max:
            return res
        M = int(math.ceil(M * 1.5))


# ---------------------------------------------------------------------------
# oracles: length-by-length sums and per-path identities
# ---------------------------------------------------------------------------

def layered_partition(env, lam: float, beta: float, N: int, L: int) -> tuple[float, float]:
    """``Z_N`` summed over path lengths ``<= L`` without spatial truncation.

    Returns ``(Z, tail_bound)`` where the bound covers all longer paths.
    """
    d = env.d
    if N == 0:
        return math.exp(-beta * float(env.V(np.zeros((1, d), dtype=np.int64))[0])), 0.0
    R = L + 1
    shape = (R + N,) + (2 * R + 1,) * (d - 1)  # x1 in [-R, N-1]
    axes = [np.arange(-R, N)] + [np.arange(-R, R + 1)] * (d - 1)
    coords = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    a = np.exp(-lam - beta * env.V(coords))
    lay = [np.array([N])] + [np.arange(-R, R + 1)] * (d - 1)
    aL = np.exp(-lam - beta * env.V(np.stack(np.meshgrid(*lay, indexing="ij"), axis=-1)[0]))
    org = (R,) + (R,) * (d - 1)
    cur = np.zeros(shape)
    cur[org] = math.exp(-beta * float(env.V(np.zeros((1, d), dtype=np.int64))[0]))
    Z = 0.0
    for _ in range(L):
        Z += float((aL * cur[-1]).sum())
        cur = a * _neighbour_sum(cur)
    # surviving mass after L steps, each continued by at most the homogeneous walk
    f = homogeneous_first_passage(lam, d)
    tail = float(cur.sum()) * f
    return Z, tail


def quenched_path_log_weight(path, env, lam: float, beta: float) -> float:
    p = np.asarray(path, dtype=np.int64)
    return float(-beta * env.V(p).sum() - lam * (len(p) - 1))


def annealed_path_expectation(path, dist: VDistribution, lam: float, beta: float) -> float:
    """``E w^theta(gamma)`` by summing over all environments on the visited sites.

    Needs a finite-atom law; the result is compared with the annealed
    potential ``phi(l) = -log E e^{-beta l V}``.
    """
    at = dist.atoms()
    if at is None:
        raise ValueError("exact environment sums need a law with finitely many atoms")
    vals, probs = at
    p = [tuple(v) for v in np.asarray(path, dtype=np.int64)]
    sites = sorted(set(p))
    idx = {s: i for i, s in enumerate(sites)}
    ell = np.zeros(len(sites), dtype=np.int64)
    for v in p:
        ell[idx[v]] += 1
    total = 0.0
    for combo in itertools.product(range(len(vals)), repeat=len(sites)):
        c = np.array(combo)
        pr = float(np.prod(probs[c]))
        if pr == 0.0:
            continue
        total += pr * math.exp(-beta * float((vals[c] * ell).sum()))
    return total * math.exp(-lam * (len(p) - 1))


def annealed_path_log_weight(path, dist: VDistribution, lam: float, beta: float) -> float:
    """Log weight under the annealed potential built from local times."""
    p = [tuple(v) for v in np.asarray(path, dtype=np.int64)]
    ell = {}
    for v in p:
        ell[v] = ell.get(v, 0) + 1
    return -sum(annealed_phi(dist, l, beta) for l in ell.values()) - lam * (len(p) - 1)


# ---------------------------------------------------------------------------
# ratio series and diffusivity
# ---------------------------------------------------------------------------

def _env_series(args):
    dist, seed, d, lam, beta, N_list, M = args
    env = Environment(dist, seed, d)
    out = []
    for N in N_list:
        r = solve_quenched_green(env, lam, beta, N, M)
        mean, sq = r.transverse_moments() if N > 0 else (np.zeros(d - 1), 0.0)
        out.append((r.log_Z, np.asarray(mean, float), sq, r.truncation_bound / r.Z))
    return out


@dataclass
class RatioSeries:
    d: int
    lam: float
    beta: float
    N_list: list
    seeds: list
    log_Z: np.ndarray  # (n_env, len(N))
    log_mean_Z: np.ndarray
    Xi: np.ndarray
    mean_Xi: np.ndarray
    var_Xi: np.ndarray
    sq_disp: np.ndarray  # mu_N(|X|^2), (n_env, len(N))
    trans_mean: np.ndarray  # (n_env, len(N), d - 1)
    max_truncation: float
    records: list = field(default_factory=list)

    def variance_trend(self) -> dict:
        v = self.var_Xi
        slope = float(np.polyfit(self.N_list, v, 1)[0]) if len(v) > 1 else math.nan
        return {"non_increasing": bool(np.all(np.diff(v) <= 0)), "slope": slope,
                "variances": v.tolist()}

    def flury_gap(self) -> np.ndarray:
        """``-(1/N) mean log Z^theta + (1/N) log mean Z`` for each ``N >= 1``."""
        N = np.asarray(self.N_list, float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return (self.log_mean_Z - self.log_Z.mean(axis=0)) / N


def ratio_series(dist: VDistribution, lam: float, beta: float, N_list, n_env: int, seed: int = 0,
                 d: int = 2, M: int = 8, seeds=None, workers: int = 1) -> RatioSeries:
    """``Xi_N^theta = Z_N^theta / mean_theta Z_N^theta`` over coupled environments."""
    if n_env < 8:
        raise ValueError("at least 8 environments are needed")
    _check_lambda(lam, beta, d)
    N_list = [int(n) for n in N_list]
    seeds = list(seeds) if seeds is not None else environment_seeds(seed, n_env)
    if len(seeds) != n_env:
        raise ValueError("seeds must have length n_env")
    tasks = [(dist, s, d, lam, beta, N_list, M) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_env_series, tasks))
    else:
        rows = [_env_series(t) for t in tasks]
    logZ = np.array([[r[0] for r in row] for row in rows])
    tm = np.array([[r[1] for r in row] for row in rows]).reshape(n_env, len(N_list), max(d - 1, 0))
    sq = np.array([[r[2] for r in row] for row in rows])
    trunc = float(max(r[3] for row in rows for r in row))
    m = logZ.max(axis=0)
    log_mean = m + np.log(np.mean(np.exp(logZ - m), axis=0))
    Xi = np.exp(logZ - log_mean)
    recs = []
    for i, s in enumerate(seeds):
        for j, N in enumerate(N_list):
            recs.append({"seed": int(s), "N": N, "logZ_q": float(logZ[i, j]), "Xi": float(Xi[i, j]),
                         "var_transverse": float(sq[i, j])})
    return RatioSeries(d, lam, beta, N_list, seeds, logZ, log_mean, Xi, Xi.mean(axis=0),
                       Xi.var(axis=0, ddof=1), sq, tm, trunc, recs)


@dataclass
class DiffusivityReport:
    N_list: list
    per_N: np.ndarray  # across-theta mean of mu(|X|^2)/N
    dispersion: np.ndarray  # across-theta std of mu(|X|^2)/N
    annealed_per_N: np.ndarray  # mean over theta of Xi mu(|X|^2) / N
    homogeneous: float  # beta = 0 value
    free_hessian: float  # transverse Hessian of log sum 2cosh at F = xi e1 over the drift
    weighted_stat: np.ndarray  # mean of Xi mu((|X|^2 - sigma^2 N)/N)
    weighted_stat_sd: np.ndarray
    max_abs_mean: float
    richardson_flags: list

    @property
    def dispersion_shrinks(self) -> bool:
        return bool(np.all(np.diff(self.dispersion) <= 0))


def _tilted_second_derivative(res: QuenchedGreen, axis: int, h: float) -> float:
    X = res.geometry.transverse()[..., axis]
    def lz(u):
        return math.log(float((res.hit * np.exp(u * X)).sum()))
    d2 = lambda t: (lz(t) - 2 * lz(0.0) + lz(-t)) / (t * t)
    return (4 * d2(h / 2) - d2(h)) / 3


def diffusivity_probe(dist: VDistribution, lam: float, beta: float, N_list, n_env: int, seed: int = 0,
                      d: int = 2, M: int = 8, h: float = 1e-2, rtol: float = 1e-5) -> DiffusivityReport:
    """Transverse spread of the end-point on ``L_N`` across environments.

    The second moment is read directly from the first-hit mass; as a check
    it is also obtained from Richardson-extrapolated second differences of
    ``log Z_N(u)`` under a transverse tilt, and disagreements are flagged.
    """
    rs = ratio_series(dist, lam, beta, N_list, n_env, seed, d, M)
    N = np.asarray(rs.N_list, float)
    per = rs.sq_disp / N
    ann = (rs.Xi * rs.sq_disp).mean(axis=0) / N
    stat = rs.Xi * (rs.sq_disp - ann * N) / N
    flags = []
    env0 = Environment(dist, rs.seeds[0], d)
    for Nn in rs.N_list:
        res = solve_quenched_green(env0, lam, beta, Nn, M)
        mean, sq = res.transverse_moments()
        fd = sum(_tilted_second_derivative(res, ax, h) for ax in range(d - 1))
        var = sq - float(np.sum(np.asarray(mean) ** 2))
        if abs(fd - var) > rtol * max(abs(var), 1e-300):
            flags.append((Nn, fd, var))
    xi = -math.log(homogeneous_first_passage(lam, d))
    sig_free = (d - 1) / math.sinh(xi) if d > 1 else 0.0
    return DiffusivityReport(rs.N_list, per.mean(axis=0), per.std(axis=0, ddof=1), ann,
                             homogeneous_transverse_variance(lam, d), sig_free,
                             stat.mean(axis=0), stat.std(axis=0, ddof=1),
                             float(np.max(np.abs(rs.trans_mean))) if rs.trans_mean.size else 0.0, flags)


# ---------------------------------------------------------------------------
# renewal structure and the Ansatz (d = 2)
# ---------------------------------------------------------------------------

def _sector_paths(cone, P: int):
    """Paths from 0 with length ``<= P`` whose vertices after 0 lie in the cone."""
    d = len(cone.F)
    steps = unit_steps(d)
    out = []
    path = [np.zeros(d, dtype=np.int64)]

    def rec():
        out.append(np.array(path))
        if len(path) - 1 == P:
            return
        for e in steps:
            q = path[-1] + e
            if not cone.contains_fast(q[None, :])[0]:
                continue
            path.append(q)
            rec()
            path.pop()

    rec()
    return out


@dataclass
class RenewalCheck:
    caps: list
    residual: list  # relative l1 residual per piece-length cap
    monotone: bool
    single_piece_exact: bool
    ansatz: float
    Xi_N: float | None
    xi: float
    n_sector: int
    n_pieces: int


def verify_quenched_renewal(env: Environment, lam: float, beta: float, caps, path_cap: int | None = None,
                            xi: float | None = None, N: int | None = None, M: int = 8,
                            mean_Z: float | None = None) -> RenewalCheck:
    """Quenched renewal identity and truncated Ansatz on a small box.

    ``t(x) = e^{xi x_1} sum_{sector paths 0 -> x} w^theta`` and
    ``q_y(z) = e^{xi z_1} sum_{pieces of shape z} w^{upsilon_y theta}``.
    Consecutive pieces share their junction vertex, whose potential is
    charged twice, so the identity reads
    ``t(x) = sum_y t(y) e^{beta V_y} q_y(x - y)`` with ``t(0) = e^{-beta V_0}``.
    The Ansatz uses ``q_x`` without the junction charge, divided by its
    annealed counterpart at the same cap.
    """
    from . import oz
    from . import wulff as W

    if env.d != 2:
        raise ValueError("the renewal check enumerates cone paths in d=2 only")
    _check_lambda(lam, beta, 2)
    caps = sorted(int(c) for c in caps)
    P = caps[-1] if path_cap is None else int(path_cap)
    if xi is None:
        xi = W.free_walk_xi(lam, np.array([1.0, 0.0]))
    F = np.array([xi, 0.0])
    cone = oz.Cone.build(F, lam, lambda x: W.free_walk_xi(lam, x))
    paths = _sector_paths(cone, P)
    sector = [p for p in paths[1:] if oz.decompose(p, cone).sector]
    pieces = [p for p in sector if oz.is_irreducible(p, cone)]

    def logw(p, e):
        return -beta * float(e.V(p).sum()) - lam * (len(p) - 1) + xi * float(p[-1, 0])
    # at beta = 0 this is -lam n + xi z_1 and matches the annealed expression bit for bit

    v0 = float(env.V(np.zeros((1, 2), dtype=np.int64))[0])
    t = {}
    for p in sector:
        key = (tuple(p[-1]), len(p) - 1)
        t[key] = t.get(key, 0.0) + math.exp(logw(p, env))
    t0 = math.exp(-beta * v0)
    # pieces evaluated from every junction y that occurs
    ys = {(0, 0)} | {k[0] for k in t}
    piece_arr = [(tuple(p[-1]), len(p) - 1, p) for p in pieces]
    q = {}
    for y in ys:
        yv = np.array(y, dtype=np.int64)
        e = env.shifted(yv)
        vy = float(env.V(yv[None, :])[0])
        q[y] = [(z, n, math.exp(logw(p, e) + beta * vy)) for z, n, p in piece_arr]
    residual = []
    for c in caps:
        rhs = {}
        starts = [((0, 0), 0, t0)] + [(k[0], k[1], v) for k, v in t.items()]
        for y, n1, ty in starts:
            for z, n2, w in q[y]:
                if n2 > c or n1 + n2 > P:
                    continue
                x = (y[0] + z[0], y[1] + z[1])
                rhs[(x, n1 + n2)] = rhs.get((x, n1 + n2), 0.0) + ty * w
        lhs_tot = sum(t.values())
        diff = sum(abs(t.get(k, 0.0) - rhs.get(k, 0.0)) for k in set(t) | set(rhs))
        residual.append(diff / lhs_tot)
    mono = all(b <= a + 1e-15 for a, b in zip(residual, residual[1:]))
    # a single step is the only piece reaching its endpoint in one step
    e1 = ((1, 0), 1)
    single = math.isclose(t.get(e1, 0.0), t0 * math.fsum(w for z, n, w in q[(0, 0)] if (z, n) == e1),
                          rel_tol=1e-14)
    # Ansatz: pieces without the junction charge, normalised by the annealed mass
    dist = env.dist
    ann = []
    for z, n, p in piece_arr:
        ell = {}
        for v in map(tuple, p[1:]):
            ell[v] = ell.get(v, 0) + 1
        phi = beta * 0.0 if beta == 0 else sum(annealed_phi(dist, l, beta) for l in ell.values())
        ann.append(math.exp(-phi - lam * n + xi * float(z[0])))
    q_ann = math.fsum(ann) if ann else 1.0
    tot = {}
    for (x, n), v in t.items():
        tot[x] = tot.get(x, 0.0) + v
    tot[(0, 0)] = tot.get((0, 0), 0.0) + t0
    ansatz = 1.0
    for x, tx in tot.items():
        qx = math.fsum(w for _, _, w in q[x]) if x in q else 0.0
        ansatz += tx * (qx / q_ann - 1.0)
    Xi_N = None
    if N is not None and mean_Z is not None:
        Xi_N = quenched_partition(env, lam, beta, N, M).Z / mean_Z
    return RenewalCheck(caps, residual, mono, single, ansatz, Xi_N, xi, len(sector), len(pieces))
