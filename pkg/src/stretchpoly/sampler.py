"""Metropolis sampling of the stretched polymer measure.

Target: ``P_n^F(gamma)`` proportional to ``exp(-Phi(gamma) + <F, gamma(n)>)``
on length-n paths from the origin.  Three moves, all with exact Hastings
ratios:

* local: swap two consecutive steps (``i < n-1``) or redraw the last step;
* regrow: redraw the last ``k <= 4`` steps i.i.d. with weights ``e^{<F,e>}``,
  accepted with ``min(1, e^{-dPhi})`` since the tilt cancels the proposal;
* pivot: apply a random non-identity lattice symmetry to the part after a
  uniform vertex.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numba
import numpy as np
from scipy import stats

from .lattice import Potential, unit_steps

MOVES = ("local", "regrow", "pivot")


@dataclass(frozen=True)
class SamplerConfig:
    n_samples: int = 100_000
    burn_in: int | None = None  # move attempts; default 200 * thinning + 10^4
    thinning: int | None = None  # move attempts per retained sample; default n
    moves: tuple[float, float, float] = (0.5, 0.3, 0.2)
    regrow_max: int = 4
    seed: int = 0
    n_chains: int = 1
    workers: int = 1
    keep_paths: int = 0
    abort_window: int = 50_000

    def __post_init__(self):
        w = np.asarray(self.moves, float)
        if w.shape != (3,) or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("move weights must be three non-negative numbers")
        if w[1] == 0 and w[2] == 0:
            raise ValueError("need a positive regrow or pivot weight")
        if self.n_samples < 1 or self.n_chains < 1:
            raise ValueError("n_samples and n_chains must be positive")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["moves"] = list(self.moves)
        return out


def symmetry_maps(d: int) -> np.ndarray:
    """Step-index images under all non-identity hyperoctahedral elements."""
    maps = []
    for perm in itertools.permutations(range(d)):
        for flips in itertools.product((1, -1), repeat=d):
            m = np.empty(2 * d, dtype=np.int64)
            for a in range(d):
                for sgn in (1, -1):
                    s = 2 * a + (sgn < 0)
                    t_sgn = sgn * flips[a]
                    m[s] = 2 * perm[a] + (t_sgn < 0)
            if not np.array_equal(m, np.arange(2 * d)):
                maps.append(m)
    return np.array(maps, dtype=np.int64)


# ---------------------------------------------------------------------------
# kernel
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _key(pos, i, d, base, off):
    k = 0
    mul = 1
    for a in range(d):
        k += (pos[i, a] + off) * mul
        mul *= base
    return k


@numba.njit(cache=True)
def _phi(phi_arr, c):
    return phi_arr[c]  # sized n + 3, local times never exceed n + 1


@numba.njit(cache=True)
def _delta(counts, keys_out, keys_in, n_out, n_in, phi_arr):
    """Apply removals then additions to ``counts``; return the change of Phi."""
    dphi = 0.0
    for t in range(n_out):
        k = keys_out[t]
        c = counts[k]
        dphi += _phi(phi_arr, c - 1) - _phi(phi_arr, c)
        counts[k] = c - 1
    for t in range(n_in):
        k = keys_in[t]
        c = counts[k] if k in counts else 0
        a = _phi(phi_arr, c + 1)
        if math.isinf(a):
            dphi = math.inf
        else:
            dphi += a - _phi(phi_arr, c)
        counts[k] = c + 1
    return dphi


@numba.njit(cache=True)
def _undo(counts, keys_out, keys_in, n_out, n_in):
    for t in range(n_in):
        counts[keys_in[t]] -= 1
    for t in range(n_out):
        counts[keys_out[t]] += 1


@numba.njit(cache=True)
def _chain(n, d, phi_arr, F, steps0, move_cdf, regrow_max, sym, n_samples, burn_in, thinning,
           seed, keep, abort_window, endpoints, ring, stats_out):
    np.random.seed(seed)
    two_d = 2 * d
    vec = np.zeros((two_d, d), dtype=np.int64)
    for s in range(two_d):
        vec[s, s // 2] = 1 if s % 2 == 0 else -1
    q = np.empty(two_d)
    for s in range(two_d):
        q[s] = math.exp(F[s // 2] * (1.0 if s % 2 == 0 else -1.0))
    qcdf = np.cumsum(q) / q.sum()
    off = n + 1
    base = 2 * n + 3
    steps = steps0.copy()
    pos = np.zeros((n + 1, d), dtype=np.int64)
    for i in range(n):
        for a in range(d):
            pos[i + 1, a] = pos[i, a] + vec[steps[i], a]
    counts = numba.typed.Dict.empty(key_type=numba.types.int64, value_type=numba.types.int64)
    for i in range(n + 1):
        k = _key(pos, i, d, base, off)
        if k in counts:
            counts[k] += 1
        else:
            counts[k] = 1
    keys_out = np.empty(n + 1, dtype=np.int64)
    keys_in = np.empty(n + 1, dtype=np.int64)
    newpos = np.empty((n + 1, d), dtype=np.int64)
    newsteps = np.empty(n, dtype=np.int64)
    tried = np.zeros(3, dtype=np.int64)
    acc = np.zeros(3, dtype=np.int64)
    window_tried = 0
    window_acc = 0
    total = burn_in + n_samples * thinning
    sample = 0
    ring_pos = 0
    for it in range(total):
        u = np.random.random()
        mv = 0
        while u > move_cdf[mv]:
            mv += 1
        tried[mv] += 1
        window_tried += 1
        accepted = False
        if mv == 0:
            i = np.random.randint(0, n)
            if i < n - 1:
                if steps[i] != steps[i + 1]:
                    # vertex i+1 moves
                    for a in range(d):
                        newpos[0, a] = pos[i, a] + vec[steps[i + 1], a]
                    keys_out[0] = _key(pos, i + 1, d, base, off)
                    keys_in[0] = _key(newpos, 0, d, base, off)
                    dphi = _delta(counts, keys_out, keys_in, 1, 1, phi_arr)
                    if dphi <= 0 or np.random.random() < math.exp(-dphi):
                        tmp = steps[i]
                        steps[i] = steps[i + 1]
                        steps[i + 1] = tmp
                        for a in range(d):
                            pos[i + 1, a] = newpos[0, a]
                        accepted = True
                    else:
                        _undo(counts, keys_out, keys_in, 1, 1)
            else:
                s_new = np.random.randint(0, two_d)
                if s_new != steps[n - 1]:
                    for a in range(d):
                        newpos[0, a] = pos[n - 1, a] + vec[s_new, a]
                    keys_out[0] = _key(pos, n, d, base, off)
                    keys_in[0] = _key(newpos, 0, d, base, off)
                    dphi = _delta(counts, keys_out, keys_in, 1, 1, phi_arr)
                    dtilt = 0.0
                    for a in range(d):
                        dtilt += F[a] * (vec[s_new, a] - vec[steps[n - 1], a])
                    la = -dphi + dtilt
                    if la >= 0 or np.random.random() < math.exp(la):
                        steps[n - 1] = s_new
                        for a in range(d):
                            pos[n, a] = newpos[0, a]
                        accepted = True
                    else:
                        _undo(counts, keys_out, keys_in, 1, 1)
        elif mv == 1:
            k = np.random.randint(1, min(regrow_max, n) + 1)
            start = n - k
            for a in range(d):
                newpos[0, a] = pos[start, a]
            for t in range(k):
                r = np.random.random()
                s = 0
                while r > qcdf[s]:
                    s += 1
                newsteps[t] = s
                for a in range(d):
                    newpos[t + 1, a] = newpos[t, a] + vec[s, a]
                keys_out[t] = _key(pos, start + t + 1, d, base, off)
                keys_in[t] = _key(newpos, t + 1, d, base, off)
            dphi = _delta(counts, keys_out, keys_in, k, k, phi_arr)
            if dphi <= 0 or np.random.random() < math.exp(-dphi):
                for t in range(k):
                    steps[start + t] = newsteps[t]
                    for a in range(d):
                        pos[start + t + 1, a] = newpos[t + 1, a]
                accepted = True
            else:
                _undo(counts, keys_out, keys_in, k, k)
        else:
            j = np.random.randint(0, n)
            g = sym[np.random.randint(0, sym.shape[0])]
            m = n - j
            for a in range(d):
                newpos[0, a] = pos[j, a]
            for t in range(m):
                s = g[steps[j + t]]
                newsteps[t] = s
                for a in range(d):
                    newpos[t + 1, a] = newpos[t, a] + vec[s, a]
                keys_out[t] = _key(pos, j + t + 1, d, base, off)
                keys_in[t] = _key(newpos, t + 1, d, base, off)
            dphi = _delta(counts, keys_out, keys_in, m, m, phi_arr)
            dtilt = 0.0
            for a in range(d):
                dtilt += F[a] * (newpos[m, a] - pos[n, a])
            la = -dphi + dtilt
            if la >= 0 or np.random.random() < math.exp(la):
                for t in range(m):
                    steps[j + t] = newsteps[t]
                    for a in range(d):
                        pos[j + t + 1, a] = newpos[t + 1, a]
                accepted = True
            else:
                _undo(counts, keys_out, keys_in, m, m)
        if accepted:
            acc[mv] += 1
            window_acc += 1
        if window_tried >= abort_window:
            if window_acc < 1e-4 * window_tried:
                stats_out[6] = 1
                break
            window_tried = 0
            window_acc = 0
        if it >= burn_in and (it - burn_in + 1) % thinning == 0:
            for a in range(d):
                endpoints[sample, a] = pos[n, a]
            if keep > 0:
                for t in range(n):
                    ring[ring_pos, t] = steps[t]
                ring_pos = (ring_pos + 1) % keep
            sample += 1
    for mv in range(3):
        stats_out[mv] = tried[mv]
        stats_out[3 + mv] = acc[mv]
    stats_out[7] = sample
    return steps


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

class SamplerAbort(RuntimeError):
    pass


@dataclass
class SampleSet:
    n: int
    d: int
    force: tuple[float, ...]
    endpoints: np.ndarray  # (n_samples, d), chains concatenated in order
    chain_ids: np.ndarray
    acceptance: dict
    seed: int
    config: dict
    potential: str = ""
    method: str = "mcmc"
    paths: list = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return len(self.endpoints)

    def tallies(self) -> dict[tuple[int, ...], int]:
        uniq, cnt = np.unique(self.endpoints, axis=0, return_counts=True)
        return {tuple(int(v) for v in u): int(c) for u, c in zip(uniq, cnt)}

    def endpoint_law(self) -> dict[tuple[int, ...], float]:
        return {k: v / self.n_samples for k, v in self.tallies().items()}

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.endpoints, axis=1)

    def rhat(self) -> float:
        return gelman_rubin(self.norms(), self.chain_ids)

    def ess(self, series=None) -> float:
        x = self.norms() if series is None else np.asarray(series, float)
        return sum(batch_means_ess(x[self.chain_ids == c]) for c in np.unique(self.chain_ids))


def _seed_path(n: int, d: int, F) -> np.ndarray:
    F = np.asarray(F, float)
    a = int(np.argmax(np.abs(F))) if np.any(F) else 0
    s = 2 * a + (1 if F[a] < 0 else 0)
    return np.full(n, s, dtype=np.int64)


def chain_seeds(seed: int, n_chains: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(s.generate_state(1, np.uint32)[0]) for s in ss.spawn(n_chains)]


def sample(pot: Potential, n: int, F, config: SamplerConfig | None = None) -> SampleSet:
    """Run ``config.n_chains`` Metropolis chains and merge them in order."""
    config = config or SamplerConfig()
    F = np.atleast_1d(np.asarray(F, float))
    d = len(F)
    if n < 1:
        raise ValueError("n must be positive")
    thinning = config.thinning or n
    burn_in = config.burn_in if config.burn_in is not None else 200 * thinning + 10_000
    per_chain = [config.n_samples // config.n_chains + (c < config.n_samples % config.n_chains)
                 for c in range(config.n_chains)]
    phi_arr = pot.phi_array(n + 2)
    w = np.asarray(config.moves, float)
    cdf = np.cumsum(w) / w.sum()
    cdf[-1] = 1.0
    sym = symmetry_maps(d)
    seeds = chain_seeds(config.seed, config.n_chains)
    keep = max(0, int(config.keep_paths))

    def run(c):
        m = per_chain[c]
        ends = np.zeros((m, d), dtype=np.int64)
        ring = np.zeros((max(keep, 1), n), dtype=np.int64)
        st = np.zeros(8, dtype=np.int64)
        _chain(n, d, phi_arr, F, _seed_path(n, d, F), cdf, config.regrow_max, sym, m, burn_in,
               thinning, seeds[c], keep, config.abort_window, ends, ring, st)
        return ends, ring, st

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(run, range(config.n_chains)))
    else:
        results = [run(c) for c in range(config.n_chains)]
    tried = np.zeros(3)
    accd = np.zeros(3)
    for c, (_, _, st) in enumerate(results):
        if st[6]:
            raise SamplerAbort(
                f"chain {c}: acceptance below 1e-4 over a window of {config.abort_window} moves "
                f"(tried {st[:3].tolist()}, accepted {st[3:6].tolist()})")
        tried += st[:3]
        accd += st[3:6]
    acceptance = {mv: (float(accd[i] / tried[i]) if tried[i] else float("nan")) for i, mv in enumerate(MOVES)}
    ends = np.concatenate([r[0] for r in results])
    ids = np.concatenate([np.full(len(r[0]), c) for c, r in enumerate(results)])
    paths = []
    if keep:
        for _, ring, _ in results:
            paths.extend(ring[:keep].copy())
    echo = config.to_dict()
    echo.update(thinning=thinning, burn_in=burn_in)
    return SampleSet(n, d, tuple(F), ends, ids, acceptance, config.seed, echo, pot.label, "mcmc", paths)


def sample_tilted_free(n: int, F, n_samples: int, seed: int = 0) -> SampleSet:
    """Exact i.i.d. sampler for phi == 0: steps drawn with weights ``e^{<F,e>}``."""
    F = np.atleast_1d(np.asarray(F, float))
    d = len(F)
    vec = unit_steps(d)
    q = np.exp(vec @ F)
    q /= q.sum()
    rng = np.random.default_rng(seed)
    ends = np.zeros((n_samples, d), dtype=np.int64)
    chunk = max(1, 2_000_000 // max(n, 1))
    for start in range(0, n_samples, chunk):
        m = min(chunk, n_samples - start)
        counts = rng.multinomial(n, q, size=m)  # step-type counts per sample
        ends[start:start + m] = counts @ vec
    return SampleSet(n, d, tuple(F), ends, np.zeros(n_samples, dtype=np.int64), {}, seed,
                     {"n_samples": n_samples, "seed": seed}, "free", "direct")


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def batch_means_ess(x: np.ndarray, n_batches: int | None = None) -> float:
    x = np.asarray(x, float)
    m = len(x)
    if m < 20:
        return float(m)
    b = n_batches or max(10, int(math.sqrt(m)))
    size = m // b
    xb = x[: size * b].reshape(b, size).mean(axis=1)
    var = x.var(ddof=1)
    if var == 0:
        return float(m)
    tau = size * xb.var(ddof=1) / var
    return float(min(m, m / max(tau, 1e-12)))


def gelman_rubin(x: np.ndarray, chain_ids: np.ndarray) -> float:
    chains = [x[chain_ids == c] for c in np.unique(chain_ids)]
    if len(chains) < 2:
        return float("nan")
    m = min(len(c) for c in chains)
    arr = np.array([c[:m] for c in chains], float)
    W = arr.var(axis=1, ddof=1).mean()
    B = m * arr.mean(axis=1).var(ddof=1)
    if W == 0:
        return 1.0
    var_plus = (m - 1) / m * W + B / m
    return float(math.sqrt(var_plus / W))


def total_variation(emp: dict, exact: dict) -> float:
    keys = set(emp) | set(exact)
    return 0.5 * sum(abs(emp.get(k, 0.0) - exact.get(k, 0.0)) for k in keys)


def wilson_interval(p: float, n_eff: float, level: float = 0.95) -> tuple[float, float]:
    z = stats.norm.ppf(0.5 + level / 2)
    if n_eff <= 0:
        return 0.0, 1.0
    den = 1 + z * z / n_eff
    centre = (p + z * z / (2 * n_eff)) / den
    half = z * math.sqrt(p * (1 - p) / n_eff + z * z / (4 * n_eff * n_eff)) / den
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass
class PhaseVerdict:
    epsilon: float
    n_list: list
    p_hat: list
    ci: list
    n_eff: list
    verdict: str
    threshold: float = 0.5


def phase_from_estimates(eps, n_list, p_hat, ci, n_eff, threshold=0.5) -> PhaseVerdict:
    lows = [c[0] for c in ci]
    highs = [c[1] for c in ci]
    if all(lo >= threshold for lo in lows):
        verdict = "stretched-consistent"
    elif highs[-1] < threshold and all(p_hat[i + 1] <= highs[i] for i in range(len(p_hat) - 1)):
        verdict = "collapsed-consistent"
    else:
        verdict = "inconclusive"
    return PhaseVerdict(eps, list(n_list), list(p_hat), list(ci), list(n_eff), verdict, threshold)


def phase_probe(pot: Potential, n_list, F, epsilon: float = 0.25, config: SamplerConfig | None = None,
                level: float = 0.95) -> PhaseVerdict:
    """Estimate ``P(|gamma(n)| / n > epsilon)`` along ``n_list``.

    Stretched-consistent when the lower confidence bound stays above 1/2 at
    every n; collapsed-consistent when the upper bound at the largest n is
    below 1/2 and the estimates do not increase beyond their error bars.
    The effective sample size comes from batch means, so the binomial
    intervals account for autocorrelation.
    """
    config = config or SamplerConfig(n_samples=20_000)
    p_hat, ci, n_eff = [], [], []
    for n in n_list:
        if pot.kind == "free":
            ss = sample_tilted_free(n, F, config.n_samples, config.seed)
        else:
            ss = sample(pot, n, F, config)
        ind = (ss.norms() / n > epsilon).astype(float)
        p = float(ind.mean())
        neff = ss.ess(ind) if np.any(ind != ind[0]) else float(len(ind))
        p_hat.append(p)
        n_eff.append(neff)
        ci.append(wilson_interval(p, neff, level))
    return phase_from_estimates(epsilon, n_list, p_hat, ci, n_eff)


@dataclass
class CLTReport:
    mean_step: np.ndarray
    vbar: np.ndarray
    mean_rel_err: np.ndarray
    covariance: np.ndarray
    sigma: np.ndarray
    cov_rel_err: np.ndarray
    transverse_z: np.ndarray
    skewness: np.ndarray
    excess_kurtosis: np.ndarray
    positive_definite: bool


def endpoint_clt_check(ss: SampleSet, vbar, sigma) -> CLTReport:
    """Compare ``gamma(n) / n`` with ``vbar`` and ``Cov((gamma(n) - n vbar) / sqrt(n))`` with sigma.

    Covariance errors are relative to ``sigma_ij`` on the diagonal and to
    ``sqrt(sigma_ii sigma_jj)`` off it, so vanishing entries stay meaningful.
    ``transverse_z`` is the z-score of the mean displacement in coordinates
    where ``vbar`` vanishes.
    """
    vbar = np.atleast_1d(np.asarray(vbar, float))
    sigma = np.atleast_2d(np.asarray(sigma, float))
    X = ss.endpoints.astype(float)
    n = ss.n
    mean_step = X.mean(axis=0) / n
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(vbar != 0, np.abs(mean_step - vbar) / np.abs(vbar), np.abs(mean_step - vbar))
    G = (X - n * vbar) / math.sqrt(n)
    cov = np.atleast_2d(np.cov(G, rowvar=False))
    scale = np.sqrt(np.outer(np.diag(sigma), np.diag(sigma)))
    cov_rel = np.abs(cov - sigma) / scale
    m = len(X)
    se = X.std(axis=0, ddof=1) / math.sqrt(max(m, 1))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(vbar == 0, X.mean(axis=0) / se, 0.0)
    pd = bool(np.all(np.linalg.eigvalsh((cov + cov.T) / 2) > 0))
    return CLTReport(mean_step, vbar, rel, cov, sigma, cov_rel, np.nan_to_num(z),
                     stats.skew(G, axis=0), stats.kurtosis(G, axis=0), pd)


def log_acceptance_ratio(pot: Potential, F, steps_old, steps_new, move: str) -> float:
    """``log[pi(new) q(new -> old) / (pi(old) q(old -> new))]`` for one move.

    Reference implementation of the Hastings ratios used in the kernel.
    ``local`` and ``pivot`` proposals are symmetric; ``regrow`` draws the
    changed tail from the tilted step law.
    """
    from .lattice import log_path_weight, path_from_steps

    F = np.atleast_1d(np.asarray(F, float))
    d = len(F)
    a = log_path_weight(path_from_steps(steps_old, d), pot, force=F)
    b = log_path_weight(path_from_steps(steps_new, d), pot, force=F)
    ratio = b - a
    if move == "regrow":
        vec = unit_steps(d)
        lq = vec @ F - math.log(np.exp(vec @ F).sum())
        old = np.asarray(steps_old)
        new = np.asarray(steps_new)
        diff = np.flatnonzero(old != new)
        start = diff[0] if len(diff) else len(old)
        ratio += lq[old[start:]].sum() - lq[new[start:]].sum()
    elif move not in ("local", "pivot"):
        raise ValueError(f"unknown move {move!r}")
    return float(ratio)
