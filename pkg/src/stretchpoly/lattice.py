"""Lattice paths, local times, interaction potentials and Gibbs weights.

Paths are stored as integer arrays of shape ``(n + 1, d)``.  Potentials are
immutable objects wrapping ``phi(l)`` with ``phi(0) = 0``; the value
``math.inf`` is a legitimate energy (hard-core exclusion) and maps to weight
zero, never to NaN.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import yaml
from scipy import integrate
from scipy.special import logsumexp

INF = math.inf


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

def unit_steps(d: int) -> np.ndarray:
    """Unit steps in the fixed order +e1, -e1, +e2, -e2, ..."""
    steps = np.zeros((2 * d, d), dtype=np.int64)
    for i in range(d):
        steps[2 * i, i] = 1
        steps[2 * i + 1, i] = -1
    return steps


def as_path(vertices) -> np.ndarray:
    """Coerce a vertex sequence to an ``(n+1, d)`` int array and validate it.

    Scalars are read as one-dimensional sites, so ``[0, 1, 0]`` is a valid
    path in d=1.
    """
    arr = np.asarray(vertices, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("path needs at least one vertex")
    if arr.shape[0] > 1:
        jumps = np.abs(np.diff(arr, axis=0)).sum(axis=1)
        if np.any(jumps != 1):
            raise ValueError("consecutive vertices must be nearest neighbours")
    return arr


def path_from_steps(steps: Sequence[int], d: int, origin=None) -> np.ndarray:
    """Build a path from step indices into :func:`unit_steps`."""
    alphabet = unit_steps(d)
    start = np.zeros(d, dtype=np.int64) if origin is None else np.asarray(origin, dtype=np.int64)
    out = np.empty((len(steps) + 1, d), dtype=np.int64)
    out[0] = start
    if len(steps):
        out[1:] = start + np.cumsum(alphabet[np.asarray(steps, dtype=np.int64)], axis=0)
    return out


def local_times(path) -> dict[tuple[int, ...], int]:
    """Number of visits to every site, ``sum`` equal to ``len(path)``."""
    arr = as_path(path)
    return dict(Counter(map(tuple, arr.tolist())))


def displacement(path) -> np.ndarray:
    arr = as_path(path)
    return arr[-1] - arr[0]


# ---------------------------------------------------------------------------
# disorder distributions (used for the annealed potential and environments)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VDistribution:
    """Law of a single-site potential value V >= 0.

    ``kind`` is one of ``point`` (V = b), ``bernoulli`` (V = b with
    probability p, else 0), ``uniform`` (uniform on [0, b]) or ``discrete``
    (explicit ``values``/``probs``).
    """

    kind: str
    b: float = 1.0
    p: float = 0.5
    values: tuple[float, ...] = ()
    probs: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("point", "bernoulli", "uniform", "discrete"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "discrete":
            if len(self.values) != len(self.probs) or not self.values:
                raise ValueError("discrete distribution needs matching values/probs")
            if not math.isclose(sum(self.probs), 1.0, rel_tol=0, abs_tol=1e-12):
                raise ValueError("probabilities must sum to one")
        if self.kind == "bernoulli" and not 0 <= self.p <= 1:
            raise ValueError("p must lie in [0, 1]")
        if self.support_min() < 0:
            raise ValueError("potential values must be non-negative")

    def support_min(self) -> float:
        if self.kind == "point":
            return self.b
        if self.kind == "discrete":
            return min(v for v, q in zip(self.values, self.probs) if q > 0)
        return min(0.0, self.b)

    def support_max(self) -> float:
        if self.kind == "discrete":
            return max(v for v, q in zip(self.values, self.probs) if q > 0)
        if self.kind == "bernoulli" and self.p == 0:
            return 0.0
        return max(self.b, 0.0)

    def atoms(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Finite support as ``(values, probs)``, or None for continuous laws."""
        if self.kind == "point":
            return np.array([self.b]), np.array([1.0])
        if self.kind == "bernoulli":
            return np.array([0.0, self.b]), np.array([1 - self.p, self.p])
        if self.kind == "discrete":
            return np.array(self.values, float), np.array(self.probs, float)
        return None

    def log_laplace(self, t: float) -> float:
        """``log E exp(-t V)``; exact sums for atoms, quadrature otherwise."""
        at = self.atoms()
        if at is not None:
            vals, probs = at
            mask = probs > 0
            return float(logsumexp(-t * vals[mask], b=probs[mask]))
        # uniform[0, b]
        if self.b == 0 or t == 0:
            return 0.0
        val, _ = integrate.quad(lambda v: math.exp(-t * v), 0.0, self.b, epsabs=0, epsrel=1e-13)
        return math.log(val / self.b)

    def sample(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms ``u`` in [0, 1) to draws of V (inverse transform)."""
        if self.kind == "point":
            return np.full_like(u, self.b, dtype=float)
        if self.kind == "bernoulli":
            return np.where(u < self.p, self.b, 0.0)
        if self.kind == "uniform":
            return self.b * u
        vals, probs = self.atoms()
        edges = np.cumsum(probs)
        idx = np.searchsorted(edges, u, side="right")
        return vals[np.minimum(idx, len(vals) - 1)]

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind in ("point", "bernoulli", "uniform"):
            out["b"] = self.b
        if self.kind == "bernoulli":
            out["p"] = self.p
        if self.kind == "discrete":
            out["values"] = list(self.values)
            out["probs"] = list(self.probs)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "VDistribution":
        data = dict(data)
        for key in ("values", "probs"):
            if key in data:
                data[key] = tuple(float(v) for v in data[key])
        return cls(**data)


def annealed_phi(dist: VDistribution, ell: int, beta: float = 1.0) -> float:
    """``phi(l) = -log E exp(-beta * l * V)``."""
    if ell < 0:
        raise ValueError("local time must be non-negative")
    if ell == 0:
        return 0.0
    return -dist.log_laplace(beta * ell)


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------

KINDS = ("free", "saw", "domb_joyce", "sausage", "reinforced", "annealed", "two_color", "custom")
NOMINAL_CLASS = {
    "free": "repulsive",
    "saw": "repulsive",
    "domb_joyce": "repulsive",
    "sausage": "attractive",
    "reinforced": "attractive",
    "annealed": "attractive",
    "two_color": "attractive",
    "custom": None,
}


@dataclass(frozen=True)
class Potential:
    """Self-interaction ``phi`` acting on vertex local times.

    Build instances through the named constructors (:meth:`saw`,
    :meth:`sausage`, ...).  ``custom`` tables list ``phi(1), phi(2), ...``;
    beyond the table the last increment is repeated.
    """

    kind: str
    beta: float = 0.0
    betas: tuple[float, ...] = ()
    table: tuple[float, ...] = ()
    dist: VDistribution | None = None
    _cache: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == "reinforced":
            b = self.betas
            if not b or any(x < 0 for x in b) or any(b[i + 1] > b[i] for i in range(len(b) - 1)):
                raise ValueError("reinforced betas must be a non-empty non-increasing sequence of non-negative reals")
        if self.kind == "annealed" and self.dist is None:
            raise ValueError("annealed potential needs a V distribution")
        if self.kind == "custom":
            if not self.table:
                raise ValueError("custom table must list phi(1), phi(2), ...")
            vals = (0.0,) + tuple(self.table)
            if any(vals[i + 1] < vals[i] for i in range(len(vals) - 1)):
                raise ValueError("phi must be non-decreasing")
        if self.kind in ("domb_joyce", "sausage", "two_color") and self.beta < 0:
            raise ValueError("beta must be non-negative")

    # named constructors -------------------------------------------------
    @classmethod
    def free(cls) -> "Potential":
        return cls("free")

    @classmethod
    def saw(cls) -> "Potential":
        return cls("saw")

    @classmethod
    def domb_joyce(cls, beta: float) -> "Potential":
        return cls("domb_joyce", beta=float(beta))

    @classmethod
    def sausage(cls, beta: float) -> "Potential":
        return cls("sausage", beta=float(beta))

    @classmethod
    def reinforced(cls, betas: Iterable[float]) -> "Potential":
        """Cost ``betas[k-1]`` for the k-th visit; the last value repeats."""
        return cls("reinforced", betas=tuple(float(b) for b in betas))

    @classmethod
    def annealed(cls, dist: VDistribution, beta: float = 1.0) -> "Potential":
        return cls("annealed", beta=float(beta), dist=dist)

    @classmethod
    def two_color(cls, beta: float) -> "Potential":
        return cls("two_color", beta=float(beta))

    @classmethod
    def custom(cls, table: Iterable[float]) -> "Potential":
        return cls("custom", table=tuple(float(v) for v in table))

    # evaluation ---------------------------------------------------------
    def phi(self, ell: int) -> float:
        ell = int(ell)
        if ell < 0:
            raise ValueError("local time must be non-negative")
        if ell == 0:
            return 0.0
        cached = self._cache.get(ell)
        if cached is not None:
            return cached
        k = self.kind
        if k == "free":
            val = 0.0
        elif k == "saw":
            val = INF if ell >= 2 else 0.0
        elif k == "domb_joyce":
            val = 0.5 * self.beta * ell * (ell - 1)
        elif k == "sausage":
            val = self.beta
        elif k == "two_color":
            val = self.beta * (1 + (ell >= 2))
        elif k == "reinforced":
            b = self.betas
            head = sum(b[: min(ell, len(b))])
            val = head + max(ell - len(b), 0) * b[-1]
        elif k == "annealed":
            val = annealed_phi(self.dist, ell, self.beta)
        else:
            t = self.table
            if ell <= len(t):
                val = t[ell - 1]
            else:
                last_inc = t[-1] - (t[-2] if len(t) >= 2 else 0.0)
                val = t[-1] + (ell - len(t)) * last_inc
        self._cache[ell] = val
        return val

    def phi_array(self, ell_max: int) -> np.ndarray:
        """``[phi(0), ..., phi(ell_max)]`` as floats (inf allowed)."""
        return np.array([self.phi(l) for l in range(ell_max + 1)], dtype=float)

    def increments(self, ell_max: int) -> np.ndarray:
        """``inc[c] = phi(c+1) - phi(c)`` for c = 0..ell_max-1; inf once phi is inf."""
        ph = self.phi_array(ell_max)
        inc = np.empty(ell_max)
        for c in range(ell_max):
            inc[c] = INF if math.isinf(ph[c + 1]) else ph[c + 1] - ph[c]
        return inc

    @cached_property
    def phi1(self) -> float:
        return self.phi(1)

    def dependence_range(self, probe: int = 64) -> int | None:
        """Smallest r with ``phi(c+1) - phi(c)`` constant for all c >= r.

        Returns None when the increments keep changing up to ``probe``
        (e.g. Domb-Joyce).  Exact for every catalog kind except ``annealed``,
        which is decided on the probe range.
        """
        k = self.kind
        if k == "free":
            return 0
        if k in ("saw", "sausage"):
            return 1
        if k == "two_color":
            return 2
        if k == "reinforced":
            b = self.betas
            r = len(b) - 1
            while r > 0 and b[r - 1] == b[-1]:
                r -= 1
            return r
        if k == "custom":
            diffs = np.diff(np.concatenate([[0.0], self.table]))
            r = len(diffs) - 1
            while r > 0 and diffs[r - 1] == diffs[-1]:
                r -= 1
            return r
        inc = self.increments(probe)
        if k == "domb_joyce":
            return 0 if self.beta == 0 else None
        for r in range(probe):
            if np.all(inc[r:] == inc[r]):
                return r
        return None

    def linear_rate(self, ell_max: int = 64) -> float:
        """Estimate of ``alpha = lim phi(l)/l`` at ``ell_max`` (linear part)."""
        v = self.phi(ell_max)
        return v / ell_max

    # serialisation ------------------------------------------------------
    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.kind in ("domb_joyce", "sausage", "two_color", "annealed"):
            out["beta"] = self.beta
        if self.kind == "reinforced":
            out["betas"] = list(self.betas)
        if self.kind == "custom":
            out["table"] = list(self.table)
        if self.kind == "annealed":
            out["dist"] = self.dist.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Potential":
        data = dict(data)
        kind = data.pop("kind")
        if kind == "annealed":
            return cls.annealed(VDistribution.from_dict(data["dist"]), data.get("beta", 1.0))
        if kind == "reinforced":
            return cls.reinforced(data["betas"])
        if kind == "custom":
            return cls.custom(data["table"])
        if kind in ("free", "saw"):
            return cls(kind)
        return cls(kind, beta=float(data.get("beta", 0.0)))

    def to_text(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def from_text(cls, text: str) -> "Potential":
        return cls.from_dict(yaml.safe_load(text))

    @property
    def label(self) -> str:
        if self.kind in ("free", "saw"):
            return self.kind
        if self.kind == "reinforced":
            return "reinforced(" + ",".join(f"{b:g}" for b in self.betas) + ")"
        if self.kind == "custom":
            return "custom(" + ",".join(f"{b:g}" for b in self.table) + ")"
        return f"{self.kind}({self.beta:g})"


def parse_model(spec: str) -> Potential:
    """Parse a compact model string such as ``saw``, ``sausage:1.0``,
    ``domb_joyce:0.5``, ``reinforced:1,0.5,0.25``, ``custom:0,1,2`` or
    ``annealed:bernoulli:0.5:1.0[:beta]``."""
    name, _, rest = spec.partition(":")
    name = name.strip().lower().replace("-", "_")
    if name in ("free", "srw", "saw"):
        return Potential("free" if name == "srw" else name)
    if name in ("domb_joyce", "sausage", "two_color"):
        return Potential(name, beta=float(rest or 0.0))
    if name == "reinforced":
        return Potential.reinforced(float(v) for v in rest.split(","))
    if name == "custom":
        return Potential.custom(float(v) for v in rest.split(","))
    if name == "annealed":
        parts = rest.split(":")
        kind = parts[0]
        if kind == "bernoulli":
            dist = VDistribution("bernoulli", p=float(parts[1]), b=float(parts[2]))
            beta = float(parts[3]) if len(parts) > 3 else 1.0
        elif kind == "uniform":
            dist = VDistribution("uniform", b=float(parts[1]))
            beta = float(parts[2]) if len(parts) > 2 else 1.0
        elif kind == "point":
            dist = VDistribution("point", b=float(parts[1]))
            beta = float(parts[2]) if len(parts) > 2 else 1.0
        else:
            raise ValueError(f"unknown annealed law {kind!r}")
        return Potential.annealed(dist, beta)
    raise ValueError(f"unknown model {spec!r}")


def classify_potential(pot: Potential, ell_max: int = 64) -> str:
    """``repulsive`` (superadditive), ``attractive`` (subadditive) or ``neither``.

    Linear potentials satisfy both inequalities; the tie is broken by the
    kind's nominal class (``repulsive`` when it has none).
    """
    if ell_max < 2:
        raise ValueError("ell_max must be at least 2")
    ph = pot.phi_array(ell_max)
    sup = sub = True
    for total in range(2, ell_max + 1):
        for l1 in range(1, total // 2 + 1):
            lhs = ph[total]
            rhs = ph[l1] + ph[total - l1]
            if math.isinf(lhs) and math.isinf(rhs):
                continue
            tol = 1e-12 * max(1.0, abs(rhs)) if not math.isinf(rhs) else 0.0
            if lhs < rhs - tol:
                sup = False
            if lhs > rhs + tol:
                sub = False
        if not (sup or sub):
            return "neither"
    if sup and sub:
        return NOMINAL_CLASS.get(pot.kind) or "repulsive"
    return "repulsive" if sup else "attractive"


# ---------------------------------------------------------------------------
# energies and weights
# ---------------------------------------------------------------------------

def interaction_energy(path, pot: Potential) -> float:
    total = 0.0
    for ell in local_times(path).values():
        val = pot.phi(ell)
        if math.isinf(val):
            return INF
        total += val
    return total


def log_path_weight(path, pot: Potential, lam: float = 0.0, force=None) -> float:
    """``-Phi - lam |path| + <F, D>``; ``-inf`` for forbidden paths."""
    arr = as_path(path)
    energy = interaction_energy(arr, pot)
    if math.isinf(energy):
        return -INF
    steps = arr.shape[0] - 1
    tilt = 0.0
    if force is not None:
        tilt = float(np.dot(np.asarray(force, float).reshape(-1), (arr[-1] - arr[0]).astype(float)))
    return -energy - lam * steps + tilt


def path_weight(path, pot: Potential, lam: float = 0.0, force=None) -> float:
    return math.exp(log_path_weight(path, pot, lam, force))


# ---------------------------------------------------------------------------
# path line format
# ---------------------------------------------------------------------------

def step_letters(path) -> list[str]:
    """Steps as signed axis labels ``+1, -1, +2, ...``."""
    arr = as_path(path)
    out = []
    for delta in np.diff(arr, axis=0):
        axis = int(np.flatnonzero(delta)[0])
        out.append(("+" if delta[axis] > 0 else "-") + str(axis + 1))
    return out


def format_path_line(path) -> str:
    return ",".join(step_letters(path))


def parse_path_line(line: str, d: int) -> np.ndarray:
    line = line.strip()
    if not line:
        return np.zeros((1, d), dtype=np.int64)
    idx = []
    for tok in line.split(","):
        tok = tok.strip().replace("−", "-")
        sign, axis = tok[0], int(tok[1:])
        if sign not in "+-" or not 1 <= axis <= d:
            raise ValueError(f"bad step token {tok!r} for d={d}")
        idx.append(2 * (axis - 1) + (sign == "-"))
    return path_from_steps(idx, d)


def write_paths(paths: Iterable, fh) -> None:
    for p in paths:
        fh.write(format_path_line(p) + "\n")


def read_paths(fh, d: int) -> list[np.ndarray]:
    return [parse_path_line(line, d) for line in fh if line.strip() or line == "\n"]
