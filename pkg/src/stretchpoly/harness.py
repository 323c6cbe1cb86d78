"""Experiment configs, resumable parameter sweeps and plot tables.

A config is a YAML mapping::

    version: 1
    module: phase            # one of CELL_RUNNERS
    model: sausage:1.0       # parse_model syntax
    dim: 2
    seed: 0
    params: {n_list: [20, 40], epsilon: 0.1, samples: 4000, h: 1.0}
    grid: {alpha: [0.5, 1.0, 1.5, 2.0]}

Every combination of ``grid`` values, merged over ``params`` (and over the
top-level ``model``/``dim``), is a cell.  Cells are identified by the
sha256 of their canonical JSON; ``records.jsonl`` holds one record per
finished cell and is appended in grid order, so reruns skip finished cells
and produce the same bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__

CONFIG_VERSION = 1
DEFAULT_OUT = "stretchpoly_out"
OUT_ENV = "STRETCHPOLY_OUT"


class ConfigError(ValueError):
    """Invalid experiment configuration (exit code 2)."""


def output_root(out: str | os.PathLike | None = None) -> Path:
    """``out`` if given, else ``$STRETCHPOLY_OUT``, else ``./stretchpoly_out``."""
    if out:
        return Path(out)
    return Path(os.environ.get(OUT_ENV) or DEFAULT_OUT)


def _canonical(obj):
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return _canonical(obj.tolist())
    if isinstance(obj, float) and obj.is_integer() and abs(obj) < 2 ** 53:
        # 2 and 2.0 describe the same experiment
        return int(obj)
    return obj


def config_hash(obj) -> str:
    text = json.dumps(_canonical(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


# ---------------------------------------------------------------------------
# configs
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    module: str
    model: str | None = None
    dim: int | None = None
    seed: int = 0
    params: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    out: str | None = None
    workers: int = 1
    version: int = CONFIG_VERSION

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        known = {"module", "model", "dim", "seed", "params", "grid", "out", "workers", "version"}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "module" not in data:
            raise ConfigError("config needs a 'module'")
        cfg = cls(**{k: data[k] for k in known if k in data})
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {"version": self.version, "module": self.module, "model": self.model, "dim": self.dim,
                "seed": self.seed, "params": dict(self.params), "grid": dict(self.grid),
                "out": self.out, "workers": self.workers}

    def validate(self) -> None:
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version}")
        if self.module not in CELL_RUNNERS:
            raise ConfigError(f"unknown module {self.module!r}; expected one of {sorted(CELL_RUNNERS)}")
        if not isinstance(self.params, dict) or not isinstance(self.grid, dict):
            raise ConfigError("'params' and 'grid' must be mappings")
        for k, v in self.grid.items():
            if not isinstance(v, list) or not v:
                raise ConfigError(f"grid entry {k!r} must be a non-empty list")
        if int(self.workers) < 1:
            raise ConfigError("workers must be >= 1")
        allowed = CELL_KEYS[self.module]
        for cell in self.cells():
            bad = set(cell) - allowed - {"model", "dim", "seed"}
            if bad:
                raise ConfigError(f"module {self.module!r} does not take {sorted(bad)}")
            missing = CELL_REQUIRED[self.module] - set(k for k, v in cell.items() if v is not None)
            if missing:
                raise ConfigError(f"module {self.module!r} needs {sorted(missing)}")
            if "model" in cell and cell["model"] is not None:
                from .lattice import parse_model
                try:
                    parse_model(str(cell["model"]))
                except ValueError as exc:
                    raise ConfigError(str(exc)) from None

    def cells(self) -> list[dict]:
        base = dict(self.params)
        if self.model is not None:
            base.setdefault("model", self.model)
        if self.dim is not None:
            base.setdefault("dim", self.dim)
        keys = list(self.grid)
        out = []
        for combo in itertools.product(*(self.grid[k] for k in keys)):
            cell = dict(base)
            cell.update(zip(keys, combo))
            out.append(cell)
        return out

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("out")
        d.pop("workers")
        return config_hash(d)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return ExperimentConfig.from_dict(data)


def cell_key(module: str, cell: dict, seed: int) -> str:
    return config_hash({"module": module, "cell": cell, "seed": seed, "version": __version__})


def cell_seed(seed: int, cell: dict) -> int:
    """Per-cell seed, a function of the base seed and the cell parameters only."""
    h = config_hash({"seed": seed, "cell": cell})
    return int(h[:15], 16)


# ---------------------------------------------------------------------------
# cell runners
# ---------------------------------------------------------------------------

def _force(cell: dict, d: int) -> np.ndarray:
    if cell.get("force") is not None:
        F = np.atleast_1d(np.asarray(cell["force"], float))
    else:
        u = np.asarray(cell.get("direction", [1.0] + [0.0] * (d - 1)), float)
        u = u / np.linalg.norm(u) if np.linalg.norm(u) > 0 else u
        F = float(cell.get("alpha", 0.0)) * float(cell.get("h", 1.0)) * u
    if len(F) != d:
        raise ConfigError(f"force has {len(F)} components, dim is {d}")
    return F


def _model(cell):
    from .lattice import parse_model
    return parse_model(str(cell["model"]))


def run_enumerate(cell: dict, seed: int) -> dict:
    from .enumeration import enumeration_table, free_energy_bracket
    pot, d, n = _model(cell), int(cell["dim"]), int(cell["n"])
    F = _force(cell, d)
    lam = float(cell.get("lambda", 0.0))
    tab = enumeration_table(pot, d, n, cell.get("cap"))
    br = free_energy_bracket(pot, n, d, cell.get("cap"))
    return {"log_Z": [tab.log_Z(k, F, lam) for k in range(n + 1)], "bracket": [br.lower, br.upper],
            "classification": br.classification}


def run_wulff(cell: dict, seed: int) -> dict:
    from .wulff import estimate_xi
    pot, d = _model(cell), int(cell["dim"])
    u = np.asarray(cell.get("direction", [1.0] + [0.0] * (d - 1)), float)
    est = estimate_xi(pot, float(cell["lambda"]), u, int(cell.get("k_max", 10)), cap=cell.get("cap"))
    return {"xi": est.xi, "stderr": est.stderr, "method": est.method}


def run_drift(cell: dict, seed: int) -> dict:
    from .wulff import EstimatedModel, drift_and_hessian
    pot, d = _model(cell), int(cell["dim"])
    F = _force(cell, d)
    if pot.kind == "free":
        v = np.sinh(F) / np.cosh(F).sum()
        return {"force": F.tolist(), "vbar": v.tolist(), "method": "exact"}
    model = EstimatedModel(pot, d, int(cell.get("k_max", 12)))
    cm = drift_and_hessian(model, F)
    return {"force": F.tolist(), "vbar": np.asarray(cm.vbar).tolist(), "method": "estimated"}


def run_sample(cell: dict, seed: int) -> dict:
    from .sampler import SamplerConfig, sample, sample_tilted_free
    pot, d, n = _model(cell), int(cell["dim"]), int(cell["n"])
    F = _force(cell, d)
    ns = int(cell.get("samples", 10_000))
    if pot.kind == "free" and cell.get("direct", True):
        ss = sample_tilted_free(n, F, ns, seed)
    else:
        ss = sample(pot, n, F, SamplerConfig(n_samples=ns, seed=seed, workers=1,
                                            n_chains=int(cell.get("chains", 4))))
    mean = ss.endpoints.mean(axis=0)
    return {"force": F.tolist(), "vbar": (mean / n).tolist(), "n_samples": ss.n_samples,
            "rhat": float(ss.rhat()) if ss.method == "mcmc" else 1.0,
            "tallies": [[list(k), v] for k, v in sorted(ss.tallies().items())]}


def run_phase(cell: dict, seed: int) -> dict:
    from .sampler import SamplerConfig, phase_probe
    pot, d = _model(cell), int(cell["dim"])
    F = _force(cell, d)
    cfg = SamplerConfig(n_samples=int(cell.get("samples", 4000)), seed=seed, workers=1,
                        n_chains=int(cell.get("chains", 4)))
    pv = phase_probe(pot, [int(v) for v in cell["n_list"]], F, float(cell.get("epsilon", 0.1)), cfg)
    return {"force": F.tolist(), "force_norm": float(np.linalg.norm(F)), "verdict": pv.verdict,
            "p_hat": pv.p_hat, "ci": [list(c) for c in pv.ci], "beta": float(pot.beta)}


def run_decompose(cell: dict, seed: int) -> dict:
    from . import oz
    from . import wulff as W
    from .lattice import unit_steps
    from .sampler import SamplerConfig, sample
    pot, d, n = _model(cell), int(cell["dim"]), int(cell["n"])
    F = _force(cell, d)
    ns = int(cell.get("samples", 400))
    lam = W.free_walk_mu(F)
    cone = oz.Cone.build(F, lam, lambda x: W.free_walk_xi(lam, x))
    if pot.kind == "free":
        rng = np.random.default_rng(seed)
        q = np.exp(unit_steps(d) @ F)
        q /= q.sum()
        steps = [rng.choice(2 * d, size=n, p=q) for _ in range(ns)]
        paths = oz.steps_to_paths(steps, d)
    else:
        chains = min(int(cell.get("chains", 4)), ns)
        # the ring keeps the last keep_paths samples of each chain
        ss = sample(pot, n, F, SamplerConfig(n_samples=ns, seed=seed, keep_paths=max(1, ns // chains), workers=1,
                                            n_chains=chains))
        paths = oz.steps_to_paths(ss.paths, d)
    st = oz.piece_statistics(paths, cone)
    vals, cnt = st.length_histogram()
    lf, df = st.length_fit, st.displacement_fit
    return {"force": F.tolist(), "m": float(st.pieces_per_path.mean()),
            "nu1": None if df is None else df.nu2, "nu2": None if lf is None else lf.nu2,
            "nu2_ci": None if lf is None else list(lf.nu2_ci), "max_length": int(st.max_length),
            "caps": {"path_length": n, "max_piece": int(st.max_length)},
            "histogram": [[int(v), int(c)] for v, c in zip(vals, cnt)]}


def run_sausage1d(cell: dict, seed: int) -> dict:
    from .sausage1d import transition_probe
    n_list = [int(v) for v in (cell["n_list"] if cell.get("n_list") is not None else [cell["n"]])]
    alphas = cell["alpha"] if isinstance(cell["alpha"], list) else [cell["alpha"]]
    tp = transition_probe(float(cell["beta"]), float(cell.get("epsilon", 0.2)), alphas, n_list)
    return {"rows": [list(r) for r in tp.rows], "slopes": {str(k): v for k, v in tp.slopes.items()}}


def run_quenched(cell: dict, seed: int) -> dict:
    from .quenched import ratio_series
    dist = parse_distribution(cell.get("dist", "bernoulli:0.5:1.0"))
    N_list = [int(v) for v in cell["N_list"]]
    rs = ratio_series(dist, float(cell["lambda"]), float(cell["beta"]), N_list, int(cell.get("envs", 16)),
                      seed=seed, d=int(cell["dim"]), M=int(cell.get("M", 6)))
    return {"N": N_list, "mean_Xi": rs.mean_Xi.tolist(), "var_Xi": rs.var_Xi.tolist(),
            "flury_gap": rs.flury_gap().tolist(), "max_truncation": rs.max_truncation}


def parse_distribution(spec):
    """``bernoulli:p:b``, ``uniform:b`` or ``point:b`` (or a mapping for VDistribution)."""
    from .lattice import VDistribution
    if isinstance(spec, dict):
        return VDistribution.from_dict(spec)
    kind, *rest = str(spec).split(":")
    try:
        if kind == "bernoulli":
            return VDistribution("bernoulli", p=float(rest[0]), b=float(rest[1]))
        if kind == "uniform":
            return VDistribution("uniform", b=float(rest[0]))
        if kind == "point":
            return VDistribution("point", b=float(rest[0]) if rest else 0.0)
    except (IndexError, ValueError) as exc:
        raise ConfigError(f"bad distribution {spec!r}: {exc}") from None
    raise ConfigError(f"unknown distribution {spec!r}")


CELL_RUNNERS = {
    "enumerate": run_enumerate,
    "wulff": run_wulff,
    "drift": run_drift,
    "sample": run_sample,
    "phase": run_phase,
    "decompose": run_decompose,
    "sausage1d": run_sausage1d,
    "quenched": run_quenched,
}

_FORCE_KEYS = {"force", "alpha", "h", "direction"}
CELL_KEYS = {
    "enumerate": {"n", "lambda", "cap"} | _FORCE_KEYS,
    "wulff": {"lambda", "direction", "k_max", "cap"},
    "drift": {"k_max"} | _FORCE_KEYS,
    "sample": {"n", "samples", "chains", "direct"} | _FORCE_KEYS,
    "phase": {"n_list", "epsilon", "samples", "chains"} | _FORCE_KEYS,
    "decompose": {"n", "samples", "chains"} | _FORCE_KEYS,
    "sausage1d": {"beta", "n", "n_list", "alpha", "epsilon"},
    "quenched": {"lambda", "beta", "dist", "N_list", "envs", "M"},
}
CELL_REQUIRED = {
    "enumerate": {"model", "dim", "n"},
    "wulff": {"model", "dim", "lambda"},
    "drift": {"model", "dim"},
    "sample": {"model", "dim", "n"},
    "phase": {"model", "dim", "n_list"},
    "decompose": {"model", "dim", "n"},
    "sausage1d": {"beta", "alpha"},
    "quenched": {"dim", "lambda", "beta", "N_list"},
}


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def _worker_init():
    try:
        import numba
        numba.set_num_threads(1)
    except Exception:  # pragma: no cover - numba always present in practice
        pass


def _run_cell(module: str, cell: dict, seed: int):
    t0 = time.perf_counter()
    try:
        out = CELL_RUNNERS[module](cell, seed)
        return True, _jsonable(out), time.perf_counter() - t0
    except Exception as exc:  # recorded per cell, the sweep continues
        return False, f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}", time.perf_counter() - t0


@dataclass
class SweepResult:
    out_dir: Path
    executed: int
    skipped: int
    failed: list
    records: list

    @property
    def exit_code(self) -> int:
        return 3 if self.failed else 0


def read_records(out_dir) -> list[dict]:
    p = Path(out_dir) / "records.jsonl"
    if not p.exists():
        return []
    with open(p) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def run_sweep(cfg: ExperimentConfig, out: str | os.PathLike | None = None, workers: int | None = None) -> SweepResult:
    """Run every unfinished cell of ``cfg`` and append their records."""
    out_dir = output_root(out or cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = int(workers or cfg.workers)
    with open(out_dir / "config.yaml", "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)
    done = {r["hash"] for r in read_records(out_dir)}
    todo = []
    for i, cell in enumerate(cfg.cells()):
        key = cell_key(cfg.module, cell, cfg.seed)
        if key not in done:
            todo.append((i, key, cell, cell_seed(cfg.seed, cell)))
    results = {}
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init) as ex:
            futs = {ex.submit(_run_cell, cfg.module, cell, s): (i, key, cell, s) for i, key, cell, s in todo}
            for fut in as_completed(futs):
                results[futs[fut][0]] = (futs[fut], fut.result())
    else:
        for item in todo:
            results[item[0]] = (item, _run_cell(cfg.module, item[2], item[3]))
    failed, new = [], []
    # a single appender writes in grid order
    with open(out_dir / "records.jsonl", "a") as rec, open(out_dir / "timings.jsonl", "a") as tim, \
            open(out_dir / "failures.jsonl", "a") as fail:
        for i in sorted(results):
            (idx, key, cell, s), (ok, payload, wall) = results[i]
            if ok:
                r = {"hash": key, "config_hash": cfg.hash(), "module": cfg.module, "params": _jsonable(cell),
                     "seed": s, "outputs": payload, "artifacts": [], "version": __version__}
                rec.write(json.dumps(r, sort_keys=True) + "\n")
                new.append(r)
            else:
                fail.write(json.dumps({"hash": key, "params": _jsonable(cell), "error": payload}, sort_keys=True) + "\n")
                failed.append((cell, payload))
            tim.write(json.dumps({"hash": key, "wall_time": wall}) + "\n")
    return SweepResult(out_dir, len(todo), len(done), failed, read_records(out_dir))


# ---------------------------------------------------------------------------
# plot tables
# ---------------------------------------------------------------------------

PLOT_KINDS = ("force_extension", "phase_diagram", "xi_lambda", "piece_lengths", "xi_traces")


def _table(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def emit_plotdata(records: list[dict], kind: str) -> str:
    """CSV text for one of ``PLOT_KINDS`` from sweep records."""
    if kind not in PLOT_KINDS:
        raise ConfigError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")
    if kind == "force_extension":
        rs = [r for r in records if r["module"] in ("drift", "sample")]
        d = max((len(r["outputs"]["force"]) for r in rs), default=1)
        header = [f"F{i + 1}" for i in range(d)] + [f"v{i + 1}" for i in range(d)] + ["model"]
        rows = [r["outputs"]["force"] + r["outputs"]["vbar"] + [r["params"].get("model")] for r in rs]
        return _table(header, rows)
    if kind == "phase_diagram":
        rs = [r for r in records if r["module"] == "phase"]
        header = ["model", "beta", "force_norm", "alpha", "verdict"]
        rows = [[r["params"].get("model"), r["outputs"]["beta"], r["outputs"]["force_norm"],
                 r["params"].get("alpha", ""), r["outputs"]["verdict"]] for r in rs]
        return _table(header, rows)
    if kind == "xi_lambda":
        rs = [r for r in records if r["module"] == "wulff"]
        header = ["model", "lambda", "xi", "stderr"]
        rows = [[r["params"].get("model"), float(r["params"]["lambda"]), r["outputs"]["xi"], r["outputs"]["stderr"]]
                for r in rs]
        return _table(header, rows)
    if kind == "piece_lengths":
        rs = [r for r in records if r["module"] == "decompose"]
        header = ["cell", "length", "count"]
        rows = [[r["hash"][:12], L, c] for r in rs for L, c in r["outputs"]["histogram"]]
        return _table(header, rows)
    rs = [r for r in records if r["module"] == "quenched"]
    header = ["cell", "beta", "N", "mean_Xi", "var_Xi"]
    rows = [[r["hash"][:12], float(r["params"]["beta"]), N, m, v] for r in rs
            for N, m, v in zip(r["outputs"]["N"], r["outputs"]["mean_Xi"], r["outputs"]["var_Xi"])]
    return _table(header, rows)
