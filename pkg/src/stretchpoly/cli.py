"""Command line entry point: ``stretchpoly <subcommand>``.

Exit codes: 0 success, 2 configuration error, 3 some sweep cells failed.
Outputs go under ``--out`` (default ``$STRETCHPOLY_OUT`` or
``./stretchpoly_out``).
"""

from __future__ import annotations

import csv
import json
import sys
from functools import wraps
from pathlib import Path

import click
import numpy as np

from . import harness as H
from .enumeration import EnumerationCapExceeded

EXIT_CONFIG = 2
EXIT_PARTIAL = 3


def _floats(text: str | None, d: int | None = None, name: str = "value") -> np.ndarray | None:
    if text is None:
        return None
    try:
        v = np.array([float(t) for t in str(text).split(",") if t.strip() != ""])
    except ValueError:
        raise H.ConfigError(f"--{name} must be comma-separated numbers, got {text!r}") from None
    if d is not None and len(v) != d:
        raise H.ConfigError(f"--{name} has {len(v)} components, expected {d}")
    return v


def _ints(text: str, name: str) -> list[int]:
    try:
        return [int(t) for t in str(text).split(",") if t.strip() != ""]
    except ValueError:
        raise H.ConfigError(f"--{name} must be comma-separated integers, got {text!r}") from None


def _model(spec: str):
    from .lattice import parse_model
    try:
        return parse_model(spec)
    except ValueError as exc:
        raise H.ConfigError(str(exc)) from None


def guarded(fn):
    """Map configuration problems to exit code 2."""
    @wraps(fn)
    def inner(*a, **kw):
        try:
            return fn(*a, **kw)
        except (H.ConfigError, EnumerationCapExceeded, ValueError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
    return inner


def _out_dir(ctx, sub: str) -> Path:
    p = H.output_root(ctx.obj["out"]) / sub
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


@click.group()
@click.option("--out", default=None, help="Output root (default $STRETCHPOLY_OUT or ./stretchpoly_out).")
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--workers", default=1, type=int, show_default=True)
@click.pass_context
def main(ctx, out, seed, workers):
    """Stretched lattice polymers: enumeration, sampling, renewal and disorder tools."""
    ctx.ensure_object(dict)
    if workers < 1:
        click.echo("error: --workers must be >= 1", err=True)
        sys.exit(EXIT_CONFIG)
    ctx.obj.update(out=out, seed=seed, workers=workers)


@main.command("enumerate")
@click.option("--model", required=True, help="Model string, e.g. saw, sausage:1.0.")
@click.option("--dim", default=2, type=int, show_default=True)
@click.option("--n", "n_max", required=True, type=int)
@click.option("--force", default=None, help="Comma-separated force components.")
@click.option("--lambda", "lam", default=0.0, type=float, show_default=True)
@click.option("--endpoint", default=None, help="Fixed endpoint x (comma-separated).")
@click.option("--cap", default=None, type=int, help="Override the enumeration cap.")
@click.pass_context
@guarded
def enumerate_cmd(ctx, model, dim, n_max, force, lam, endpoint, cap):
    """Exact partition functions Z_n (or Z_n(x)) for n <= N."""
    from .enumeration import enumeration_table, free_energy_bracket
    pot = _model(model)
    F = _floats(force, dim, "force")
    x = _floats(endpoint, dim, "endpoint")
    tab = enumeration_table(pot, dim, n_max, cap)
    rows = []
    for k in range(n_max + 1):
        if x is None:
            rows.append([k, tab.log_Z(k, F, lam)])
        else:
            rows.append([k, *x.astype(int), tab.log_Z_fixed(k, x.astype(int), lam, F)])
    br = free_energy_bracket(pot, n_max, dim, cap)
    out = _out_dir(ctx, "enumerate")
    header = ["n", "log_Z"] if x is None else ["n", *[f"x{i + 1}" for i in range(dim)], "log_Z"]
    _write_csv(out / "partition.csv", header, rows)
    with open(out / "bracket.json", "w") as fh:
        json.dump({"lower": br.lower, "upper": br.upper, "classification": br.classification,
                   "n_used": br.n_used}, fh, indent=1)
    click.echo(f"{out / 'partition.csv'}  bracket [{br.lower:.6f}, {br.upper:.6f}] ({br.classification})")


@main.command("wulff")
@click.option("--model", required=True)
@click.option("--dim", default=2, type=int, show_default=True)
@click.option("--lambda", "lam", required=True, type=float)
@click.option("--k-max", default=8, type=int, show_default=True)
@click.option("--directions", default=16, type=int, show_default=True, help="Grid size (d=2).")
@click.option("--cap", default=None, type=int)
@click.pass_context
@guarded
def wulff(ctx, model, dim, lam, k_max, directions, cap):
    """Inverse correlation length on a direction grid and the Wulff boundary."""
    from .wulff import WulffShape, correlation_length, direction_grid
    pot = _model(model)
    dirs = direction_grid(dim, directions if dim == 2 else None)
    cl = correlation_length(pot, lam, dim, k_max, directions=dirs, cap=cap)
    out = _out_dir(ctx, "wulff")
    rows = [[*u, xi, se] for u, xi, se in zip(cl.directions, cl.xi, cl.stderr)]
    _write_csv(out / "xi.csv", [*[f"u{i + 1}" for i in range(dim)], "xi", "stderr"], rows)
    shape = WulffShape.from_correlation_length(cl)
    pts = shape.unit_ball_boundary()
    _write_csv(out / "wulff_boundary.csv", [f"F{i + 1}" for i in range(dim)], pts.tolist())
    click.echo(str(out / "xi.csv"))


@main.command("sample")
@click.option("--model", required=True)
@click.option("--dim", default=2, type=int, show_default=True)
@click.option("--n", required=True, type=int)
@click.option("--force", required=True)
@click.option("--samples", default=10_000, type=int, show_default=True)
@click.option("--chains", default=4, type=int, show_default=True)
@click.option("--burn-in", default=None, type=int)
@click.option("--thinning", default=None, type=int)
@click.option("--moves", default="0.5,0.3,0.2", show_default=True, help="local,regrow,pivot weights.")
@click.option("--keep-paths", default=0, type=int, show_default=True, help="Paths kept per chain.")
@click.pass_context
@guarded
def sample_cmd(ctx, model, dim, n, force, samples, chains, burn_in, thinning, moves, keep_paths):
    """MCMC samples of the stretched polymer endpoint."""
    from .lattice import path_from_steps, write_paths
    from .sampler import SamplerConfig, sample as run
    pot = _model(model)
    F = _floats(force, dim, "force")
    cfg = SamplerConfig(n_samples=samples, burn_in=burn_in, thinning=thinning, moves=tuple(_floats(moves)),
                        seed=ctx.obj["seed"], n_chains=chains, workers=ctx.obj["workers"], keep_paths=keep_paths)
    ss = run(pot, n, F, cfg)
    out = _out_dir(ctx, "sample")
    rows = [[*k, v] for k, v in sorted(ss.tallies().items())]
    _write_csv(out / "tallies.csv", [*[f"x{i + 1}" for i in range(dim)], "count"], rows)
    if keep_paths:
        with open(out / "paths.txt", "w") as fh:
            write_paths([path_from_steps(s, dim) for s in ss.paths], fh)
    summary = {"n": n, "force": F.tolist(), "n_samples": ss.n_samples, "rhat": ss.rhat(),
               "mean_endpoint": ss.endpoints.mean(axis=0).tolist(), "acceptance": ss.acceptance,
               "config": ss.config}
    with open(out / "summary.json", "w") as fh:
        json.dump(H._jsonable(summary), fh, indent=1)
    click.echo(str(out / "tallies.csv"))


@main.command("decompose")
@click.option("--paths", "paths_file", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Path file, one path per line.")
@click.option("--dim", default=2, type=int, show_default=True)
@click.option("--force", required=True)
@click.option("--lambda", "lam", default=None, type=float, help="Default: the free-walk conjugate of F.")
@click.option("--kappa", default=None, type=float)
@click.pass_context
@guarded
def decompose(ctx, paths_file, dim, force, lam, kappa):
    """Cone points and irreducible-piece statistics of sampled paths."""
    from . import oz
    from . import wulff as W
    from .lattice import read_paths
    F = _floats(force, dim, "force")
    lam = W.free_walk_mu(F) if lam is None else lam
    cone = oz.Cone.build(F, lam, lambda x: W.free_walk_xi(lam, x), kappa)
    with open(paths_file) as fh:
        paths = read_paths(fh, dim)
    if not paths:
        raise H.ConfigError("no paths in input")
    st = oz.piece_statistics(paths, cone)
    out = _out_dir(ctx, "decompose")
    vals, cnt = st.length_histogram()
    _write_csv(out / "piece_lengths.csv", ["length", "count"], zip(vals.tolist(), cnt.tolist()))
    lf, df = st.length_fit, st.displacement_fit
    summary = {"n_paths": len(paths), "m": float(st.pieces_per_path.mean()), "kappa": cone.kappa, "lambda": lam,
               "nu1_hat": None if df is None else df.nu2, "nu2_hat": None if lf is None else lf.nu2,
               "nu2_ci": None if lf is None else list(lf.nu2_ci),
               "caps": {"path_length": st.path_length, "max_piece": st.max_length},
               "sector_fraction": st.sector_fraction}
    with open(out / "summary.json", "w") as fh:
        json.dump(H._jsonable(summary), fh, indent=1)
    click.echo(json.dumps(H._jsonable(summary)))


@main.command("sausage1d")
@click.option("--beta", required=True, type=float)
@click.option("--n", "n_list", default="100,200,400", show_default=True)
@click.option("--alpha", "alphas", default="1.5,1.2,1.05", show_default=True)
@click.option("--epsilon", default=0.2, type=float, show_default=True)
@click.pass_context
@guarded
def sausage1d(ctx, beta, n_list, alphas, epsilon):
    """Exact 1d sausage drift and tail probabilities along the critical ray."""
    from .sausage1d import transition_probe
    tp = transition_probe(beta, epsilon, list(_floats(alphas, name="alpha")), _ints(n_list, "n"))
    out = _out_dir(ctx, "sausage1d")
    _write_csv(out / "transition.csv", ["n", "alpha", "tail_prob", "vbar"], tp.rows)
    click.echo(str(out / "transition.csv"))


@main.command("quenched")
@click.option("--dim", default=2, type=int, show_default=True)
@click.option("--lambda", "lam", required=True, type=float)
@click.option("--beta", required=True, type=float)
@click.option("--dist", default="bernoulli:0.5:1.0", show_default=True)
@click.option("--N", "N_list", default="2,4,6,8", show_default=True)
@click.option("--envs", default=16, type=int, show_default=True)
@click.option("--M", "M", default=6, type=int, show_default=True, help="Transverse box half-width.")
@click.pass_context
@guarded
def quenched(ctx, dim, lam, beta, dist, N_list, envs, M):
    """Quenched/annealed ratio Xi_N over environments."""
    from .quenched import ratio_series
    rs = ratio_series(H.parse_distribution(dist), lam, beta, _ints(N_list, "N"), envs, seed=ctx.obj["seed"],
                      d=dim, M=M, workers=ctx.obj["workers"])
    out = _out_dir(ctx, "quenched")
    with open(out / "records.jsonl", "w") as fh:
        for r in rs.records:
            fh.write(json.dumps(H._jsonable(r), sort_keys=True) + "\n")
    _write_csv(out / "xi_traces.csv", ["N", "mean_Xi", "var_Xi"], zip(rs.N_list, rs.mean_Xi, rs.var_Xi))
    click.echo(str(out / "xi_traces.csv"))


@main.command("sweep")
@click.argument("config", type=click.Path(dir_okay=False))
@click.pass_context
def sweep(ctx, config):
    """Run (or resume) a parameter sweep from a YAML config."""
    try:
        cfg = H.load_config(config)
    except H.ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    out = ctx.obj["out"] or cfg.out
    workers = ctx.obj["workers"] if ctx.obj["workers"] > 1 else cfg.workers
    if ctx.obj["seed"]:
        cfg.seed = ctx.obj["seed"]
    res = H.run_sweep(cfg, out=out, workers=workers)
    click.echo(f"{res.out_dir}: {res.executed} executed, {res.skipped} skipped, {len(res.failed)} failed")
    for cell, err in res.failed:
        click.echo(f"failed {cell}: {err.splitlines()[0]}", err=True)
    sys.exit(res.exit_code)


@main.command("plotdata")
@click.option("--kind", required=True, type=str, help=f"One of {', '.join(H.PLOT_KINDS)}.")
@click.option("--from", "src", default=None, help="Sweep directory (default: the output root).")
@click.option("--to", "dest", default=None, help="Write here instead of stdout.")
@click.pass_context
def plotdata(ctx, kind, src, dest):
    """CSV plot tables from sweep records."""
    try:
        text = H.emit_plotdata(H.read_records(src or H.output_root(ctx.obj["out"])), kind)
    except H.ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    if dest:
        Path(dest).write_text(text)
    else:
        click.echo(text, nl=False)


if __name__ == "__main__":  # pragma: no cover
    main()
