import json
import math

import numpy as np
import pytest
import yaml
from click.testing import CliRunner
from hypothesis import given, settings
from hypothesis import strategies as st

from stretchpoly import harness as H
from stretchpoly.cli import main


def write_cfg(path, **kw):
    path.write_text(yaml.safe_dump(kw))
    return str(path)


DRIFT_CFG = dict(version=1, module="drift", model="free", dim=2, seed=3,
                 params={"h": 1.0, "direction": [1, 0]}, grid={"alpha": [0.0, 0.25, 0.5, 1.0, 2.0]})


def test_config_hash_ignores_order_and_int_float():
    a = {"module": "drift", "params": {"h": 1.0, "alpha": 2}, "seed": 0}
    b = {"seed": 0, "params": {"alpha": 2.0, "h": 1}, "module": "drift"}
    assert H.config_hash(a) == H.config_hash(b)
    assert H.config_hash(a) != H.config_hash({**a, "seed": 1})


@settings(max_examples=30, deadline=None)
@given(st.dictionaries(st.sampled_from(list("abcdefg")), st.integers(-5, 5), min_size=1))
def test_config_hash_permutation_invariant(d):
    rev = dict(reversed(list(d.items())))
    assert H.config_hash(d) == H.config_hash(rev)


def test_cells_cartesian():
    cfg = H.ExperimentConfig(module="drift", model="free", dim=2, grid={"alpha": [1, 2], "h": [0.5, 1, 2]})
    cells = cfg.cells()
    assert len(cells) == 6 and all(c["model"] == "free" for c in cells)


@pytest.mark.parametrize("bad", [
    {"module": "nope"},
    {"module": "drift", "model": "free", "dim": 2, "grid": {"alpha": []}},
    {"module": "drift", "model": "free", "dim": 2, "colour": 1},
    {"module": "drift", "model": "free", "dim": 2, "params": {"bogus": 1}},
    {"module": "drift", "model": "wormlike", "dim": 2},
    {"module": "phase", "model": "free", "dim": 2},
])
def test_config_errors_exit_2(tmp_path, bad):
    r = CliRunner().invoke(main, ["--out", str(tmp_path / "o"), "sweep", write_cfg(tmp_path / "c.yaml", **bad)])
    assert r.exit_code == 2, r.output


def test_missing_config_exit_2(tmp_path):
    assert CliRunner().invoke(main, ["sweep", str(tmp_path / "none.yaml")]).exit_code == 2


def test_sweep_resume_and_idempotence(tmp_path):
    out = tmp_path / "o"
    cfg = write_cfg(tmp_path / "c.yaml", **DRIFT_CFG)
    r = CliRunner().invoke(main, ["--out", str(out), "sweep", cfg])
    assert r.exit_code == 0, r.output
    assert "5 executed, 0 skipped" in r.output
    first = (out / "records.jsonl").read_bytes()
    r = CliRunner().invoke(main, ["--out", str(out), "sweep", cfg])
    assert r.exit_code == 0 and "0 executed, 5 skipped" in r.output
    assert (out / "records.jsonl").read_bytes() == first


def test_sweep_extends_grid(tmp_path):
    out = tmp_path / "o"
    H.run_sweep(H.ExperimentConfig.from_dict({**DRIFT_CFG, "grid": {"alpha": [0.5, 1.0]}}), out=out)
    res = H.run_sweep(H.ExperimentConfig.from_dict(DRIFT_CFG), out=out)
    assert res.executed == 3 and res.skipped == 2 and len(res.records) == 5


def test_records_bitwise_reproducible_and_parallel(tmp_path):
    cfg = {**DRIFT_CFG, "module": "sample", "params": {"n": 20, "samples": 500, "h": 1.0}}
    a = H.run_sweep(H.ExperimentConfig.from_dict(cfg), out=tmp_path / "a", workers=1)
    b = H.run_sweep(H.ExperimentConfig.from_dict(cfg), out=tmp_path / "b", workers=3)
    assert a.exit_code == b.exit_code == 0
    assert (tmp_path / "a" / "records.jsonl").read_bytes() == (tmp_path / "b" / "records.jsonl").read_bytes()


def test_record_roundtrip(tmp_path):
    res = H.run_sweep(H.ExperimentConfig.from_dict(DRIFT_CFG), out=tmp_path)
    for line in (tmp_path / "records.jsonl").read_text().splitlines():
        rec = json.loads(line)
        assert json.dumps(rec, sort_keys=True) == line
    assert res.records == H.read_records(tmp_path)
    assert all(r["version"] and r["config_hash"] for r in res.records)


def test_partial_failure_exit_3(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml", version=1, module="enumerate", model="saw", dim=2,
                    params={"force": [0.2, 0.0]}, grid={"n": [3, 40, 4]})
    r = CliRunner().invoke(main, ["--out", str(tmp_path / "o"), "sweep", cfg])
    assert r.exit_code == 3
    recs = H.read_records(tmp_path / "o")
    assert [rec["params"]["n"] for rec in recs] == [3, 4]
    fails = (tmp_path / "o" / "failures.jsonl").read_text().splitlines()
    assert len(fails) == 1 and "EnumerationCapExceeded" in fails[0]


def test_env_var_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv(H.OUT_ENV, str(tmp_path / "env_root"))
    cfg = write_cfg(tmp_path / "c.yaml", **{**DRIFT_CFG, "grid": {"alpha": [1.0]}})
    r = CliRunner().invoke(main, ["sweep", cfg])
    assert r.exit_code == 0
    assert (tmp_path / "env_root" / "records.jsonl").exists()


def test_force_extension_matches_exact_drift(tmp_path):
    res = H.run_sweep(H.ExperimentConfig.from_dict(DRIFT_CFG), out=tmp_path)
    text = H.emit_plotdata(res.records, "force_extension")
    lines = text.strip().splitlines()
    assert lines[0] == "F1,F2,v1,v2,model"
    for line in lines[1:]:
        F1, F2, v1, v2, _ = line.split(",")
        F = np.array([float(F1), float(F2)])
        exact = np.sinh(F) / np.cosh(F).sum()
        assert float(v1) == exact[0] and float(v2) == exact[1]


@pytest.mark.parametrize("kind", H.PLOT_KINDS)
def test_empty_plotdata_header_only(kind):
    text = H.emit_plotdata([], kind)
    assert text.count("\n") == 1 and "," in text


def test_unknown_plot_kind(tmp_path):
    r = CliRunner().invoke(main, ["--out", str(tmp_path), "plotdata", "--kind", "pie"])
    assert r.exit_code == 2


def test_phase_diagram_free_all_stretched(tmp_path):
    cfg = {"version": 1, "module": "phase", "model": "sausage:0", "dim": 2, "seed": 1,
           "params": {"n_list": [20, 40], "epsilon": 0.1, "samples": 1500, "h": 1.0},
           "grid": {"alpha": [0.5, 1.0, 2.0]}}
    res = H.run_sweep(H.ExperimentConfig.from_dict(cfg), out=tmp_path)
    assert res.exit_code == 0
    r = CliRunner().invoke(main, ["--out", str(tmp_path), "plotdata", "--kind", "phase_diagram"])
    assert r.exit_code == 0
    rows = r.output.strip().splitlines()
    assert rows[0] == "model,beta,force_norm,alpha,verdict"
    assert len(rows) == 4 and all(row.endswith("stretched-consistent") for row in rows[1:])


def test_xi_lambda_and_traces_tables(tmp_path):
    H.run_sweep(H.ExperimentConfig.from_dict(
        {"version": 1, "module": "wulff", "model": "free", "dim": 1, "grid": {"lambda": [1.0, 1.5]},
         "params": {"k_max": 8}}), out=tmp_path / "w")
    text = H.emit_plotdata(H.read_records(tmp_path / "w"), "xi_lambda").strip().splitlines()
    from stretchpoly.wulff import killed_walk_xi_1d
    for line in text[1:]:
        _, lam, xi, _ = line.split(",")
        assert math.isclose(float(xi), killed_walk_xi_1d(float(lam)), rel_tol=1e-9)
    H.run_sweep(H.ExperimentConfig.from_dict(
        {"version": 1, "module": "quenched", "dim": 2, "grid": {"beta": [0.0]},
         "params": {"lambda": 2.0, "N_list": [1, 2], "envs": 8, "M": 3}}), out=tmp_path / "q")
    tr = H.emit_plotdata(H.read_records(tmp_path / "q"), "xi_traces").strip().splitlines()
    assert len(tr) == 3 and all(float(line.split(",")[3]) == 1.0 for line in tr[1:])


def test_enumerate_command_free_closed_form(tmp_path):
    r = CliRunner().invoke(main, ["--out", str(tmp_path), "enumerate", "--model", "free", "--dim", "2",
                                  "--n", "6", "--force", "0.3,-0.2"])
    assert r.exit_code == 0, r.output
    lines = (tmp_path / "enumerate" / "partition.csv").read_text().splitlines()
    assert lines[0] == "n,log_Z"
    c = 2 * (math.cosh(0.3) + math.cosh(0.2))
    for line in lines[1:]:
        n, lz = line.split(",")
        assert math.isclose(float(lz), int(n) * math.log(c), rel_tol=1e-12, abs_tol=1e-12)


def test_enumerate_command_errors(tmp_path):
    run = CliRunner().invoke
    assert run(main, ["--out", str(tmp_path), "enumerate", "--model", "saw", "--n", "99"]).exit_code == 2
    assert run(main, ["--out", str(tmp_path), "enumerate", "--model", "saw", "--n", "3",
                      "--force", "1,2,3"]).exit_code == 2


def test_sample_and_decompose_commands(tmp_path):
    run = CliRunner().invoke
    r = run(main, ["--out", str(tmp_path), "--seed", "4", "sample", "--model", "saw", "--n", "30",
                   "--force", "1.0,0", "--samples", "400", "--chains", "2", "--keep-paths", "200"])
    assert r.exit_code == 0, r.output
    paths = tmp_path / "sample" / "paths.txt"
    assert len(paths.read_text().splitlines()) == 400
    r = run(main, ["--out", str(tmp_path), "decompose", "--paths", str(paths), "--force", "1.0,0"])
    assert r.exit_code == 0, r.output
    summary = json.loads((tmp_path / "decompose" / "summary.json").read_text())
    assert summary["m"] >= 1 and summary["nu2_hat"] > 0
    assert summary["caps"]["path_length"] == 30


def test_sausage1d_and_quenched_commands(tmp_path):
    run = CliRunner().invoke
    r = run(main, ["--out", str(tmp_path), "sausage1d", "--beta", "1", "--n", "20,40", "--alpha", "1.5"])
    assert r.exit_code == 0, r.output
    rows = (tmp_path / "sausage1d" / "transition.csv").read_text().splitlines()
    assert rows[0] == "n,alpha,tail_prob,vbar" and len(rows) == 3
    r = run(main, ["--out", str(tmp_path), "quenched", "--lambda", "2", "--beta", "0.2", "--N", "1,2",
                   "--envs", "8", "--M", "3"])
    assert r.exit_code == 0, r.output
    recs = (tmp_path / "quenched" / "records.jsonl").read_text().splitlines()
    assert len(recs) == 16
    r = run(main, ["--out", str(tmp_path), "quenched", "--lambda", "0.5", "--beta", "0.2"])
    assert r.exit_code == 2


def test_wulff_command(tmp_path):
    r = CliRunner().invoke(main, ["--out", str(tmp_path), "wulff", "--model", "free", "--dim", "2",
                                  "--lambda", "1.8", "--k-max", "6", "--directions", "8"])
    assert r.exit_code == 0, r.output
    assert len((tmp_path / "wulff" / "xi.csv").read_text().splitlines()) == 9
    assert (tmp_path / "wulff" / "wulff_boundary.csv").exists()


def test_shipped_phase_config_sausage(tmp_path):
    from pathlib import Path
    cfg = H.load_config(Path(__file__).parent.parent / "configs" / "phase_sausage2d.yaml")
    res = H.run_sweep(cfg, out=tmp_path)
    assert res.exit_code == 0 and res.executed == 4
    rows = H.emit_plotdata(res.records, "phase_diagram").strip().splitlines()
    assert rows[0].endswith(",verdict") and len(rows) == 5
    verdicts = [r.split(",")[-1] for r in rows[1:]]
    assert set(verdicts) <= {"stretched-consistent", "collapsed-consistent", "inconclusive"}
    # the largest force on the ray is stretched
    assert verdicts[-1] == "stretched-consistent"


def test_shipped_configs_validate():
    from pathlib import Path
    for p in sorted((Path(__file__).parent.parent / "configs").glob("*.yaml")):
        assert H.load_config(p).cells()
