import csv
import json

import numpy as np
import pytest

from bhroute import bundled_topology
from bhroute.cli import main
from bhroute.errors import SchemaError
from bhroute.io import fmt, read_policy, write_csv
from bhroute.model import load_network
from bhroute.optimizer import bh_optimize
from bhroute.traveltime import SolverConfig, evaluate

from conftest import fig2_splits


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run(argv, capsys=None):
    code = main([str(a) for a in argv])
    out = capsys.readouterr() if capsys else None
    return code, out


def fig2_variant(tmp_path, **mus):
    doc = json.loads(bundled_topology("fig2").read_text())
    for q in doc["queues"]:
        q["mu_max"] = mus.get(q["id"], q["mu_max"])
    path = tmp_path / "variant.topo"
    path.write_text(json.dumps(doc))
    return path


# ---------------------------------------------------------------------------
# io helpers


def test_full_precision_floats(tmp_path):
    assert fmt(0.1) == "0.10000000000000001"
    assert float(fmt(1 / 3)) == 1 / 3
    assert fmt(None) == "" and fmt(3) == "3"
    path = write_csv(tmp_path / "x.csv", ["a", "b"], [(np.float64(np.pi), "z")])
    assert float(read_rows(path)[0]["a"]) == np.pi


def test_read_policy_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(SchemaError):
        read_policy(bad)
    bad.write_text("{}")
    with pytest.raises(SchemaError):
        read_policy(bad)


# ---------------------------------------------------------------------------
# optimize


@pytest.mark.parametrize("engine", ["mm1", "md1"])
def test_optimize_writes_outputs(tmp_path, capsys, engine):
    code, out = run(["optimize", "fig2", "--engine", engine, "--out-dir", tmp_path], capsys)
    assert code == 0
    assert "objective" in out.out
    manifest = json.loads((tmp_path / "run_manifest.json").read_text())
    assert manifest["command"] == "optimize"
    assert set(manifest["outputs"]) == {"policy.json", "trace.csv", "run_manifest.json"}
    for name in manifest["outputs"]:
        assert (tmp_path / name).exists()
    assert manifest["config"]["solver"]["step"] == pytest.approx(0.0025)

    policy = read_policy(tmp_path / "policy.json")
    assert policy["engine"] == engine
    assert policy["initial_splits"]["2"]["q2-q4-q5"] == pytest.approx(0.3125)
    assert {(a["from"], a["to"]) for a in policy["alphas"]} >= {("q2", "q3"), ("q2", "q4")}
    trace = read_rows(tmp_path / "trace.csv")
    assert [int(r["iteration"]) for r in trace] == list(range(1, len(trace) + 1))


def test_optimize_single_path_notice(tmp_path, capsys):
    code, out = run(["optimize", "single_path", "--out-dir", tmp_path], capsys)
    assert code == 0
    assert "no degrees of freedom" in out.out


def test_optimize_matches_library(tmp_path):
    assert run(["optimize", "fig2", "--out-dir", tmp_path])[0] == 0
    policy, _ = bh_optimize(load_network("fig2"))
    assert read_policy(tmp_path / "policy.json")["objective"] == policy.objective_value


def test_policy_round_trip_through_cdf(tmp_path, capsys):
    assert run(["optimize", "fig2", "--engine", "md1", "--out-dir", tmp_path], capsys)[0] == 0
    expected = read_policy(tmp_path / "policy.json")["objective"]
    code, out = run(["cdf", "fig2", "--policy", tmp_path / "policy.json", "--out-dir", tmp_path / "cdf"], capsys)
    assert code == 0
    flows = [r for r in read_rows(tmp_path / "cdf" / "cdf_summary.csv") if r["kind"] == "flow"]
    assert max(float(r["delta"]) for r in flows) == pytest.approx(expected, abs=1e-9)
    paths = [float(r["delta"]) for r in read_rows(tmp_path / "cdf" / "cdf_summary.csv") if r["flow_id"] == "2" and r["kind"] == "path"]
    assert abs(paths[0] - paths[1]) <= 0.05


def test_policy_starts_a_new_optimisation(tmp_path):
    assert run(["optimize", "fig2", "--out-dir", tmp_path])[0] == 0
    code, _ = run(["optimize", "fig2", "--policy", tmp_path / "policy.json", "--out-dir", tmp_path / "again"])
    assert code == 0
    again = read_policy(tmp_path / "again" / "policy.json")
    assert again["objective"] <= read_policy(tmp_path / "policy.json")["objective"]


# ---------------------------------------------------------------------------
# sweep and cdf


def test_sweep_csv(tmp_path):
    code, _ = run(["sweep", "fig2", "--engine", "both", "--out-dir", tmp_path])
    assert code == 0
    rows = read_rows(tmp_path / "sweep.csv")
    assert len(rows) == 38
    for engine in ("mm1", "md1"):
        obj = np.array([float(r["objective"]) for r in rows if r["engine"] == engine])
        best = int(np.argmin(obj))
        assert 0 < best < 18
        assert all(r["status"] == "stable" for r in rows)


def test_sweep_boundary_points(tmp_path):
    variant = fig2_variant(tmp_path, q4=0.9)
    code, _ = run(["sweep", variant, "--range", 0, 1, "--steps", 2, "--out-dir", tmp_path])
    assert code == 0
    rows = read_rows(tmp_path / "sweep.csv")
    assert [r["status"] for r in rows] == ["stable", "unstable"]
    assert rows[1]["objective"] == "nan"


def test_sweep_needs_two_paths(tmp_path):
    assert run(["sweep", "single_path", "--out-dir", tmp_path])[0] == 4
    assert run(["sweep", "fig2", "--flow", "1", "--out-dir", tmp_path])[0] == 4


def test_cdf_columns_nondecreasing(tmp_path):
    assert run(["cdf", "fig2", "--engine", "md1", "--out-dir", tmp_path])[0] == 0
    rows = read_rows(tmp_path / "cdf.csv")
    by_path: dict[str, list[float]] = {}
    for r in rows:
        by_path.setdefault(r["path_id"], []).append(float(r["F"]))
    assert set(by_path) == {"1:q1-q3-q5", "2:q2-q3-q5", "2:q2-q4-q5"}
    for f in by_path.values():
        assert np.all(np.diff(f) >= 0)


def test_cdf_ordering_flips(tmp_path):
    deltas = {}
    for p in (0.1, 0.9):
        out = tmp_path / str(p)
        code, _ = run(["cdf", "fig2", "--engine", "md1", "--split", f"2:q2-q4-q5={p}", "--out-dir", out])
        assert code == 0
        rows = read_rows(out / "cdf_summary.csv")
        deltas[p] = {r["path_id"]: float(r["delta"]) for r in rows if r["kind"] == "path"}
        assert float(next(r for r in rows if r["path_id"] == "2:q2-q4-q5")["split"]) == pytest.approx(p)
    assert deltas[0.1]["2:q2-q4-q5"] < deltas[0.1]["2:q2-q3-q5"]
    assert deltas[0.9]["2:q2-q4-q5"] > deltas[0.9]["2:q2-q3-q5"]


# ---------------------------------------------------------------------------
# simulate


def test_simulate_at_optimum(tmp_path, capsys):
    assert run(["optimize", "fig2", "--out-dir", tmp_path])[0] == 0
    code, out = run(["simulate", "fig2", "--policy", tmp_path / "policy.json", "--out-dir", tmp_path / "sim"], capsys)
    assert code == 0
    assert "report: pass" in out.out
    summary = read_rows(tmp_path / "sim" / "sim_summary.csv")
    flows = [r for r in summary if r["kind"] == "flow"]
    assert len(flows) == 2
    for r in flows:
        assert abs(float(r["delta_analytical"]) - float(r["delta_empirical"])) <= 0.02
    manifest = json.loads((tmp_path / "sim" / "run_manifest.json").read_text())
    assert manifest["config"]["sim"]["seed"] == 42 and manifest["config"]["sim"]["n_vehicles"] == 200_000


def test_simulate_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert run(["simulate", "fig2", "--n-vehicles", 3000, "--seed", 7, "--out-dir", tmp_path / name])[0] == 0
    for f in ("samples.csv", "sim_summary.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    rows = read_rows(tmp_path / "a" / "samples.csv")
    assert len(rows) == 2 * (3000 - 300)
    assert list(rows[0]) == ["vehicle_id", "flow_id", "path_signature", "entry_time", "exit_time"]


# ---------------------------------------------------------------------------
# exit codes


def test_exit_codes(tmp_path):
    assert run(["cdf", tmp_path / "missing.topo"])[0] == 2
    bad = tmp_path / "bad.topo"
    bad.write_text('{"queues": [], "edges": [], "flows": [], "extra": 1}')
    assert run(["cdf", bad])[0] == 2
    unstable = fig2_variant(tmp_path, q4=0.5)
    assert run(["simulate", unstable, "--split", "2:q2-q4-q5=0.8", "--out-dir", tmp_path])[0] == 3
    assert run(["optimize", unstable, "--split", "2:q2-q4-q5=0.8", "--out-dir", tmp_path])[0] == 3
    assert run(["cdf", "fig2", "--split", "2=0.5"])[0] == 2
    assert run(["cdf", "fig2", "--split", "9:q2-q4-q5=0.5"])[0] == 2


def test_bad_arguments_exit_2():
    with pytest.raises(SystemExit) as err:
        main(["optimize"])
    assert err.value.code == 2


def test_validate_quick(tmp_path, capsys):
    code, out = run(["validate", "fig2", "--quick", "--out-dir", tmp_path], capsys)
    lines = [ln for ln in out.out.splitlines() if ln.startswith("[")]
    assert len(lines) == 7
    assert all(ln.startswith("[PASS]") for ln in lines)
    assert code == 0
    rows = read_rows(tmp_path / "validation.csv")
    assert [int(r["criterion"]) for r in rows] == list(range(1, 8))


def test_cdf_matches_library(tmp_path):
    assert run(["cdf", "fig2", "--split", "2:q2-q4-q5=0.25", "--out-dir", tmp_path])[0] == 0
    topo = load_network("fig2")
    ev = evaluate(topo, SolverConfig.for_topology(topo), fig2_splits(0.25))
    rows = read_rows(tmp_path / "cdf_summary.csv")
    got = {r["flow_id"]: float(r["delta"]) for r in rows if r["kind"] == "flow"}
    assert got == pytest.approx(ev.delta_flows, abs=1e-15)
