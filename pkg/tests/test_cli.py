import csv
import json
import subprocess
import sys

import pytest

from afprop import io
from afprop.cli import main
from afprop.seminorms import LipSpec, effros_shen_spec
from afprop.states import canonical_weights, point_mass
from afprop.towers import ContinuedFraction, Tower
from afprop.metrics import relabel_tower


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, out


def test_tower_effros_shen(capsys):
    code, out = run(capsys, "tower", "effros-shen", "--cf", "0,1,1,1", "--depth", "3")
    rep = json.loads(out)
    assert code == 0 and rep["verified"] and rep["command"] == "tower"
    assert rep["results"][0]["levels"] == [[1], [1, 1], [2, 1], [3, 2]]


def test_seed_env_fallback(capsys, monkeypatch):
    monkeypatch.setenv("QPROP_SEED", "41")
    _, out = run(capsys, "tower", "uhf", "--mult", "2,3", "--depth", "2")
    assert json.loads(out)["seed"] == 41
    _, out = run(capsys, "tower", "uhf", "--mult", "2,3", "--depth", "2", "--seed", "5")
    assert json.loads(out)["seed"] == 5


def test_bad_input_exit_2(capsys):
    code, out = run(capsys, "tower", "effros-shen", "--cf", "1,2", "--depth", "1")
    rep = json.loads(out)
    assert code == 2 and rep["error"]["type"] == "InvalidQuotientError"
    code, out = run(capsys, "propinquity", "chain", "--N", "3", "--k", "1", "--K", "6")
    assert code == 2 and json.loads(out)["error"]["type"] == "HypothesisError"


def test_tolerance_only_loosens(capsys):
    base = ["propinquity", "beta-bound", "--cf", "golden", "--depth", "3", "--m", "1", "--samples", "4"]
    code, out = run(capsys, *base, "--tol", "1e-12")
    assert code == 2 and "tighten" in json.loads(out)["error"]["message"]
    code, _ = run(capsys, *base, "--tol", "1e-6")
    assert code == 2
    code, out = run(capsys, *base, "--tol", "1e-6", "--allow-loosen")
    assert code == 0 and json.loads(out)["results"][0]["tol"] == 1e-6


def test_chain_bound(capsys):
    code, out = run(capsys, "propinquity", "chain", "--N", "3", "--k", "5", "--K", "8", "--samples", "8")
    row = json.loads(out)["results"][0]
    assert code == 0 and row["2B(N)"] == "2/13"
    assert row["bound"] == pytest.approx(2 / 13 + row["bridge"], abs=1e-15)


def test_kantorovich_and_csv(capsys, tmp_path):
    t = Tower.from_multiplicities([[1], [1, 1]], [[[1], [1]]])
    spec = LipSpec(t, "cond-exp", (1,), canonical_weights(t.top))
    io.save(io.spec_to_json(spec), tmp_path / "spec.json")
    io.save(io.trace_to_json(point_mass(t.top, 0)), tmp_path / "phi.json")
    io.save(io.trace_to_json(point_mass(t.top, 1)), tmp_path / "psi.json")
    code, out = run(capsys, "kantorovich", "--spec", str(tmp_path / "spec.json"), "--phi", str(tmp_path / "phi.json"),
                    "--psi", str(tmp_path / "psi.json"), "--format", "csv")
    rows = list(csv.DictReader(out.splitlines()))
    assert code == 0 and len(rows) == 1
    row = rows[0]
    assert float(row["value"]) == pytest.approx(2) and row["mode"] == "exact"


def test_isometry_verify(capsys, tmp_path):
    su = effros_shen_spec(ContinuedFraction.golden(40), 3)
    perms = [list(range(s.n_blocks))[::-1] for s in su.tower.levels]
    V = relabel_tower(su.tower, perms)
    sv = LipSpec(V, "cond-exp", su.beta, su.trace.permuted(perms[-1]))
    io.save(io.spec_to_json(su), tmp_path / "u.json")
    io.save(io.spec_to_json(sv), tmp_path / "v.json")
    io.save({"schema": io.tag("isometry"), "perms": perms}, tmp_path / "map.json")
    argv = ["isometry", "verify", "--spec-u", str(tmp_path / "u.json"), "--spec-v", str(tmp_path / "v.json"),
            "--map", str(tmp_path / "map.json"), "--samples", "10"]
    code, out = run(capsys, *argv)
    assert code == 0 and json.loads(out)["verified"]
    # identity map between the relabelled towers is structurally wrong
    io.save({"schema": io.tag("isometry"), "perms": [list(range(s.n_blocks)) for s in su.tower.levels]},
            tmp_path / "map.json")
    code, out = run(capsys, *argv)
    assert code == 2 and json.loads(out)["error"]["type"] == "StructureError"


def test_unverified_exit_1(capsys, tmp_path):
    su = effros_shen_spec(ContinuedFraction.golden(40), 3)
    io.save(io.spec_to_json(su), tmp_path / "u.json")
    lam = [float(v) for v in su.trace.lam]
    bad = dict(io.spec_to_json(su))
    bad["trace"] = {"schema": io.tag("trace"), "shape": list(su.top.block_dims), "lambda": [lam[0] + 1e-3, lam[1] - 1e-3]}
    io.save(bad, tmp_path / "v.json")
    io.save({"schema": io.tag("isometry"), "perms": [list(range(s.n_blocks)) for s in su.tower.levels]},
            tmp_path / "map.json")
    code, out = run(capsys, "isometry", "verify", "--spec-u", str(tmp_path / "u.json"), "--spec-v",
                    str(tmp_path / "v.json"), "--map", str(tmp_path / "map.json"), "--samples", "5")
    assert code == 1 and not json.loads(out)["verified"]


def test_trace_commands(capsys, tmp_path):
    code, out = run(capsys, "trace", "effros-shen", "--cf", "golden", "--level", "2")
    assert code == 0 and json.loads(out)["results"][0]["lambda_float"][0] == pytest.approx(0.7639320225)
    su = effros_shen_spec(ContinuedFraction.golden(40), 3)
    io.save(io.tower_to_json(su.tower), tmp_path / "t.json")
    io.save(io.trace_to_json(su.trace), tmp_path / "w.json")
    code, out = run(capsys, "trace", "pullback", "--tower", str(tmp_path / "t.json"), "--trace",
                    str(tmp_path / "w.json"), "--level", "2")
    assert code == 0
    assert json.loads(out)["results"][0]["lambda"] == io.trace_to_json(effros_shen_spec(ContinuedFraction.golden(40), 2).trace)["lambda"]


def test_console_script_runs():
    out = subprocess.run([sys.executable, "-m", "afprop.cli", "tower", "uhf", "--mult", "2,2", "--depth", "2"],
                         capture_output=True, text=True, check=True).stdout
    assert json.loads(out)["results"][0]["levels"] == [[1], [2], [4]]
