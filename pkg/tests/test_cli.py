import json
import subprocess
import sys

import numpy as np
import pytest

import bamgp.cli as cli
from bamgp.cli import main
from bamgp.kernels import CholeskyError


def run(capsys, *args):
    code = main([str(a) for a in args])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture()
def sim(tmp_path, capsys):
    data, truth = tmp_path / "d.jsonl", tmp_path / "t.jsonl"
    code, out, _ = run(capsys, "simulate", "--n", 30, "--seed", 7, "--out", data, "--truth-out", truth)
    assert code == 0 and json.loads(out)["n"] == 30
    return data, truth


def test_simulate_deterministic(tmp_path, capsys, sim):
    again = tmp_path / "d2.jsonl"
    run(capsys, "simulate", "--n", 30, "--seed", 7, "--out", again)
    assert sim[0].read_bytes() == again.read_bytes()
    assert len(sim[0].read_text().splitlines()) == 30


def test_usage_errors(tmp_path, capsys):
    assert run(capsys, "simulate", "--n", 0, "--out", tmp_path / "x")[0] == 2
    assert run(capsys, "fit", "--data", tmp_path / "missing.jsonl", "--out-snapshot", tmp_path / "s")[0] == 2
    assert run(capsys, "nonsense")[0] == 2
    assert run(capsys, "--version")[0] == 0


def test_fit_predict_decompose_evaluate(tmp_path, capsys, sim):
    data, truth = sim
    snap = tmp_path / "s.json"
    code, out, err = run(capsys, "fit", "--data", data, "--out-snapshot", snap, "--likelihood", "trunc")
    rec = json.loads(out)
    assert code == 0 and np.isfinite(rec["log_evidence"]) and rec["converged"] is True

    preds = tmp_path / "p.jsonl"
    assert run(capsys, "predict", "--snapshot", snap, "--train", data, "--data", data, "--out", preds)[0] == 0
    lines = [json.loads(x) for x in preds.read_text().splitlines()]
    assert len(lines) == 30 and set(lines[0]) == {"id", "total", "routine", "events"}

    code, out, _ = run(capsys, "decompose", "--snapshot", snap, "--data", data)
    recs = [json.loads(x) for x in out.splitlines()]
    snapshot = json.loads(snap.read_text())
    v = snapshot["hyperparams"]["noise_v"]
    for r in recs:
        mean = r["routine"]["mean"] + sum(e["mean"] for e in r["events"])
        sd = np.sqrt(v + r["routine"]["var"] + sum(e["var"] for e in r["events"]))
        assert abs(mean - r["y"]) <= 2 * sd
    assert any(r["events"] == [] for r in recs)

    code, out, _ = run(capsys, "evaluate", "--data", data, "--predictions", preds, "--truth", truth)
    rep = json.loads(out)
    assert code == 0 and set(rep) == {"totals", "decomposition"} and "B" in rep["decomposition"]


def test_poisson_snapshot_differs(tmp_path, capsys, sim, monkeypatch):
    monkeypatch.setenv("BAMGP_QUAD_NODES", "8")
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    run(capsys, "fit", "--data", sim[0], "--out-snapshot", a, "--likelihood", "trunc")
    code, out, _ = run(capsys, "fit", "--data", sim[0], "--out-snapshot", b, "--likelihood", "poisson")
    assert code == 0
    assert json.loads(b.read_text())["config"]["quad_nodes"] == 8
    assert a.read_text() != b.read_text()
    monkeypatch.setenv("BAMGP_QUAD_NODES", "zero")
    assert run(capsys, "fit", "--data", sim[0], "--out-snapshot", b)[0] == 2


def test_tampered_snapshot(tmp_path, capsys, sim):
    snap = tmp_path / "s.json"
    run(capsys, "fit", "--data", sim[0], "--out-snapshot", snap)
    s = json.loads(snap.read_text())
    s["fingerprint"] = "0" * 64
    snap.write_text(json.dumps(s))
    code, out, err = run(capsys, "decompose", "--snapshot", snap, "--data", sim[0])
    assert code == 2 and out == "" and "fingerprint" in err


def test_numerical_failure_exit_code(tmp_path, capsys, sim, monkeypatch):
    def boom(*a, **k):
        raise CholeskyError("not positive definite")

    monkeypatch.setattr(cli, "fit", boom)
    code, out, err = run(capsys, "fit", "--data", sim[0], "--out-snapshot", tmp_path / "s")
    assert code == 3 and out == "" and "numerical" in err


def test_hyperopt_command(tmp_path, capsys, sim):
    rel = tmp_path / "rel.tsv"
    code, out, _ = run(capsys, "hyperopt", "--data", sim[0], "--restarts", 1, "--max-evals", 10,
                       "--relevance-tsv", rel, "--feature-names", "a,b", "--out", tmp_path / "h.json")
    rec = json.loads(out)
    assert code == 0 and rec["log_evidence"] >= rec["init_log_evidence"]
    assert rel.read_text().startswith("rank\tfeature\tlength_scale\n")
    init = tmp_path / "h.json"
    assert run(capsys, "fit", "--data", sim[0], "--hyperparams", init, "--out-snapshot", tmp_path / "s")[0] == 0


def test_benchmark_tables(capsys):
    args = ["benchmark", "--seed", 1, "--n", 40, "--k", 2]
    code, out, _ = run(capsys, *args)
    assert code == 0
    pred, dec = out.strip().split("\n\n")
    rows = [r.split("\t") for r in pred.split("\n")]
    assert rows[0] == ["model", "RAE", "CorrCoef", "R2"]
    assert [r[0] for r in rows[1:]] == ["BLR", "GP", "BAM-LR", "BAM-GP (poisson)", "BAM-GP (trunc.)"]
    assert all("(" in c for r in rows[1:] for c in r[1:])
    assert dec.split("\n")[0] == "component\tmodel\tRAE\tCorrCoef\tR2"
    assert run(capsys, "benchmark", "--models", "nope")[0] == 2


def test_benchmark_deterministic(capsys):
    args = ["benchmark", "--seed", 2, "--n", 40, "--k", 2, "--models", "BLR,GP,BAM-GP (trunc.)"]
    first = run(capsys, *args)[1]
    assert run(capsys, *args)[1] == first


def test_console_script(tmp_path):
    out = subprocess.run([sys.executable, "-m", "bamgp.cli", "simulate", "--n", "3", "--out",
                          str(tmp_path / "d.jsonl")], capture_output=True, text=True)
    assert out.returncode == 0 and json.loads(out.stdout)["n"] == 3
