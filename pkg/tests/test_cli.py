import json
import os
import subprocess
import sys

import numpy as np
import pytest

from cplrnn.benchgen import Dataset
from cplrnn.cli import main
from cplrnn.model import ModelParams


def run(tmp_path, *argv):
    return main(["--out-dir", str(tmp_path), *argv])


def manifest(tmp_path, cmd):
    with open(tmp_path / f"manifest_{cmd}.json") as fh:
        return json.load(fh)


def test_gen_lorenz_and_manifest(tmp_path):
    assert run(tmp_path, "--seed", "3", "gen", "lorenz", "--T", "500") == 0
    ds = Dataset.load(str(tmp_path / "lorenz.csv"))
    assert ds.values.shape == (500, 3)
    m = manifest(tmp_path, "gen")
    assert m["seed"] == 3 and m["command"] == "gen"
    assert {"argv", "inputs", "outputs", "version", "wall_time", "jobs"} <= set(m)


def test_gen_lif_irregular(tmp_path):
    assert run(tmp_path, "gen", "lif", "--fraction", "0.1", "--name", "spk") == 0
    sub = Dataset.load(str(tmp_path / "spk.csv"))
    full = Dataset.load(str(tmp_path / "spk_full.csv"))
    assert len(sub.times) == 100 and len(full.times) == 1000
    assert sub.meta["regular"] is False


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("CPLRNN_OUT_DIR", str(tmp_path / "envdir"))
    assert main(["gen", "lif", "--T", "100"]) == 0
    assert (tmp_path / "envdir" / "lif.csv").exists()


def test_usage_errors_exit_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run(tmp_path, "frobnicate")
    assert exc.value.code == 2
    assert run(tmp_path, "train", "--data", str(tmp_path / "missing.csv")) == 2
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"not_a_key": 1}))
    run(tmp_path, "gen", "lif", "--T", "100")
    assert run(tmp_path, "train", "--data", str(tmp_path / "lif.csv"), "--config", str(cfg)) == 2


def _small_config(tmp_path, **kw):
    cfg = dict(M=3, P=1, seq_len=10, batch_size=2, batches_per_epoch=2, epochs=2, tf_interval=3)
    cfg.update(kw)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_train_is_reproducible(tmp_path):
    run(tmp_path, "gen", "lif", "--T", "200")
    data = str(tmp_path / "lif.csv")
    cfg = _small_config(tmp_path)
    outs = []
    for name in ("a", "b"):
        assert main(["--seed", "7", "--out-dir", str(tmp_path / name), "train", "--data", data,
                     "--config", cfg]) == 0
        outs.append((tmp_path / name / "model.json").read_text())
    assert outs[0] == outs[1]
    assert manifest(tmp_path / "a", "train")["train_config"]["M"] == 3


def test_train_divergence_exit_3(tmp_path):
    run(tmp_path, "gen", "lif", "--T", "200")
    init = ModelParams(A=np.array([3.0, 3.0]), W=np.zeros((2, 2)), h=np.ones(2), P=1, N=1)
    init.save(tmp_path / "init.json")
    cfg = _small_config(tmp_path, M=2, seq_len=150, tf_interval=149, batch_size=1)
    code = run(tmp_path, "train", "--data", str(tmp_path / "lif.csv"), "--config", cfg,
               "--init", str(tmp_path / "init.json"))
    assert code == 3
    assert (tmp_path / "last_finite.json").exists()


def test_simulate_and_solver_failure_exit_4(tmp_path, osc):
    osc.save(tmp_path / "osc.json")
    assert run(tmp_path, "simulate", "--model", str(tmp_path / "osc.json"), "--z0", "0,0.5",
               "--t-end", "20", "--n", "21") == 0
    lines = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "t,z1,z2" and len(lines) == 22
    assert len((tmp_path / "events.csv").read_text().splitlines()) > 1
    bad = ModelParams(A=np.zeros(2), W=np.zeros((2, 2)), h=np.ones(2), P=1, N=1)
    bad.save(tmp_path / "bad.json")
    assert run(tmp_path, "simulate", "--model", str(tmp_path / "bad.json")) == 4
    assert manifest(tmp_path, "simulate")["error"] == "SOLVER_ERROR"
    assert run(tmp_path, "gen", "lif", "--V-reset", "2") == 4


def test_analyze_oscillator(tmp_path, osc):
    osc.save(tmp_path / "osc.json")
    assert run(tmp_path, "analyze", "--model", str(tmp_path / "osc.json"), "--z0", "0,0.5",
               "--sim-length", "100") == 0
    rep = json.loads((tmp_path / "analysis.json").read_text())
    assert len(rep["fixed_points"]) == 1 and len(rep["cycles"]) == 1
    assert rep["cycles"][0]["stable"]


def test_evaluate_with_generated_trajectory(tmp_path):
    run(tmp_path, "gen", "lif", "--T", "300")
    ds = Dataset.load(str(tmp_path / "lif.csv"))
    ds.save(str(tmp_path / "copy.csv"))
    assert run(tmp_path, "evaluate", "--data", str(tmp_path / "lif.csv"), "--generated",
               str(tmp_path / "copy.csv")) == 0
    res = json.loads((tmp_path / "metrics.json").read_text())
    assert res["d_stsp"] == 0.0 and res["d_h"] == pytest.approx(0.0, abs=1e-12)


def test_gradcheck_subprocess(tmp_path):
    out = subprocess.run([sys.executable, "-m", "cplrnn.cli", "--out-dir", str(tmp_path),
                          "gradcheck", "--n-models", "3", "--inject-tangential"],
                         capture_output=True, text=True, timeout=600)
    assert out.returncode == 0, out.stderr
    assert "max_rel_error" in out.stdout
    rep = json.loads((tmp_path / "gradcheck.json").read_text())
    assert rep["passed"] and rep["injected_discards"] >= 1


def test_gradcheck_failure_exit_5(tmp_path, monkeypatch):
    import cplrnn.cli as cli
    from cplrnn.gradcheck import GradcheckReport

    def broken(*a, **k):
        return GradcheckReport(n_models=1, failures=[{"param": "A"}])

    monkeypatch.setattr(cli, "run_gradcheck", broken)
    assert run(tmp_path, "gradcheck", "--n-models", "1") == 5
