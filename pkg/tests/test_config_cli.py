import json
import os
import subprocess
import sys
import textwrap
from pathlib import Path

import numpy as np
import pytest

from earlylmc import cli
from earlylmc import config as cfgmod
from earlylmc import reports as rp

MINIMAL = """\
mixture:
  means: [[0.0]]
  covs: [1.0]
  weights: [1.0]
schedule:
  h: 0.01
  n_steps: 50
  record_stride: 10
init:
  M: 20
n_chains: 20
diagnostics:
  kde_steps: [0, 50]
master_seed: 3
"""


def _write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


def _csv_bytes(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).glob("*.csv"))}


# ----------------------------------------------------------------------------
# Config loading
# ----------------------------------------------------------------------------


def test_defaults_filled(tmp_path):
    cfg = cfgmod.load(_write(tmp_path, MINIMAL))
    assert cfg["score"]["kind"] == "exact"
    assert cfg["threads"] == 1 and cfg["master_seed"] == 3


def test_unknown_key_rejected_with_line(tmp_path):
    text = MINIMAL.replace("n_chains: 20", "n_chains: 20\nbogus_key: 1")
    with pytest.raises(cfgmod.ConfigError) as info:
        cfgmod.load(_write(tmp_path, text))
    lines = text.splitlines()
    assert "bogus_key" in str(info.value)
    assert f":{lines.index('bogus_key: 1') + 1}:" in str(info.value)


def test_nested_type_error_has_field_and_line(tmp_path):
    text = MINIMAL.replace("h: 0.01", "h: fast")
    with pytest.raises(cfgmod.ConfigError) as info:
        cfgmod.load(_write(tmp_path, text))
    assert "schedule/h" in str(info.value)
    line = text.splitlines().index("  h: fast") + 1
    assert f":{line}:" in str(info.value)


def test_semantic_checks(tmp_path):
    text = MINIMAL.replace("weights: [1.0]", "weights: [0.5, 0.5]")
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.load(_write(tmp_path, text))


def test_config_hash_stable():
    a = cfgmod.resolve({"mixture": {"means": [[0.0]], "weights": [1.0]}})
    b = cfgmod.resolve({"mixture": {"weights": [1.0], "means": [[0.0]]}})
    assert cfgmod.config_hash(a) == cfgmod.config_hash(b)


def test_fmt_seventeen_digits():
    assert rp.fmt(0.1) == "0.10000000000000001"
    assert rp.fmt(True) == "1"


# ----------------------------------------------------------------------------
# simulate
# ----------------------------------------------------------------------------


def test_simulate_minimal_and_deterministic(tmp_path):
    cfg = _write(tmp_path, MINIMAL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(a)]) == 0
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(b)]) == 0
    for name in ("endpoints.csv", "trajectories.csv", "report.txt", "manifest.json", "config.yaml"):
        assert (a / name).exists(), name
    assert _csv_bytes(a) == _csv_bytes(b)
    svgs = sorted(p.name for p in a.glob("*.svg"))
    assert svgs and all((a / n).read_bytes() == (b / n).read_bytes() for n in svgs)
    header = (a / "endpoints.csv").read_text().splitlines()[0]
    assert header == "chain,x_0,cluster,bad_hits,diverged"
    assert (a / "trajectories.csv").read_text().splitlines()[0] == "chain,step,t,x_0"


def test_simulate_thread_count_invariance(tmp_path):
    cfg = _write(tmp_path, MINIMAL.replace("n_chains: 20", "n_chains: 1200").replace("M: 20", "M: 40"))
    a, b = tmp_path / "t1", tmp_path / "t8"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(a), "--threads", "1"]) == 0
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(b), "--threads", "8"]) == 0
    assert _csv_bytes(a) == _csv_bytes(b)


def test_manifest_rerun_reproduces_artifacts(tmp_path):
    cfg = _write(tmp_path, MINIMAL)
    a = tmp_path / "orig"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(a)]) == 0
    man = json.loads((a / "manifest.json").read_text())
    assert man["master_seed"] == 3 and man["config_sha256"]
    assert all(rp.verify_manifest(a / "manifest.json").values())
    b = tmp_path / "rerun"
    assert cli.main(man["argv"] + ["--out", str(b)]) == 0
    man_b = json.loads((b / "manifest.json").read_text())
    assert man_b["artifacts"] == man["artifacts"]


def test_exit_code_config_error(tmp_path, capsys):
    cfg = _write(tmp_path, MINIMAL + "extra: 1\n")
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert "extra" in capsys.readouterr().err


def test_exit_code_divergence(tmp_path):
    text = MINIMAL.replace("h: 0.01", "h: 5.0").replace("n_steps: 50", "n_steps: 40")
    cfg = _write(tmp_path, text.replace("kde_steps: [0, 50]", "kde_steps: []"))
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == cli.EXIT_DIVERGED


def test_exit_code_check_failure(tmp_path):
    text = MINIMAL.replace("weights: [1.0]", "weights: [0.5, 0.5]").replace("means: [[0.0]]", "means: [[-3.0], [3.0]]")
    text = text.replace("covs: [1.0]", "covs: [1.0, 1.0]") + "checks:\n  max_weight_bound: 0.0\n"
    cfg = _write(tmp_path, text)
    out = tmp_path / "o"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out), "--check"]) == cli.EXIT_CHECK


def test_env_var_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.ENV_OUT, str(tmp_path / "from_env"))
    assert cli.main(["simulate", "--config", str(_write(tmp_path, MINIMAL))]) == 0
    assert (tmp_path / "from_env" / "endpoints.csv").exists()


# ----------------------------------------------------------------------------
# certify-lsi / schedule / diagnose / train-score
# ----------------------------------------------------------------------------


THREE_MODES = """\
mixture:
  means: [[0.0], [1.0], [50.0]]
  covs: [1.0, 1.0, 1.0]
  weights: [0.3333333333333333, 0.3333333333333333, 0.3333333333333334]
lsi:
  eps_tv: 0.1
  tau: 0.1
theory:
  eps_tv: 0.1
  tau: 0.1
"""


def test_certify_three_modes(tmp_path, capsys):
    assert cli.main(["certify-lsi", "--config", str(_write(tmp_path, THREE_MODES)), "--out", str(tmp_path)]) == 0
    report = (tmp_path / "report.txt").read_text()
    assert "partition_one_based: [[1, 2], [3]]" in report
    assert (tmp_path / "overlaps.csv").exists()


def test_certify_single_component(tmp_path):
    text = "mixture:\n  means: [[0.0]]\n  covs: [2.0]\n  weights: [1.0]\n"
    assert cli.main(["certify-lsi", "--config", str(_write(tmp_path, text)), "--out", str(tmp_path)]) == 0
    report = (tmp_path / "report.txt").read_text()
    expected = 4 * np.log(4) * 2.0
    line = next(l for l in report.splitlines() if l.startswith("c_ls_bound:"))
    assert float(line.split(":")[1]) == pytest.approx(expected, rel=1e-15)


def test_schedule_monotone_in_eps(tmp_path):
    vals = []
    for eps in ("0.1", "0.05"):
        text = THREE_MODES.replace("theory:\n  eps_tv: 0.1", f"theory:\n  eps_tv: {eps}")
        out = tmp_path / eps
        assert cli.main(["schedule", "--config", str(_write(tmp_path, text)), "--out", str(out)]) == 0
        rows = dict(l.split(": ", 1) for l in (out / "report.txt").read_text().splitlines() if ": " in l)
        vals.append((float(rows["log_h"]), float(rows["eps_score_budget"])))
    assert vals[1][0] < vals[0][0] and vals[1][1] < vals[0][1]


def test_schedule_rejects_bad_eps(tmp_path):
    text = THREE_MODES.replace("theory:\n  eps_tv: 0.1", "theory:\n  eps_tv: 0.7")
    assert cli.main(["schedule", "--config", str(_write(tmp_path, text)), "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_diagnose_endpoints(tmp_path):
    cfg = _write(tmp_path, MINIMAL)
    run = tmp_path / "run"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(run)]) == 0
    out = tmp_path / "diag"
    assert cli.main(["diagnose", "--config", str(cfg), "--out", str(out), str(run / "endpoints.csv")]) == 0
    assert (out / "kde_endpoints.csv").exists()
    assert cli.main(["diagnose", "--config", str(cfg), "--out", str(out), str(tmp_path / "missing.csv")]) == cli.EXIT_CONFIG


def test_train_score_writes_model(tmp_path):
    text = """\
mixture:
  means: [[0.0]]
  covs: [1.0]
  weights: [1.0]
score:
  kind: train
  train:
    steps: 300
    hidden_width: 16
    n_train: 500
    n_eval: 1000
"""
    out = tmp_path / "o"
    assert cli.main(["train-score", "--config", str(_write(tmp_path, text)), "--out", str(out)]) == 0
    assert (out / "loss_curve.csv").read_text().count("\n") == 301
    assert (out / "score_model.txt").exists()


# ----------------------------------------------------------------------------
# reproduce
# ----------------------------------------------------------------------------


def test_reproduce_fig1_horizon_zero(tmp_path):
    out = tmp_path / "f1"
    assert cli.main(["reproduce", "fig1", "--score", "exact", "--horizon", "0", "--out", str(out)]) == 0
    rows = (out / "kde_step0.csv").read_text().splitlines()
    assert rows[0].startswith("x,density")
    ends = np.loadtxt(out / "endpoints.csv", delimiter=",", skiprows=1)
    assert ends.shape[0] == 40
    assert any(p.suffix == ".svg" for p in out.iterdir())


def test_reproduce_rejects_negative_horizon(tmp_path):
    assert cli.main(["reproduce", "fig1", "--horizon", "-1", "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_presets_follow_stated_hyperparameters():
    full = cli.fig1_config("trained", full=True)["score"]["train"]
    assert (full["steps"], full["hidden_width"], full["lr"], full["optimizer"]) == (300_000, 2048, 1e-5, "sgd")
    f2 = cli.fig2_config("trained", full=True)
    assert f2["score"]["train"]["batch_size"] == 256 and f2["init"]["M"] == 15
    assert f2["schedule"]["h"] == 0.001


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "earlylmc.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for sub in ("simulate", "train-score", "certify-lsi", "schedule", "diagnose", "reproduce"):
        assert sub in res.stdout
