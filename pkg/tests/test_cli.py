import json
import subprocess
import sys

import numpy as np
import pytest

from psco.cli import main, read_grid
from psco.data import Dataset, save_dataset
from psco.encoder import identity_encoder
from psco.errors import UsageError
from psco.snapshot import load_model, save_model

SPEC = """[synthetic]
n_classes = 5
dim = 8
samples_per_class = 24
seed = 1
"""

CONFIG = """[train]
N = 16
K = 2
M = 128
d = 8
epochs = {epochs}

[model]
backbone_hidden = 16, 16
proj_hidden = 16
pred_hidden = 16

[data]
dataset = data/synthetic.json

[eval]
episodes = 5
"""


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "spec.ini").write_text(SPEC)
    assert main(["gen", "--spec", str(tmp_path / "spec.ini"), "--out", str(tmp_path / "data")]) == 0
    return tmp_path


def write_config(workdir, epochs=2):
    path = workdir / "run.ini"
    path.write_text(CONFIG.format(epochs=epochs))
    return str(path)


def test_train_zero_epochs_writes_initial_model(workdir, capsys):
    assert main(["train", "--config", write_config(workdir, 0), "--out", str(workdir / "out")]) == 0
    snap = load_model(workdir / "out" / "model.psco")
    assert snap.epoch == 0 and snap.config.epochs == 0
    assert (workdir / "out" / "metrics.jsonl").read_text() == ""


def test_train_then_eval(workdir, capsys):
    cfg = write_config(workdir, 2)
    assert main(["train", "--config", cfg, "--out", str(workdir / "out")]) == 0
    lines = (workdir / "out" / "metrics.jsonl").read_text().splitlines()
    assert [json.loads(l)["epoch"] for l in lines] == [1, 2]
    capsys.readouterr()
    rc = main(["eval", "--model", str(workdir / "out" / "model.psco"), "--dataset",
               str(workdir / "data" / "synthetic.json"), "--way", "5", "--shot", "1", "--episodes", "4",
               "--query", "5", "--adapt", "2", "--out", str(workdir / "report.json")])
    assert rc == 0
    report = json.loads((workdir / "report.json").read_text())
    assert report["n_way"] == 5 and report["k_shot"] == 1 and report["n_episodes"] == 4
    assert json.loads(capsys.readouterr().out) == report


def test_resume_matches_continuous(workdir):
    cfg = write_config(workdir, 2)
    main(["train", "--config", cfg, "--out", str(workdir / "full")])
    main(["train", "--config", cfg, "--out", str(workdir / "half"), "--until-epoch", "1"])
    main(["train", "--config", cfg, "--out", str(workdir / "half"),
          "--resume", str(workdir / "half" / "model.psco")])
    for name in ("model.psco", "metrics.jsonl"):
        assert (workdir / "full" / name).read_bytes() == (workdir / "half" / name).read_bytes()


def test_identical_commands_identical_files(workdir):
    cfg = write_config(workdir, 1)
    main(["train", "--config", cfg, "--out", str(workdir / "a")])
    main(["train", "--config", cfg, "--out", str(workdir / "b")])
    for name in ("model.psco", "metrics.jsonl"):
        assert (workdir / "a" / name).read_bytes() == (workdir / "b" / name).read_bytes()


def test_eval_perfect_fixture(tmp_path, capsys):
    rng = np.random.default_rng(0)
    labels = np.repeat(np.arange(5), 20)
    x = 10.0 * np.eye(8)[labels] + 0.01 * rng.standard_normal((100, 8))
    manifest = save_dataset(Dataset(x, labels, name="perfect"), tmp_path)
    save_model(tmp_path / "id.psco", identity_encoder(8))
    rc = main(["eval", "--model", str(tmp_path / "id.psco"), "--dataset", manifest,
               "--way", "5", "--shot", "5", "--episodes", "10"])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert report["mean_accuracy"] == 1.0 and report["ci95"] == 0.0


def test_sweep_over_k(workdir, capsys):
    (workdir / "grid.ini").write_text("[grid]\nK = 1, 4, 16, 64\n")
    cfg = write_config(workdir, 1)
    assert main(["sweep", "--config", cfg, "--grid", str(workdir / "grid.ini"), "--out", str(workdir / "sw")]) == 0
    reports = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert [r["cell"]["K"] for r in reports] == [1, 4, 16, 64]
    assert all(r["n_episodes"] == 5 for r in reports)
    assert len((workdir / "sw" / "sweep.jsonl").read_text().splitlines()) == 4


def test_grid_parsing(tmp_path):
    path = tmp_path / "g.ini"
    path.write_text("[grid]\nepsilon = 0.01 0.05\nm = 0.9, 0.99\n")
    assert read_grid(path) == {"m": [0.9, 0.99], "epsilon": [0.01, 0.05]}
    path.write_text("[grid]\nlr0 = 0.1\n")
    with pytest.raises(UsageError):
        read_grid(path)


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["train", "--config"],
    ["eval", "--model", "m", "--dataset", "d", "--colour", "red"],
    ["eval", "--model", "m", "--dataset", "d", "--way", "five"],
])
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    err = capsys.readouterr().err
    assert err.startswith("error: ") and err.count("\n") == 1


def test_unknown_config_key(workdir, capsys):
    path = workdir / "bad.ini"
    path.write_text("[train]\nlearning_rate = 0.1\n")
    assert main(["train", "--config", str(path), "--out", str(workdir / "o")]) == 2
    assert "learning_rate" in capsys.readouterr().err


def test_runtime_failure_exits_1(workdir, capsys):
    assert main(["eval", "--model", str(workdir / "missing.psco"), "--dataset",
                 str(workdir / "data" / "synthetic.json")]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error: ") and err.count("\n") == 1


def test_selfcheck_subprocess():
    out = subprocess.run([sys.executable, "-m", "psco.cli", "selfcheck"], capture_output=True, text=True)
    assert out.returncode == 0, out.stdout + out.stderr
    lines = [l for l in out.stdout.splitlines() if l.startswith(("PASS", "FAIL"))]
    assert lines and all(l.startswith("PASS") for l in lines)
