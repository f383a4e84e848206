import csv
import json

import numpy as np
import pytest

from dfdnet.cli import main
from dfdnet.config import TrainingConfig
from dfdnet.data import load_image
from dfdnet.degradation import DegradationParams


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "faces"), "--n", "6", "--seed", "1", "--resolution", "32"]) == 0
    assert main(["build-dict", "--images", str(root / "faces/images"), "--landmarks", str(root / "faces/landmarks"),
                 "--out", str(root / "dict"), "--clusters", "2", "--resolution", "32"]) == 0
    TrainingConfig(resolution=32, task="x4", batch_size=2, disc_channels=8, max_steps=2).save(root / "cfg.txt")
    assert main(["train", "--config", str(root / "cfg.txt"), "--dict", str(root / "dict"),
                 "--images", str(root / "faces/images"), "--landmarks", str(root / "faces/landmarks"),
                 "--out", str(root / "run")]) == 0
    return root


def test_synth_and_dict_outputs(workspace):
    assert len(list((workspace / "faces/images").glob("*.png"))) == 6
    assert (workspace / "dict/manifest.txt").is_file()
    assert len(list((workspace / "dict").glob("*.bin"))) == 16


def test_degrade_writes_params(workspace, tmp_path):
    out = tmp_path / "deg"
    assert main(["degrade", "--in", str(workspace / "faces/images"), "--out", str(out), "--seed", "4",
                 "--r", "4", "--sigma", "3", "--q", "60", "--kernel", "gaussian:2"]) == 0
    params = sorted(out.glob("*.params.txt"))
    assert len(params) == 6
    p = DegradationParams.from_manifest(params[0].read_text())
    assert (p.downsample_factor, p.noise_sigma, p.jpeg_quality, p.kernel.spec) == (4.0, 3.0, 60, "gaussian:2")
    assert load_image(out / params[0].name.replace(".params.txt", ".png")).shape == (8, 8, 3)


def test_train_resume(workspace):
    assert main(["train", "--resume", str(workspace / "run/checkpoint.pt"), "--dict", str(workspace / "dict"),
                 "--images", str(workspace / "faces/images"), "--landmarks", str(workspace / "faces/landmarks"),
                 "--out", str(workspace / "run2"), "--steps", "3"]) == 0
    rows = list(csv.reader(open(workspace / "run2/train_log.csv")))
    assert rows[-1][0] == "3"


def test_restore_with_diagnostics(workspace, tmp_path):
    face = sorted((workspace / "faces/images").glob("*.png"))[0]
    lm = workspace / "faces/landmarks" / (face.stem + ".txt")
    assert main(["restore", "--in", str(face), "--landmarks", str(lm), "--dict", str(workspace / "dict"),
                 "--ckpt", str(workspace / "run/checkpoint.pt"), "--out", str(tmp_path / "r.png"),
                 "--diag", str(tmp_path / "d.jsonl")]) == 0
    assert load_image(tmp_path / "r.png").shape == (32, 32, 3)
    lines = [json.loads(l) for l in open(tmp_path / "d.jsonl")]
    assert len(lines) == 16 and {l["scale"] for l in lines} == {1, 2, 3, 4}


def test_eval_csv(workspace, tmp_path, capsys):
    assert main(["eval", "--images", str(workspace / "faces/images"), "--landmarks",
                 str(workspace / "faces/landmarks"), "--dict", str(workspace / "dict"),
                 "--ckpt", str(workspace / "run/checkpoint.pt"), "--out", str(tmp_path / "e.csv")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["n"] == 6 and np.isfinite(summary["psnr_db"])
    assert next(csv.reader(open(tmp_path / "e.csv")))[0] == "id"


def test_errors_exit_nonzero(workspace, tmp_path, capsys):
    assert main(["train", "--images", "x", "--landmarks", "y", "--out", "z"]) == 2
    (tmp_path / "bad").mkdir()
    face = sorted((workspace / "faces/images").glob("*.png"))[0]
    code = main(["restore", "--in", str(face), "--landmarks", str(workspace / "faces/landmarks" / (face.stem + ".txt")),
                 "--dict", str(tmp_path / "bad"), "--ckpt", str(workspace / "run/checkpoint.pt"),
                 "--out", str(tmp_path / "r.png")])
    assert code == 1 and "manifest" in capsys.readouterr().err
