import csv
import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from collabmesh import cli as cli_mod
from collabmesh.cli import cli, evaluate_predictions
from collabmesh.geometry import Mesh
from collabmesh.synth import load_dataset

TRAIN_FLAGS = ["--p", "1", "--epochs", "2", "--finetune-epochs", "1",
               "--batch-size", "4", "--lr", "1e-3", "--quiet"]


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory, runner):
    out = str(tmp_path_factory.mktemp("cli") / "data")
    res = runner.invoke(cli, ["gen-data", "--out", out, "--n", "8",
                              "--seed", "0", "--hand-vertices", "64",
                              "--no-render"])
    assert res.exit_code == 0, res.output
    return out


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, runner, data_dir):
    out = str(tmp_path_factory.mktemp("cli") / "run")
    res = runner.invoke(
        cli, ["train", "--data", data_dir, "--out", out] + TRAIN_FLAGS,
        catch_exceptions=False)
    assert res.exit_code == 0, res.output
    return out


def test_gen_data_outputs(data_dir):
    assert os.path.exists(os.path.join(data_dir, "manifest.tsv"))
    assert os.path.exists(os.path.join(data_dir, "config.json"))
    meta, scenes = load_dataset(data_dir)
    assert meta["n"] == 8 and meta["hand_vertices"] == 64
    assert len(scenes) == 8
    lines = open(os.path.join(data_dir, "manifest.tsv")).read().strip().split("\n")
    assert len(lines) == 9


def test_gen_data_deterministic(tmp_path, runner, data_dir):
    out = str(tmp_path / "again")
    res = runner.invoke(cli, ["gen-data", "--out", out, "--n", "8",
                              "--seed", "0", "--hand-vertices", "64",
                              "--no-render"])
    assert res.exit_code == 0
    a = open(os.path.join(data_dir, "manifest.tsv")).read()
    b = open(os.path.join(out, "manifest.tsv")).read()
    assert a == b


def test_gen_data_validates_flags(tmp_path, runner):
    res = runner.invoke(cli, ["gen-data", "--out", str(tmp_path / "x"),
                              "--classes", "0"])
    assert res.exit_code != 0
    res = runner.invoke(cli, ["gen-data", "--out", str(tmp_path / "x"),
                              "--contact-ratio", "1.5"])
    assert res.exit_code != 0


def test_train_outputs(run_dir):
    for name in ("checkpoint.pkl", "loss.csv", "loss_curves.png", "config.json"):
        assert os.path.exists(os.path.join(run_dir, name)), name
    payload = json.load(open(os.path.join(run_dir, "config.json")))
    assert payload["pipeline"]["hand_vertices"] == 64


def test_train_missing_dataset(tmp_path, runner):
    res = runner.invoke(cli, ["train", "--data", str(tmp_path / "nope"),
                              "--out", str(tmp_path / "out")])
    assert res.exit_code != 0


def test_eval_outputs(tmp_path, runner, data_dir, run_dir):
    out = str(tmp_path / "eval")
    res = runner.invoke(cli, ["eval", "--checkpoint",
                              os.path.join(run_dir, "checkpoint.pkl"),
                              "--data", data_dir, "--out", out,
                              "--max-interaction-scenes", "2",
                              "--export-meshes"], catch_exceptions=False)
    assert res.exit_code == 0, res.output
    with open(os.path.join(out, "metrics.csv")) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    assert list(rows[0]) == cli_mod.EVAL_COLUMNS
    assert float(rows[0]["scenes"]) == 8
    with open(os.path.join(out, "pck_curve.csv")) as fh:
        curve = list(csv.DictReader(fh))
    assert len(curve) == len(cli_mod.PCK_THRESHOLDS_MM)
    pck = [float(r["pck"]) for r in curve]
    assert all(b >= a - 1e-12 for a, b in zip(pck, pck[1:]))
    assert os.path.exists(os.path.join(out, "pck_curve.png"))
    assert os.path.exists(os.path.join(out, "report.txt"))
    assert os.path.exists(os.path.join(out, "meshes", "pred_hand_00000.obj"))


def test_eval_rig_mismatch(tmp_path, runner, run_dir):
    other = str(tmp_path / "data778")
    res = runner.invoke(cli, ["gen-data", "--out", other, "--n", "1",
                              "--no-render"])
    assert res.exit_code == 0
    res = runner.invoke(cli, ["eval", "--checkpoint",
                              os.path.join(run_dir, "checkpoint.pkl"),
                              "--data", other, "--out", str(tmp_path / "e")])
    assert res.exit_code != 0


def test_evaluate_predictions_self_is_perfect(data_dir):
    meta, scenes = load_dataset(data_dir)
    joints = [s["hand_joints"] for s in scenes]
    verts = [s["hand_vertices"] for s in scenes]
    objs = [Mesh(s["object_vertices"], s["object_faces"]) for s in scenes]
    faces = scenes[0]["object_faces"]
    report = evaluate_predictions(joints, verts, objs, scenes,
                                  faces=None, max_interaction=0)
    assert report["hand_epe_mm"] < 1e-9
    assert report["pck_20mm"] == 1.0
    assert report["pck_20mm"] <= report["pck_25mm"]


def test_resume_equivalence(tmp_path, runner, data_dir):
    full = str(tmp_path / "full")
    res = runner.invoke(cli, ["train", "--data", data_dir, "--out", full]
                        + TRAIN_FLAGS, catch_exceptions=False)
    assert res.exit_code == 0
    part = str(tmp_path / "part")
    res = runner.invoke(cli, ["train", "--data", data_dir, "--out", part,
                              "--checkpoint-every", "1", "--p", "1",
                              "--epochs", "1", "--finetune-epochs", "0",
                              "--batch-size", "4", "--lr", "1e-3", "--quiet"],
                        catch_exceptions=False)
    assert res.exit_code == 0
    res = runner.invoke(cli, ["train", "--data", data_dir, "--out", part,
                              "--resume", os.path.join(part, "checkpoint.pkl")]
                        + TRAIN_FLAGS, catch_exceptions=False)
    assert res.exit_code == 0
    assert open(os.path.join(full, "loss.csv")).read() == \
        open(os.path.join(part, "loss.csv")).read()


def test_ablate_sweep(tmp_path, runner, data_dir):
    out = str(tmp_path / "abl")
    res = runner.invoke(cli, ["ablate", "--data", data_dir, "--out", out,
                              "--p-values", "0,1", "--operators", "attention",
                              "--assoc-modes", "on,off", "--seeds", "0",
                              "--epochs", "1", "--finetune-epochs", "0",
                              "--quiet"], catch_exceptions=False)
    assert res.exit_code == 0, res.output
    with open(os.path.join(out, "ablation.csv")) as fh:
        rows = list(csv.DictReader(fh))
    # one P=0 baseline plus P=1 with and without the associative loss
    assert len(rows) == 3
    assert all(r["status"] == "ok" for r in rows)
    assert os.path.exists(os.path.join(out, "ablation.png"))


def test_ablate_bad_grid(tmp_path, runner, data_dir):
    res = runner.invoke(cli, ["ablate", "--data", data_dir,
                              "--out", str(tmp_path / "x"),
                              "--p-values", "zero"])
    assert res.exit_code != 0


def test_out_root_env(tmp_path, runner, monkeypatch):
    monkeypatch.setenv("COLLABMESH_OUT_ROOT", str(tmp_path))
    res = runner.invoke(cli, ["gen-data", "--out", "rooted", "--n", "1",
                              "--hand-vertices", "64", "--no-render"])
    assert res.exit_code == 0
    assert os.path.exists(tmp_path / "rooted" / "manifest.tsv")


def test_gradcheck_passes(runner):
    res = runner.invoke(cli, ["gradcheck", "--seed", "0"],
                        catch_exceptions=False)
    assert res.exit_code == 0, res.output
    assert "all gradient checks passed" in res.output


def test_gradcheck_detects_fault(runner):
    res = runner.invoke(cli, ["gradcheck", "--seed", "0", "--inject-fault"])
    assert res.exit_code != 0
    assert "FAIL" in res.output


def test_exit_codes(tmp_path):
    import subprocess
    import sys
    env = dict(os.environ)
    res = subprocess.run([sys.executable, "-m", "collabmesh.cli", "gen-data",
                          "--out", str(tmp_path / "d"), "--classes", "0"],
                         capture_output=True, env=env)
    assert res.returncode == 1
    res = subprocess.run([sys.executable, "-m", "collabmesh.cli", "gradcheck",
                          "--inject-fault"], capture_output=True, env=env)
    assert res.returncode == 3
