import csv
import hashlib
import json

import numpy as np
import pytest

from abfrkan import cli
from abfrkan import volume as V
from abfrkan.cli import main

SMALL = {"dims": [24, 28, 24], "outer_radii": [10, 12, 10], "thickness": 3, "T": 40, "n_regions": 4}


def run(*argv):
    return main([str(a) for a in argv])


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def digest(directory):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(directory.iterdir()) if p.is_file()}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    conf = root / "small.json"
    conf.write_text(json.dumps(SMALL))
    assert run("phantom", "--config", conf, "--n", 10, "--seed", 5, "--out", root / "ph") == 0
    assert run("anchors", "--mask", root / "ph" / "mask.abfv", "--H", 8, "--s", 6, "--tau", 60,
               "--seed", 5, "--out", root / "an") == 0
    assert run("represent", "--manifest", root / "ph" / "manifest.csv", "--mask", root / "ph" / "mask.abfv",
               "--anchors", root / "an" / "anchors.json", "--N", 24, "--sizes", "4,6,8",
               "--variance-repeats", 3, "--seed", 5, "--out", root / "rep") == 0
    return root


# --- phantom ---------------------------------------------------------------------------

def test_phantom_manifest(pipeline):
    m = rows(pipeline / "ph" / "manifest.csv")
    assert len(m) == 10
    assert [r["label"] for r in m] == ["0", "1"] * 5
    assert all((pipeline / "ph" / r["path"]).exists() for r in m)
    vol = V.load_raw(pipeline / "ph" / m[0]["path"])
    assert vol.data.shape == (40, 24, 28, 24)
    cfg = json.loads((pipeline / "ph" / "config.json").read_text())
    assert cfg["seed"] == 5 and cfg["dims"] == [24, 28, 24]


def test_phantom_deterministic(pipeline, tmp_path):
    conf = pipeline / "small.json"
    assert run("phantom", "--config", conf, "--n", 10, "--seed", 5, "--out", tmp_path) == 0
    assert digest(tmp_path) == digest(pipeline / "ph")


def test_phantom_rejects_zero_subjects(tmp_path):
    assert run("phantom", "--n", 0, "--seed", 1, "--out", tmp_path) == 2


def test_seed_is_required(tmp_path, monkeypatch):
    monkeypatch.delenv("ABFR_SEED", raising=False)
    assert run("phantom", "--n", 1, "--out", tmp_path) == 2


def test_env_seed_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("ABFR_SEED", "5")
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps(SMALL))
    assert run("phantom", "--config", conf, "--n", 2, "--out", tmp_path / "a") == 0
    assert run("phantom", "--config", conf, "--n", 2, "--seed", 5, "--out", tmp_path / "b") == 0
    assert digest(tmp_path / "a") == digest(tmp_path / "b")


def test_config_precedence(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"n": 3, "T": 50, "seed": 9}))
    cfg = cli.resolve("phantom", {"config": str(conf), "T": 70, "seed": None}, env={})
    assert (cfg["n"], cfg["T"], cfg["seed"], cfg["noise_sigma"]) == (3, 70, 9, 1.0)


def test_bad_config_file(tmp_path):
    (tmp_path / "c.json").write_text("{not json")
    assert run("phantom", "--config", tmp_path / "c.json", "--seed", 1, "--out", tmp_path) == 2


# --- anchors --------------------------------------------------------------------------------

def test_anchor_outputs(pipeline):
    d = pipeline / "an"
    for name in ("anchors.json", "anchors.abfl", "boundary_distances.csv", "boundary_histogram.csv",
                 "anchor_summary.csv", "config.json"):
        assert (d / name).exists(), name
    assert len(rows(d / "boundary_distances.csv")) == 8


def test_anchors_missing_mask(tmp_path):
    assert run("anchors", "--mask", tmp_path / "nope.abfv", "--seed", 1, "--out", tmp_path) == 2


def test_anchors_zero_H(pipeline, tmp_path):
    assert run("anchors", "--mask", pipeline / "ph" / "mask.abfv", "--H", 0, "--seed", 1, "--out", tmp_path) == 2


def test_anchors_infeasible_tau(pipeline, tmp_path, capsys):
    code = run("anchors", "--mask", pipeline / "ph" / "mask.abfv", "--H", 4, "--s", 4, "--tau", 65,
               "--seed", 1, "--out", tmp_path)
    assert code == 2 and "acceptance rate" in capsys.readouterr().err


def test_grid_versus_random_on_default_phantom(tmp_path):
    assert run("phantom", "--n", 1, "--T", 10, "--seed", 0, "--out", tmp_path / "ph") == 0
    mask = tmp_path / "ph" / "mask.abfv"
    assert run("anchors", "--mask", mask, "--mode", "grid", "--seed", 0, "--out", tmp_path / "g") == 0
    assert run("anchors", "--mask", mask, "--mode", "random", "--seed", 0, "--out", tmp_path / "r") == 0
    g = float(rows(tmp_path / "g" / "anchor_summary.csv")[0]["mean_distance"])
    r = float(rows(tmp_path / "r" / "anchor_summary.csv")[0]["mean_distance"])
    assert r < g


# --- represent ---------------------------------------------------------------------------------

def test_represent_outputs(pipeline):
    d = pipeline / "rep"
    assert len(rows(d / "manifest.csv")) == 10
    flags = rows(d / "flags.csv")
    assert all(f["status"] == "ok" for f in flags)
    cov = rows(d / "coverage.csv")
    assert all(float(c["iterative_coverage"]) >= 0 for c in cov)
    var = rows(d / "variance.csv")
    assert [int(v["R"]) for v in var] == [1, 2, 3]


def test_represent_rerun_identical(pipeline, tmp_path):
    assert run("represent", "--manifest", pipeline / "ph" / "manifest.csv", "--mask", pipeline / "ph" / "mask.abfv",
               "--anchors", pipeline / "an" / "anchors.json", "--N", 24, "--sizes", "4,6,8",
               "--variance-repeats", 3, "--seed", 5, "--out", tmp_path) == 0
    assert digest(tmp_path) == digest(pipeline / "rep")


def test_represent_zero_volume_flags(pipeline, tmp_path):
    V.save_raw(V.Volume4D(np.zeros((40, 24, 28, 24))), tmp_path / "zero.abfv")
    (tmp_path / "m.csv").write_text("subject_id,path,label\nzero,zero.abfv,0\n")
    assert run("represent", "--manifest", tmp_path / "m.csv", "--mask", pipeline / "ph" / "mask.abfv",
               "--anchors", pipeline / "an" / "anchors.json", "--N", 8, "--sizes", "6",
               "--variance-repeats", 0, "--seed", 1, "--out", tmp_path / "o") == 0
    f = rows(tmp_path / "o" / "flags.csv")[0]
    assert int(f["degenerate_pairs"]) == 8 * 8 and int(f["constant_anchors"]) == 8
    from abfrkan.sampling import load_representation
    assert np.all(load_representation(tmp_path / "o" / "zero.abfr").F_bar == 0.0)


def test_represent_partial_failure(pipeline, tmp_path):
    (tmp_path / "m.csv").write_text(
        "subject_id,path,label\n"
        f"ok,{pipeline / 'ph' / 'sub-0000.abfv'},0\n"
        "gone,missing.abfv,1\n")
    code = run("represent", "--manifest", tmp_path / "m.csv", "--mask", pipeline / "ph" / "mask.abfv",
               "--anchors", pipeline / "an" / "anchors.json", "--N", 8, "--sizes", "6",
               "--variance-repeats", 0, "--seed", 1, "--out", tmp_path / "o")
    assert code == 1
    status = {r["subject_id"]: r["status"] for r in rows(tmp_path / "o" / "flags.csv")}
    assert status == {"ok": "ok", "gone": "failed"}


# --- train / bench / eval -------------------------------------------------------------------------

TRAIN = ["--epochs", 2, "--embed-dim", 8, "--n-heads", 2, "--n-layers", 1, "--folds", 5, "--grid-size", 4]


def test_train_hybrid_outputs(pipeline, tmp_path):
    code = run("train", "--reps", pipeline / "rep" / "manifest.csv", "--encoder-block", "fastkan",
               "--head-block", "wavkan", "--seed", 3, "--out", tmp_path, *TRAIN)
    assert code == 0
    for i in range(5):
        assert (tmp_path / f"fold_{i}.abfk").exists()
        assert rows(tmp_path / f"fold_{i}_log.csv")[0].keys() == {"epoch", "lr", "train_loss", "val_acc", "val_auc"}
    assert len(rows(tmp_path / "metrics.csv")) == 5
    assert [r["stat"] for r in rows(tmp_path / "summary.csv")] == ["mean", "std"]
    assert len(rows(tmp_path / "predictions.csv")) == 10
    from abfrkan.model import load_model
    assert load_model(tmp_path / "fold_0.abfk").cfg.name == "fastkan-wavkan"


def test_unknown_variant_is_usage_error(pipeline, tmp_path, capsys):
    code = run("train", "--reps", pipeline / "rep" / "manifest.csv", "--encoder-block", "splinekan",
               "--seed", 3, "--out", tmp_path)
    err = capsys.readouterr().err
    assert code == 2 and "efficientkan" in err and "chebykan" in err


def test_bench_and_eval(pipeline, tmp_path, capsys):
    code = run("bench", "--reps", pipeline / "rep" / "manifest.csv", "--configs", "mlp-mlp,chebykan-mlp",
               "--seed", 3, "--out", tmp_path / "b", *TRAIN[:-4], "--folds", 2)
    assert code == 0
    bench = rows(tmp_path / "b" / "bench.csv")
    assert [b["config"] for b in bench] == ["mlp-mlp", "chebykan-mlp"]
    assert int(bench[0]["params"]) < int(bench[1]["params"])
    assert run("bench", "--reps", pipeline / "rep" / "manifest.csv", "--configs", "mlp",
               "--seed", 3, "--out", tmp_path / "c") == 2

    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    a.write_text("fold,acc,auc,f1,precision,recall,specificity\n" +
                 "".join(f"{i},0.{8 + i % 2},0.9,0.8,0.8,0.8,0.8\n" for i in range(5)))
    b.write_text("fold,acc,auc,f1,precision,recall,specificity\n" +
                 "".join(f"{i},0.{6 + i % 3},0.7,0.8,0.8,0.8,0.8\n" for i in range(5)))
    capsys.readouterr()
    assert run("eval", a, b, "--out", tmp_path / "t.csv") == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "metric,t,p,dof,degenerate" and lines[1].startswith("acc,")
    assert rows(tmp_path / "t.csv")[2]["degenerate"] == "1"


def test_eval_missing_file(tmp_path):
    assert run("eval", tmp_path / "a.csv", tmp_path / "b.csv") == 2


# --- nifti-info -------------------------------------------------------------------------------

def test_nifti_info(tmp_path, capsys):
    (tmp_path / "v.nii").write_bytes(V.build_nifti_bytes(np.ones((3, 2, 2, 2))))
    assert run("nifti-info", tmp_path / "v.nii") == 0
    info = json.loads(capsys.readouterr().out)
    assert isinstance(info, dict) and info
    (tmp_path / "bad.nii").write_bytes(b"\x00" * 10)
    assert run("nifti-info", tmp_path / "bad.nii") == 2


def test_no_command_is_usage_error():
    assert run() == 2
