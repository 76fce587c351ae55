import json
import os
import subprocess
import sys

import pytest

from conftest import TINY_SETS
from seadate.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    docs = [json.loads(line) for line in out.splitlines() if line.strip()]
    return code, docs, err


def with_sets(*argv, extra=()):
    args = list(argv)
    for s in list(TINY_SETS) + list(extra):
        args += ["--set", s]
    return args


@pytest.fixture(scope="module")
def data_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_data")
    assert main(with_sets("gen-data", "--out", str(root))) == 0
    return root


def test_gen_data_writes_both_splits(data_root, capsys, tmp_path):
    code, docs, _ = run(capsys, *with_sets("gen-data", "--out", str(tmp_path / "d")))
    assert code == 0
    assert docs[0]["train"]["count"] == 8 and docs[0]["test"]["start"] == 8
    for split in ("train", "test"):
        assert os.path.exists(tmp_path / "d" / split / "manifest.json")
    with open(tmp_path / "d" / "config.json") as fh:
        assert json.load(fh)["train_count"] == 8
    a = json.loads((tmp_path / "d" / "train" / "manifest.json").read_text())["samples"]
    b = json.loads((data_root / "train" / "manifest.json").read_text())["samples"]
    assert [e["sha256"] for e in a] == [e["sha256"] for e in b]


def test_default_gen_data_writes_250_samples(capsys, tmp_path):
    code, docs, _ = run(capsys, "gen-data", "--out", str(tmp_path / "d"))
    assert code == 0 and docs[0]["train"]["count"] + docs[0]["test"]["count"] == 250


def test_invalid_complementarity_exits_1_naming_field(capsys, tmp_path):
    code, docs, err = run(capsys, "gen-data", "--out", str(tmp_path / "d"), "--set", "gen.complementarity=1.5")
    assert code == 1 and docs == []
    assert "complementarity" in err


def test_gradcheck_primitives(capsys, tmp_path):
    code, docs, err = run(capsys, "gradcheck", "--scope", "primitives", "--out", str(tmp_path))
    assert code == 0 and docs[0]["passed"] and "PASS" in err
    assert len(docs[0]["results"]) == 16
    assert json.loads((tmp_path / "gradcheck.json").read_text())["passed"]


def test_gradcheck_failure_exit_code(capsys, monkeypatch):
    from seadate import checks
    from seadate.gradcheck import GradCheckReport
    monkeypatch.setattr(checks, "run_scope", lambda scope, seed=0: {"x": [GradCheckReport("bad", 1.0)]})
    code, docs, _ = run(capsys, "gradcheck", "--scope", "primitives")
    assert code == 2 and not docs[0]["passed"]


def test_train_zero_epochs_writes_initial_checkpoint_only(data_root, capsys, tmp_path):
    code, docs, _ = run(capsys, *with_sets("train", "--data", str(data_root), "--out", str(tmp_path / "t"),
                                           extra=["train.epochs=0"]))
    assert code == 0 and docs[0]["steps"] == 0
    assert os.listdir(tmp_path / "t" / "checkpoints") == ["initial"]
    assert (tmp_path / "t" / "trace.jsonl").read_text() == ""


def test_train_then_eval(data_root, capsys, tmp_path):
    code, docs, _ = run(capsys, *with_sets("train", "--data", str(data_root), "--out", str(tmp_path / "t")))
    assert code == 0 and docs[0]["steps"] == 2
    ck = docs[0]["checkpoint"]
    trace = (tmp_path / "t" / "trace.csv").read_text().splitlines()
    assert trace[0].startswith("step,epoch") and len(trace) == 3
    for split in ("train", "test"):
        code, docs, _ = run(capsys, "eval", "--checkpoint", ck, "--data", str(data_root), "--split", split,
                            "--out", str(tmp_path / f"e_{split}"))
        assert code == 0
        assert set(docs[0]) == {"map50", "map75", "map", "images"}
        assert all(0.0 <= docs[0][k] <= 1.0 for k in ("map50", "map75", "map"))
    assert (tmp_path / "e_test" / "pr_curve.csv").exists()
    with open(tmp_path / "e_test" / "config.json") as fh:
        assert json.load(fh)["conf_thresh"] == 0.01


def test_eval_class_mismatch_exits_1(data_root, capsys, tmp_path):
    code, docs, _ = run(capsys, *with_sets("train", "--data", str(data_root), "--out", str(tmp_path / "t"),
                                           extra=["train.epochs=0"]))
    other = tmp_path / "two_class"
    assert main(with_sets("gen-data", "--out", str(other), extra=["gen.num_classes=2", "backbone.num_classes=2"])) == 0
    capsys.readouterr()
    code, docs, err = run(capsys, "eval", "--checkpoint", str(tmp_path / "t" / "checkpoints" / "initial"),
                          "--data", str(other), "--out", str(tmp_path / "e"))
    assert code == 1 and "classes" in err


def test_missing_data_exits_1(capsys, tmp_path):
    code, _, err = run(capsys, "train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o"))
    assert code == 1 and err.startswith("error:")


def test_ablate_subset(data_root, capsys, tmp_path):
    code, docs, _ = run(capsys, *with_sets("ablate", "--data", str(data_root), "--out", str(tmp_path / "a"),
                                           "--cells", "dtf_pos2,dtf_off_cl_off"))
    assert code == 0
    assert [c["name"] for c in docs[0]["cells"]] == ["dtf_pos2", "dtf_off_cl_off"]
    code, _, err = run(capsys, *with_sets("ablate", "--data", str(data_root), "--out", str(tmp_path / "b"),
                                          "--cells", "nope"))
    assert code == 1 and "nope" in err


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "seadate.cli", "gen-data", "--out", str(tmp_path),
                           "--set", "gen.complementarity=2"], capture_output=True, text=True)
    assert proc.returncode == 1 and "complementarity" in proc.stderr and proc.stdout == ""
