import json
import subprocess
import sys

import numpy as np
import pytest

from memto.checkpoint import load_checkpoint
from memto.cli import DATASET_P, main
from memto.data import load_csv
from memto.detection import read_trace

TINY_TRAIN = ["--L", "20", "--C", "8", "--memory-items", "3", "--max-epochs", "2", "--batch-size", "8", "--seed", "0"]


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """One tiny synth + train shared by the tests below."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["synth", "--T", "600", "--test-T", "300", "--n", "2", "--seed", "3", "--out", str(data)]) == 0
    out = root / "run"
    assert main(["train", "--train-csv", str(data / "train.csv"), "--out", str(out)] + TINY_TRAIN) == 0
    return root, data, out


def test_synth_is_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["synth", "--T", "300", "--n", "3", "--seed", "5", "--out", str(tmp_path / d)]) == 0
    for f in ("train.csv", "test.csv", "synth_spec.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    test = load_csv(tmp_path / "a" / "test.csv", has_labels=True)
    assert test.T == 150 and test.n == 3
    assert load_csv(tmp_path / "a" / "train.csv").T == 300


def test_synth_rejects_bad_ratio(tmp_path, capsys):
    assert main(["synth", "--anomaly-ratio", "1.5", "--out", str(tmp_path / "x")]) == 2
    assert "anomaly-ratio" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_train_missing_data_writes_nothing(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["train", "--train-csv", str(tmp_path / "nope.csv"), "--out", str(out)] + TINY_TRAIN)
    assert code != 0
    assert "nope.csv" in capsys.readouterr().err
    assert not (out / "checkpoint.memto").exists()


def test_train_outputs(run):
    _, _, out = run
    ckpt = load_checkpoint(out / "checkpoint.memto")
    assert ckpt.phase == "phase2"
    assert load_checkpoint(out / "phase1.memto").phase == "phase1"
    assert ckpt.model_config.n == 2 and ckpt.model_config.M == 3
    report = json.loads((out / "train_report.json").read_text())
    assert report["phase1"]["val_loss"] and report["phase2"]["val_loss"]
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["C"] == 8 and cfg["lambda"] == 0.01
    assert set(json.loads((out / "timings.json").read_text())) >= {"phase1", "phase2"}


def test_score_rows_and_criteria(run, tmp_path):
    _, data, out = run
    ck = str(out / "checkpoint.memto")
    test_csv = str(data / "test.csv")
    assert main(["score", "--checkpoint", ck, "--data", test_csv, "--labels", "--out", str(tmp_path / "b.csv")]) == 0
    both = read_trace(tmp_path / "b.csv")
    assert len(both) == 300
    np.testing.assert_array_equal(both.labels, load_csv(test_csv, has_labels=True).labels)
    args = ["score", "--checkpoint", ck, "--data", test_csv, "--labels", "--criterion", "isd", "--out", str(tmp_path / "i.csv")]
    assert main(args) == 0
    isd = read_trace(tmp_path / "i.csv")
    np.testing.assert_array_equal(isd.scores, isd.isd)
    np.testing.assert_array_equal(isd.isd, both.isd)


def test_score_dimension_mismatch(run, tmp_path, capsys):
    _, _, out = run
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join("1.0,2.0,3.0" for _ in range(30)) + "\n")
    code = main(["score", "--checkpoint", str(out / "checkpoint.memto"), "--data", str(bad), "--out", str(tmp_path / "s.csv")])
    assert code == 3
    err = capsys.readouterr().err
    assert "n=2" in err and "n=3" in err


def test_resume_phase1(run, tmp_path):
    _, data, out = run
    args = ["train", "--train-csv", str(data / "train.csv"), "--out", str(tmp_path / "r"), "--resume-phase1", str(out / "phase1.memto")]
    assert main(args + TINY_TRAIN) == 0
    assert load_checkpoint(tmp_path / "r" / "checkpoint.memto").phase == "phase2"


def _perfect_trace(path, T=200):
    labels = np.zeros(T, int)
    labels[40:45] = 1
    labels[150] = 1
    lines = ["index,score,lsd,isd,threshold,raw_pred,adjusted_pred,label"]
    for t in range(T):
        s = 10.0 if labels[t] else 0.0
        lines.append(f"{t},{s},{s},{s},,,,{labels[t]}")
    path.write_text("\n".join(lines) + "\n")


def test_eval_perfect_and_sweep(tmp_path, capsys):
    trace = tmp_path / "test.csv"
    _perfect_trace(trace)
    pool = tmp_path / "pool.csv"
    pool.write_text("index,score,lsd,isd,threshold,raw_pred,adjusted_pred,label\n" + "".join(f"{t},0.0,0,0,,,,\n" for t in range(100)))
    assert main(["eval", "--trace", str(trace), "--pool", str(pool), "--p", "1", "--out", str(tmp_path / "e.json"), "--out-trace", str(tmp_path / "t.csv")]) == 0
    res = json.loads((tmp_path / "e.json").read_text())["rows"][0]
    assert res["f1"] == 1.0
    assert read_trace(tmp_path / "t.csv").adjusted_pred.sum() == 6

    assert main(["eval", "--trace", str(trace), "--pool", str(pool), "--p-sweep", "0.5,1,2", "--out", str(tmp_path / "s.json")]) == 0
    rows = json.loads((tmp_path / "s.json").read_text())["rows"]
    assert [r["p_percent"] for r in rows] == [0.5, 1.0, 2.0]


@pytest.mark.parametrize("name,p", [("SMD", 0.5), ("SWaT", 0.1), ("MSL", 1.0)])
def test_eval_dataset_p_echo(tmp_path, name, p):
    trace = tmp_path / "test.csv"
    _perfect_trace(trace)
    assert DATASET_P[name] == p
    assert main(["eval", "--trace", str(trace), "--pool", str(trace), "--dataset", name, "--out", str(tmp_path / "e.json")]) == 0
    assert json.loads((tmp_path / "e.json").read_text())["rows"][0]["p_percent"] == p


def test_eval_flags_are_exclusive(tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["eval", "--trace", "a", "--pool", "b", "--p", "1", "--dataset", "SMD", "--out", "c"])
    assert e.value.code == 2


def test_analyze_lsd(run, tmp_path, capsys):
    _, data, out = run
    ck = str(out / "checkpoint.memto")
    assert main(["analyze", "lsd", "--checkpoint", ck, "--data", str(data / "test.csv"), "--out", str(tmp_path / "a.json")]) == 0
    rep = json.loads((tmp_path / "a.json").read_text())
    assert rep["ratio"] == pytest.approx(rep["mean_lsd_normal"] / rep["mean_lsd_abnormal"])
    assert rep["n_normal"] + rep["n_abnormal"] == 300

    clean = tmp_path / "clean.csv"
    clean.write_text("\n".join("0.1,0.2,0" for _ in range(40)) + "\n")
    assert main(["analyze", "lsd", "--checkpoint", ck, "--data", str(clean), "--out", str(tmp_path / "b.json")]) == 3
    assert "abnormal" in capsys.readouterr().err


def test_config_rejects_unknown_keys(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"C": 8, "colour": "blue"}))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "colour" in capsys.readouterr().err


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "memto.cli", "synth", "--T", "100", "--n", "2", "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "train.csv").exists()
