import json
import subprocess
import sys
from pathlib import Path

import pytest

from slowfast.cli import main

from cases import R50_SHAPES

GOLDEN = Path(__file__).parent / "golden"


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_describe_golden(capsys):
    code, out, _ = run(capsys, "describe")
    assert code == 0
    assert out.encode() == (GOLDEN / "describe_r50.tsv").read_bytes()
    rows = [l.split("\t") for l in out.splitlines()[1:]]
    got = {}
    for stage, path, t, s, c in rows:
        got.setdefault(stage, {})[path] = (int(t), int(s), int(c))
    assert {k: (v["slow"], v["fast"]) for k, v in got.items()} == R50_SHAPES


def test_describe_structured(capsys):
    code, out, _ = run(capsys, "describe", "--structured", "--spatial", "256")
    rows = [json.loads(l) for l in out.splitlines()]
    assert code == 0 and rows[-1]["s"] == 8


def test_cost_total(capsys):
    code, out, _ = run(capsys, "cost")
    assert code == 0
    gflops = float(out.splitlines()[-1].split("\t")[1])
    assert gflops == pytest.approx(36.1, rel=0.02)


def test_sweep(capsys):
    code, out, _ = run(capsys, "sweep", "--values", "1/8,1/32")
    assert code == 0 and "1/32" in out and "1/8" in out


def test_lr_dump(capsys):
    code, out, _ = run(capsys, "lr-dump", "--eta", "1.6", "--n-max", "100")
    vals = [float(l.split("\t")[1]) for l in out.splitlines()[1:]]
    assert code == 0 and len(vals) == 101
    assert vals[0] == 1.6 and abs(vals[-1]) < 1e-15
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_gradcheck(capsys):
    code, out, _ = run(capsys, "gradcheck")
    assert code == 0 and float(out) < 1e-4


def test_gradcheck_failure_exit(capsys):
    code, _, err = run(capsys, "gradcheck", "--samples", "20", "--tolerance", "1e-30")
    assert code == 1 and "check failed" in err


def test_usage_errors(capsys):
    assert run(capsys, "frobnicate")[0] == 2
    assert run(capsys, "cost", "--bogus")[0] == 2
    assert run(capsys, "cost", "not-an-override")[0] == 2
    assert run(capsys)[0] == 2


def test_validation_errors(capsys, tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("T = 4\n\ntau = sixteen\n")
    code, _, err = run(capsys, "describe", "--config", str(bad))
    assert code == 1 and "line 3" in err
    assert run(capsys, "cost", "omega=3")[0] == 1
    assert run(capsys, "describe", "--config", str(tmp_path / "missing.cfg"))[0] == 1
    assert run(capsys, "eval", "--checkpoint", str(tmp_path / "x"), "--data", str(tmp_path))[0] == 1


def test_threads_env(capsys, monkeypatch):
    monkeypatch.setenv("SFB_THREADS", "1")
    assert run(capsys, "cost")[0] == 0
    monkeypatch.setenv("SFB_THREADS", "zero")
    assert run(capsys, "cost")[0] == 1


def test_synth_train_eval(capsys, tmp_path):
    data = tmp_path / "data"
    assert run(capsys, "synth-gen", "--out", str(data), "--classes", "4", "--clips", "2", "--seed", "3")[0] == 0
    assert len(list(data.glob("*.sfv"))) == 8 and (data / "index.tsv").exists()
    out = tmp_path / "run"
    code, stdout, _ = run(capsys, "train-toy", "--data", str(data), "--val", str(data), "--iters", "3",
                          "--batch", "2", "--warmup", "1", "--out", str(out))
    assert code == 0 and "val_top1" in json.loads(stdout)
    assert len((out / "train_log.jsonl").read_text().splitlines()) == 3
    code, stdout, _ = run(capsys, "eval", "--config", str(out / "config.txt"), "--checkpoint",
                          str(out / "final.sfck"), "--data", str(data), "--clips", "2", "--crops", "1",
                          "--spatial", "32", "--structured")
    metrics = {r["metric"]: r["value"] for r in map(json.loads, stdout.splitlines())}
    assert code == 0 and 0 <= metrics["top1"] <= 100


def test_detect_eval(capsys, tmp_path):
    (tmp_path / "gt.txt").write_text("f1 0 0 0.5 0.5 0\nf2 0.5 0.5 1 1 1\n")
    (tmp_path / "pred.txt").write_text("f1 0 0 0.5 0.5 0.9 0.1\nf2 0.5 0.5 1 1 0.2 0.7\n")
    (tmp_path / "worse.txt").write_text("f1 0 0 0.5 0.5 0.1 0.1\nf2 0.6 0.0 1 0.4 0.2 0.7\n")
    code, out, _ = run(capsys, "detect-eval", "--gt", str(tmp_path / "gt.txt"), "--pred", str(tmp_path / "pred.txt"))
    assert code == 0 and out.splitlines()[-1] == "mAP\t1.000000"
    code, out, _ = run(capsys, "detect-eval", "--gt", str(tmp_path / "gt.txt"), "--pred",
                       str(tmp_path / "worse.txt"), "--compare", str(tmp_path / "pred.txt"))
    assert code == 0 and out.splitlines()[0] == "#class\tpred\tcompare\tgain"


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "slowfast", "lr-dump", "--n-max", "2"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and res.stdout.startswith("#iter\tlr\n0\t1.6\n")
