import json
import struct

import numpy as np
import pytest

from tsalab.cli import build_config, build_parser, main, parse_axes
from tsalab.core import load_config
from tsalab.metrics import read_csv

SMALL = ["--D", "5", "--P", "2", "--eta", "0.5", "--stream_len", "100", "--window", "30", "--n_eval", "300",
         "--attack.grid_points", "31"]


def test_predict_prints_and_writes(tmp_path, capsys):
    assert main(["predict", "--C", "1", "--P", "1,10", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    rows = read_csv(tmp_path / "predict.csv")
    assert out.splitlines()[0] == "C,P,rho,strategy,d_bar,a_bar,accuracy,regime"
    assert float(rows[0]["d_bar"]) == pytest.approx(0.75)
    assert rows[1]["regime"] == "Result3"


def test_run_writes_outputs(tmp_path, capsys):
    assert main(["run", *SMALL, "--streams", "2", "--out", str(tmp_path)]) == 0
    assert "d=" in capsys.readouterr().out
    assert load_config(tmp_path / "config.yaml").D == 5
    assert {p.name for p in tmp_path.iterdir()} == {"config.yaml", "stats.csv", "trace_000.csv", "trace_001.csv"}


def test_sweep_strict_failure_exit_code(tmp_path, capsys):
    code = main(["sweep", *SMALL, "--axis", "clean_steps=1,200", "--streams", "1", "--strict",
                 "--out", str(tmp_path)])
    assert code == 1
    summary = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert summary["error"] == "sweep points failed" and len(summary["failed"]) == 1
    assert "CleanPhaseError" in summary["failed"][0]["error"]
    assert (tmp_path / "sweep.csv").exists()


def test_sweep_without_strict_succeeds(tmp_path):
    assert main(["sweep", *SMALL, "--axis", "clean_steps=1,200", "--streams", "1", "--out", str(tmp_path),
                 "--plot", "distance-vs-C"]) == 0
    assert len(read_csv(tmp_path / "distance-vs-C.csv")) == 1


def test_invalid_config_reports_error(capsys):
    assert main(["run", "--P", "3", "--rho", "0.5"]) == 1
    assert "rho*P" in capsys.readouterr().err


def test_override_precedence(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("C: 0.5\nP: 4\nattack:\n  strategy: constant\n")
    args = build_parser().parse_args(["run", "--config", str(path), "--set", "P=8", "--set", "C=2",
                                      "--C", "3"])
    cfg = build_config(args)
    assert (cfg.C, cfg.P, cfg.strategy) == (3, 8, "constant")


def test_parse_axes():
    assert parse_axes(["C=0.5,1", "attack.strategy=greedy,constant"]) == {
        "C": [0.5, 1], "attack.strategy": ["greedy", "constant"]}


def write_idx(path, type_code, arr):
    head = struct.pack(">HBB", 0, type_code, arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    path.write_bytes(head + arr.astype(">u1").tobytes())


def test_mnist_prep_on_tiny_files(tmp_path, capsys):
    rng = np.random.default_rng(0)
    labels = np.array([1, 7, 3] * 40, dtype=np.uint8)
    images = rng.integers(0, 50, (len(labels), 8, 8)).astype(np.uint8)
    images[labels == 1, :, 3:5] = 255
    images[labels == 7, 1, :] = 255
    write_idx(tmp_path / "img", 0x08, images)
    write_idx(tmp_path / "lab", 0x08, labels)
    cache = tmp_path / "out" / "proj.bin"
    assert main(["mnist-prep", "--images", str(tmp_path / "img"), "--labels", str(tmp_path / "lab"),
                 "--D", "3", "--cache", str(cache)]) == 0
    assert "wrote 80 samples" in capsys.readouterr().out
    assert cache.exists()


def test_mnist_run_rejects_rotate_with_cache(tmp_path, capsys):
    assert main(["mnist-run", "--cache", str(tmp_path / "x"), "--rotate", "5"]) == 1
    assert "--rotate" in capsys.readouterr().err
