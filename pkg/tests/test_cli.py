import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from parawave import checkpoint as ckpt
from parawave.bench import REPORT_FIELDS
from parawave.cli import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from parawave.dsp import read_wav


@pytest.fixture(scope="module")
def smoke_runs(tmp_path_factory):
    """Teacher and student trained once on the smoke preset for the whole module."""
    root = tmp_path_factory.mktemp("smoke")
    start = time.perf_counter()
    assert main(["train-teacher", "--preset", "smoke", "--out", str(root / "t")]) == EXIT_OK
    assert main(["distill", "--preset", "smoke", "--teacher", str(root / "t" / "teacher.ckpt"),
                 "--out", str(root / "d")]) == EXIT_OK
    return root, time.perf_counter() - start


def test_smoke_pipeline_is_fast_and_complete(smoke_runs):
    root, seconds = smoke_runs
    assert seconds < 60
    for name in ("config.ini", "mel_stats.txt", "teacher_metrics.csv", "teacher.ckpt", "manifest.json"):
        assert (root / "t" / name).exists()
    manifest = json.loads((root / "d" / "manifest.json").read_text())
    assert set(manifest) >= {"config_hash", "checkpoints", "metrics", "histograms", "provenance"}
    for group in ("checkpoints", "metrics", "histograms"):
        assert manifest[group] and all(os.path.exists(p) for p in manifest[group])
    header, _ = ckpt.load(root / "d" / "student.ckpt")
    assert header["teacher_digest"] == ckpt.file_digest(root / "t" / "teacher.ckpt")


def test_teacher_metrics_columns(smoke_runs):
    root, _ = smoke_runs
    lines = (root / "t" / "teacher_metrics.csv").read_text().splitlines()
    assert lines[0] == "step,nll,clip_fraction,lr"
    assert len(lines) == 201


def test_same_seed_gives_identical_checkpoint(smoke_runs, tmp_path):
    root, _ = smoke_runs
    assert main(["train-teacher", "--preset", "smoke", "--out", str(tmp_path / "again")]) == EXIT_OK
    assert (tmp_path / "again" / "teacher.ckpt").read_bytes() == (root / "t" / "teacher.ckpt").read_bytes()


@pytest.mark.parametrize("kind", ["teacher", "student"])
def test_sample_writes_bounded_deterministic_wav(smoke_runs, tmp_path, kind):
    root, _ = smoke_runs
    src = root / ("t/teacher.ckpt" if kind == "teacher" else "d/student.ckpt")
    outs = []
    for i in range(2):
        out = tmp_path / f"{kind}{i}.wav"
        assert main(["sample", "--preset", "smoke", "--checkpoint", str(src), "--T", "64", "--seed", "3",
                     "--out", str(out)]) == EXIT_OK
        outs.append(out)
    assert outs[0].read_bytes() == outs[1].read_bytes()
    clip = read_wav(outs[0])
    assert len(clip) == 64 and np.all(np.isfinite(clip.samples)) and np.abs(clip.samples).max() <= 1.0


def test_sample_beyond_conditioner_coverage(smoke_runs, tmp_path):
    root, _ = smoke_runs
    rc = main(["sample", "--preset", "smoke", "--checkpoint", str(root / "t" / "teacher.ckpt"), "--T", "5000",
               "--out", str(tmp_path / "x.wav")])
    assert rc == EXIT_USAGE


def test_distill_rejects_student_as_teacher(smoke_runs, tmp_path):
    root, _ = smoke_runs
    rc = main(["distill", "--preset", "smoke", "--teacher", str(root / "d" / "student.ckpt"),
               "--out", str(tmp_path / "d")])
    assert rc == EXIT_USAGE


def test_distill_rejects_band_mismatch(smoke_runs, tmp_path):
    root, _ = smoke_runs
    rc = main(["distill", "--preset", "smoke", "--set", "data.mel_bands=6", "--teacher",
               str(root / "t" / "teacher.ckpt"), "--out", str(tmp_path / "d")])
    assert rc == EXIT_USAGE


def test_bench_report_schema(smoke_runs, tmp_path):
    root, _ = smoke_runs
    out = tmp_path / "bench.json"
    rc = main(["bench", "--preset", "smoke", "--teacher", str(root / "t" / "teacher.ckpt"),
               "--student", str(root / "d" / "student.ckpt"), "--T", "32", "64", "--json", str(out)])
    assert rc == EXIT_OK
    report = json.loads(out.read_text())
    assert [r["T"] for r in report] == [32, 64]
    assert all(set(r) == set(REPORT_FIELDS) for r in report)


def test_eval_kl_prints_json(smoke_runs, capsys):
    root, _ = smoke_runs
    rc = main(["eval-kl", "--preset", "smoke", "--teacher", str(root / "t" / "teacher.ckpt"),
               "--student", str(root / "d" / "student.ckpt"), "--draws", "20"])
    assert rc == EXIT_OK
    result = json.loads(capsys.readouterr().out)
    assert result["draws"] == 20 and result["T"] == 64
    assert result["sequence_kl"] >= 0 and result["std_error"] >= 0


def test_invalid_config_exits_2(tmp_path, capsys):
    assert main(["train-teacher", "--preset", "smoke", "--set", "data.fft_size=100",
                 "--out", str(tmp_path)]) == EXIT_USAGE
    assert "fft_size" in capsys.readouterr().err
    assert main(["train-teacher", "--config", str(tmp_path / "none.ini")]) == EXIT_USAGE


@pytest.mark.filterwarnings("ignore:overflow encountered:RuntimeWarning")
def test_numeric_failure_exits_3_with_step(tmp_path, capsys):
    rc = main(["train-teacher", "--preset", "smoke", "--set", "optim.lr=1e300", "--set", "teacher.steps=5",
               "--out", str(tmp_path)])
    assert rc == EXIT_NUMERIC
    assert "step 1" in capsys.readouterr().err


def test_verify_suite_passes(capsys):
    assert main(["verify", "stft"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out


def test_module_entry_point_and_bad_suite():
    proc = subprocess.run([sys.executable, "-m", "parawave", "verify", "nonsense"], capture_output=True, text=True)
    assert proc.returncode == 2
    proc = subprocess.run([sys.executable, "-m", "parawave", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "parawave" in proc.stdout
