"""End-to-end tests of the command line."""

import os

import pytest

import app
from cli.commands import build_parser, run
from engine.experiments import CHECKPOINT_DIR
from synthdata.dataset_io import MANIFEST_NAME
from utils.artifact_store import directory_digest, read_manifest
from utils.config import THREADS_ENV
from utils.error_manager import ExitCode, error_manager

def _write_config(path, **fields):
    lines = [f"{key}={value}" for key, value in fields.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path

TINY_CLS = {"task": "cls", "grid_m": 2, "grid_n": 2, "sampling_rate": 0.25, "inner_iterations": 3,
            "widths": "2,2", "feature_dim": 4, "baseline_size": 32, "epochs": 1, "batch_size": 2,
            "seed": 0, "log_every": 1}

@pytest.fixture
def cls_data(tmp_path):
    out = tmp_path / "data"
    code = run(["gen-data", "--task", "cls", "--out", str(out), "--count", "4", "--seed", "7",
                "--size", "128", "--classes", "2", "--threads", "1"])
    assert code == ExitCode.SUCCESS
    return out

class TestGenData:

    def test_manifest_follows_flags(self, cls_data):
        manifest = read_manifest(cls_data / MANIFEST_NAME)
        assert (manifest["task"], manifest["count"], manifest["M"], manifest["K"], manifest["seed"]) == \
            ("cls", "4", "128", "2", "7")

    def test_same_flags_same_bytes(self, tmp_path):
        args = ["gen-data", "--task", "seg", "--count", "2", "--seed", "3", "--size", "64"]
        assert run(args + ["--out", str(tmp_path / "a"), "--threads", "1"]) == ExitCode.SUCCESS
        assert run(args + ["--out", str(tmp_path / "b"), "--threads", "2"]) == ExitCode.SUCCESS
        assert directory_digest(tmp_path / "a") == directory_digest(tmp_path / "b")

    def test_zero_count_is_usage_error(self, tmp_path):
        code = run(["gen-data", "--task", "seg", "--out", str(tmp_path / "x"), "--count", "0", "--seed", "1"])
        assert code == ExitCode.USAGE
        assert not (tmp_path / "x").exists()

    def test_output_under_regular_file(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x", encoding="utf-8")
        code = run(["gen-data", "--task", "seg", "--out", str(blocker / "data"), "--count", "1", "--seed", "1",
                    "--size", "64"])
        assert code == ExitCode.USAGE

    def test_unknown_task_rejected_by_parser(self):
        with pytest.raises(SystemExit) as info:
            build_parser().parse_args(["gen-data", "--task", "det", "--out", "x", "--count", "1", "--seed", "1"])
        assert info.value.code == 2

class TestTrainAndEval:

    def test_train_then_eval(self, tmp_path, cls_data, capsys):
        config = _write_config(tmp_path / "run.cfg", data_dir=cls_data, out_dir=tmp_path / "run", **TINY_CLS)
        assert run(["train", "--config", str(config), "--quiet", "--threads", "1"]) == ExitCode.SUCCESS
        train_lines = capsys.readouterr().out.strip().splitlines()
        assert train_lines[-2] == "acc,f1,iou,bacc,plr,nlr"

        code = run(["eval", "--checkpoint", str(tmp_path / "run" / CHECKPOINT_DIR), "--data", str(cls_data),
                    "--out", str(tmp_path / "eval.csv"), "--threads", "1"])
        assert code == ExitCode.SUCCESS
        eval_lines = capsys.readouterr().out.strip().splitlines()
        assert eval_lines[-1] == train_lines[-1]
        assert (tmp_path / "eval.csv").read_text(encoding="utf-8").splitlines()[1] == train_lines[-1]

    def test_budget_exceeded(self, tmp_path, cls_data):
        config = _write_config(tmp_path / "run.cfg", data_dir=cls_data, out_dir=tmp_path / "run",
                               memory_budget_bytes=0, **TINY_CLS)
        assert run(["train", "--config", str(config), "--quiet"]) == ExitCode.BUDGET
        assert (tmp_path / "run" / CHECKPOINT_DIR / "manifest.txt").is_file()
        summary = error_manager.get_error_summary()
        assert summary["total"] == 1
        assert summary["by_category"] == {"memory": 1}

    def test_errors_do_not_leak_into_the_next_command(self, tmp_path):
        bad = _write_config(tmp_path / "bad.cfg", task="cls", grid_m=0)
        assert run(["train", "--config", str(bad)]) == ExitCode.USAGE
        assert error_manager.get_error_summary()["by_category"] == {"config": 1}
        good = _write_config(tmp_path / "cls.cfg", task="cls")
        assert run(["mem-report", "--config", str(good), "--size", "128"]) == ExitCode.SUCCESS
        assert error_manager.get_active_errors() == []

    def test_single_thread_training_is_reproducible(self, tmp_path, cls_data, monkeypatch):
        # out_dir is relative, so run.cfg is the same text in both working directories
        config = _write_config(tmp_path / "run.cfg", data_dir=cls_data, out_dir="run", **TINY_CLS)
        for name in ("a", "b"):
            (tmp_path / name).mkdir()
            monkeypatch.chdir(tmp_path / name)
            assert run(["train", "--config", str(config), "--quiet", "--threads", "1"]) == ExitCode.SUCCESS
        assert (tmp_path / "a" / "run" / CHECKPOINT_DIR).is_dir()
        assert directory_digest(tmp_path / "a" / "run") == directory_digest(tmp_path / "b" / "run")

    def test_invalid_config(self, tmp_path):
        config = _write_config(tmp_path / "bad.cfg", task="cls", grid_m=0)
        assert run(["train", "--config", str(config)]) == ExitCode.USAGE

    def test_missing_checkpoint(self, tmp_path, cls_data):
        code = run(["eval", "--checkpoint", str(tmp_path / "nothing"), "--data", str(cls_data)])
        assert code == ExitCode.USAGE

class TestChecksAndReports:

    def test_grad_check(self, capsys):
        assert run(["grad-check", "--trials", "1"]) == ExitCode.SUCCESS
        out = capsys.readouterr().out
        lines = {line.split()[0]: line.split()[1] for line in out.splitlines() if line.strip()}
        assert lines["conv2d"] == "PASS"
        assert lines["patch_path_seg"] == "PASS"
        assert "FAIL" not in lines.values()

    def test_mem_report(self, tmp_path, capsys):
        config = _write_config(tmp_path / "seg.cfg", task="seg", grid_m=4, grid_n=4, sampling_rate=0.25,
                               inner_iterations=2, widths="2,2,2", seg_channels=2, batch_size=1)
        code = run(["mem-report", "--config", str(config), "--size", "64", "--out", str(tmp_path / "mem.csv")])
        assert code == ExitCode.SUCCESS
        out = capsys.readouterr().out
        assert "estimated peak" in out
        assert "ratio (patch / full)" in out
        rows = (tmp_path / "mem.csv").read_text(encoding="utf-8").splitlines()
        assert rows[0] == "phase,running_total_bytes"
        assert rows[-1].startswith("patch_mode_peak,")

    def test_mem_report_needs_size_or_data(self, tmp_path):
        config = _write_config(tmp_path / "cls.cfg", task="cls")
        assert run(["mem-report", "--config", str(config)]) == ExitCode.USAGE

class TestLauncher:

    def test_single_thread_pins_blas(self, monkeypatch):
        for var in app.BLAS_THREAD_VARS:
            monkeypatch.setenv(var, "8")
        assert app.pin_blas_threads(["grad-check", "--threads", "1"]) == 1
        assert all(os.environ[var] == "1" for var in app.BLAS_THREAD_VARS)

    def test_threads_from_environment(self, monkeypatch):
        for var in app.BLAS_THREAD_VARS:
            monkeypatch.setenv(var, "8")
        monkeypatch.setenv(THREADS_ENV, "4")
        assert app.pin_blas_threads(["mem-report"]) == 4
        assert os.environ["OMP_NUM_THREADS"] == "8"

    def test_main_returns_exit_code(self, tmp_path):
        config = _write_config(tmp_path / "cls.cfg", task="cls")
        assert app.main(["mem-report", "--config", str(config), "--size", "128"]) == ExitCode.SUCCESS
