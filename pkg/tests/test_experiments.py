"""Tests for training runs, their artifacts and the ablation suite."""

import csv
from dataclasses import replace

import pytest

import engine.experiments
from engine.experiments import (ABLATION_FILE, CHECKPOINT_DIR, MEMORY_EVENTS, MEMORY_REPORT, METRICS_FILE,
                                TRAIN_LOG, AblationResult, evaluate_checkpoint, load_run_datasets,
                                run_ablation, run_training, train_and_evaluate, variant_config,
                                write_ablation_csv)
from memory.estimator import estimate_peak
from metrics.report import CSV_COLUMNS, MetricsReport
from nets.checkpoint import save_checkpoint
from synthdata.dataset_io import save_dataset
from utils.artifact_store import directory_digest
from utils.error_manager import AccountingError, BudgetExceededError, ConfigError

@pytest.fixture
def cls_run(tmp_path, cls_dataset, cls_config):
    save_dataset(cls_dataset, tmp_path / "data")
    return replace(cls_config, data_dir=str(tmp_path / "data"), out_dir=str(tmp_path / "run"))

class TestTrainingRun:

    def test_artifacts(self, cls_run, tmp_path):
        outcome = run_training(cls_run, progress=False)
        out = tmp_path / "run"
        for name in (CHECKPOINT_DIR, TRAIN_LOG, METRICS_FILE, MEMORY_REPORT, MEMORY_EVENTS, "run.cfg"):
            assert (out / name).exists(), name
        metrics_lines = (out / METRICS_FILE).read_text(encoding="utf-8").splitlines()
        assert metrics_lines == [MetricsReport.csv_header(), outcome.metrics.to_csv_row()]
        assert outcome.estimate.peak_bytes == outcome.report.peak_bytes
        assert "estimate - ledger peak: 0 bytes" in (out / MEMORY_REPORT).read_text(encoding="utf-8")
        assert outcome.checkpoint_digest == directory_digest(out / CHECKPOINT_DIR)

    def test_estimate_mismatch_is_an_accounting_error(self, cls_run, cls_dataset, tmp_path, monkeypatch):
        def off_by_one(*args):
            estimate = estimate_peak(*args)
            estimate.phases.append(("extra", estimate.peak_bytes + 1))
            return estimate

        monkeypatch.setattr(engine.experiments, "estimate_peak", off_by_one)
        with pytest.raises(AccountingError):
            train_and_evaluate(cls_run, cls_dataset, cls_dataset, out_dir=tmp_path / "mismatch", progress=False)
        assert not (tmp_path / "mismatch" / METRICS_FILE).exists()

    def test_checkpoint_reproduces_metrics(self, cls_run, cls_dataset, tmp_path):
        outcome = run_training(cls_run, progress=False)
        metrics = evaluate_checkpoint(tmp_path / "run" / CHECKPOINT_DIR, cls_dataset)
        assert metrics.to_csv_row() == outcome.metrics.to_csv_row()

    def test_budget_failure_still_writes_checkpoint(self, cls_run, cls_dataset, tmp_path):
        out = tmp_path / "failed"
        with pytest.raises(BudgetExceededError):
            train_and_evaluate(replace(cls_run, memory_budget_bytes=0), cls_dataset, cls_dataset,
                               out_dir=out, progress=False)
        assert (out / CHECKPOINT_DIR / "manifest.txt").is_file()
        assert (out / MEMORY_EVENTS).is_file()

    def test_data_dir_required(self, cls_config):
        with pytest.raises(ConfigError):
            load_run_datasets(cls_config)

    def test_checkpoint_without_run_config(self, tmp_path, cls_dataset):
        save_checkpoint(tmp_path / "bare", {})
        with pytest.raises(ConfigError):
            evaluate_checkpoint(tmp_path / "bare", cls_dataset)

class TestAblation:

    def test_variant_configs(self, cls_config):
        assert variant_config(cls_config, "patch_global", 4).use_global_patch
        patch_only = variant_config(cls_config, "patch", 4)
        assert patch_only.mode == "patch" and not patch_only.use_global_patch and patch_only.seed == 4
        assert variant_config(cls_config, "downsampled", 1).mode == "downsampled"

    def test_ablation_csv_layout(self, tmp_path):
        metrics = MetricsReport(accuracy=0.5, f1=0.5, iou=0.25, balanced_accuracy=0.5, plr=1.0, nlr=1.0)
        result = AblationResult(rows=[("patch_global", 0, metrics, 120, 4000),
                                      ("patch", 0, metrics, 100, 3000),
                                      ("downsampled", 0, metrics, 90, 5000)])
        path = write_ablation_csv(tmp_path / ABLATION_FILE, result)
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["variant", "seed"] + list(CSV_COLUMNS) + ["parameters", "peak_bytes"]
        assert len(rows) == 1 + 3 + 3
        assert rows[-1][:2] == ["downsampled", "mean"]
        assert result.parameter_overhead == {"patch_global": 30, "patch": 10}

    @pytest.mark.slow
    def test_ablation_runs_every_variant(self, cls_run, tmp_path):
        result = run_ablation(cls_run, seeds=[0], out_dir=tmp_path / "ablation")
        assert [row[0] for row in result.rows] == ["patch_global", "patch", "downsampled"]
        assert (tmp_path / "ablation" / ABLATION_FILE).is_file()
