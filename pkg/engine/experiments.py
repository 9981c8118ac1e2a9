"""
Run orchestration: one training run with its artifacts, and the ablation
suite comparing patch+global, patch-only and the downsampled baseline.

Artifacts of a training run (in run_config.out_dir):
    checkpoint/          parameters + run.cfg
    train_log.csv        one line per inner iteration
    metrics.csv          acc,f1,iou,bacc,plr,nlr on the test data
    memory_report.txt    ledger table and the analytic estimate
    memory_events.csv    the ledger event log
"""

import csv
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from engine.evaluate import evaluate
from engine.models import InputSpec, build_model
from engine.trainer import TrainReport, Trainer, make_trainer, total_optimizer_steps
from memory.estimator import ConfigEstimate, estimate_peak
from memory.ledger import MemoryLedger, render_table, write_event_log
from metrics.report import CSV_COLUMNS, MetricsReport
from nets.checkpoint import load_checkpoint, save_checkpoint
from synthdata.dataset_io import SynthDataset, load_dataset
from utils.artifact_store import directory_digest
from utils.config import RunConfig
from utils.error_manager import AccountingError, BudgetExceededError, ConfigError
from utils.logger import setup_logger

logger = setup_logger(__name__)

CHECKPOINT_DIR = "checkpoint"
TRAIN_LOG = "train_log.csv"
METRICS_FILE = "metrics.csv"
MEMORY_REPORT = "memory_report.txt"
MEMORY_EVENTS = "memory_events.csv"
ABLATION_FILE = "ablation.csv"

VARIANTS = ("patch_global", "patch", "downsampled")

def input_spec(dataset: SynthDataset) -> InputSpec:
    M, N = dataset.image_size
    return InputSpec(task=dataset.task, channels=dataset.channels, M=M, N=N, num_classes=dataset.num_classes)

def load_run_datasets(run_config: RunConfig) -> Tuple[SynthDataset, SynthDataset]:
    """Training data and test data (the training data when no test_data_dir is set)."""
    if not run_config.data_dir:
        raise ConfigError(["data_dir: required for training"])
    train = load_dataset(run_config.data_dir)
    test = load_dataset(run_config.test_data_dir) if run_config.test_data_dir else train
    if test.task != train.task or test.image_size != train.image_size:
        raise ConfigError([f"test_data_dir: {test.task} {test.image_size} data does not match "
                           f"training data {train.task} {train.image_size}"])
    return train, test

def write_metrics_csv(path: Union[str, Path], metrics: MetricsReport) -> Path:
    path = Path(path)
    path.write_text(MetricsReport.csv_header() + "\n" + metrics.to_csv_row() + "\n", encoding="utf-8")
    return path

# ============================================================================
# Single Run
# ============================================================================

@dataclass
class TrainingOutcome:
    report: TrainReport
    metrics: Optional[MetricsReport]
    estimate: ConfigEstimate
    ledger: MemoryLedger
    out_dir: Optional[Path] = None
    checkpoint_digest: Optional[str] = None

def train_and_evaluate(run_config: RunConfig, train: SynthDataset, test: SynthDataset,
                       threads: int = 1, out_dir: Optional[Path] = None,
                       progress: bool = True) -> TrainingOutcome:
    """
    Train run_config on `train`, evaluate on `test`, and write artifacts to out_dir if given.

    Raises:
        BudgetExceededError: the ledger budget was hit; the checkpoint and
            memory report are still written when out_dir is given
        AccountingError: a category was not released, or the analytic
            estimate disagrees with the ledger peak
    """
    inputs = input_spec(train)
    total_steps = total_optimizer_steps(run_config, len(train))
    estimate = estimate_peak(run_config, inputs, min(run_config.batch_size, len(train)))
    ledger = MemoryLedger()
    log_path = out_dir / TRAIN_LOG if out_dir else None
    trainer = make_trainer(run_config, inputs, total_steps, ledger, log_path)
    digest = None
    try:
        try:
            report = trainer.fit(train, progress=progress)
        except BudgetExceededError:
            if out_dir:
                _write_run_artifacts(out_dir, trainer, estimate)
            raise
        leaked = ledger.leaked_categories()
        if leaked:
            raise AccountingError(f"categories not released after training: {[c.value for c in leaked]}")
        if estimate.peak_bytes != report.peak_bytes:
            raise AccountingError(f"estimated peak {estimate.peak_bytes} B differs from the ledger peak "
                                  f"{report.peak_bytes} B")
        metrics = evaluate(trainer.model, test, run_config.batch_size, run_config.chunk_size, threads)
        report.final_metrics = metrics
        if out_dir:
            digest = _write_run_artifacts(out_dir, trainer, estimate)
            write_metrics_csv(out_dir / METRICS_FILE, metrics)
    finally:
        trainer.close()
    return TrainingOutcome(report=report, metrics=metrics, estimate=estimate, ledger=ledger, out_dir=out_dir,
                           checkpoint_digest=digest)

def _write_run_artifacts(out_dir: Path, trainer: Trainer, estimate: ConfigEstimate) -> str:
    """Checkpoint, memory report and event log; returns the checkpoint digest."""
    checkpoint = save_checkpoint(out_dir / CHECKPOINT_DIR, trainer.model.state_arrays(), trainer.run_config)
    ledger = trainer.ledger
    text = render_table(ledger) + "\n" + estimate.render()
    text += f"estimate - ledger peak: {estimate.peak_bytes - ledger.peak} bytes\n"
    (out_dir / MEMORY_REPORT).write_text(text, encoding="utf-8")
    write_event_log(ledger, out_dir / MEMORY_EVENTS)
    digest = directory_digest(checkpoint)
    logger.info(f"Checkpoint digest {digest}")
    return digest

def run_training(run_config: RunConfig, threads: int = 1, progress: bool = True) -> TrainingOutcome:
    """The `train` command: load data, train, evaluate, write every artifact."""
    train, test = load_run_datasets(run_config)
    out_dir = Path(run_config.out_dir or "runs/latest")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run.cfg").write_text(run_config.to_text(), encoding="utf-8")
    logger.info(f"Training {run_config.mode} {run_config.task} model on {len(train)} samples -> {out_dir}")
    start = time.perf_counter()
    outcome = train_and_evaluate(run_config, train, test, threads, out_dir, progress)
    logger.info(f"Run finished in {time.perf_counter() - start:.1f}s, peak {outcome.report.peak_bytes} B")
    return outcome

def evaluate_checkpoint(checkpoint_dir: Union[str, Path], dataset: SynthDataset,
                        threads: int = 1) -> MetricsReport:
    """
    Rebuild the model stored in a checkpoint and evaluate it.

    Raises:
        DatasetFormatError: missing or malformed checkpoint manifest
        ConfigError: the checkpoint holds no run.cfg to rebuild from
    """
    arrays, run_config = load_checkpoint(checkpoint_dir)
    if run_config is None:
        raise ConfigError([f"{checkpoint_dir}: checkpoint has no run.cfg"])
    model = build_model(run_config, input_spec(dataset))
    model.load_arrays(arrays)
    return evaluate(model, dataset, run_config.batch_size, run_config.chunk_size, threads)

# ============================================================================
# Ablation
# ============================================================================

def variant_config(run_config: RunConfig, variant: str, seed: int) -> RunConfig:
    if variant == "patch_global":
        return replace(run_config, mode="patch", use_global_patch=True, seed=seed)
    if variant == "patch":
        return replace(run_config, mode="patch", use_global_patch=False, seed=seed)
    return replace(run_config, mode="downsampled", seed=seed)

@dataclass
class AblationResult:
    """Per-variant, per-seed metrics plus parameter counts and peaks."""
    rows: List[Tuple[str, int, MetricsReport, int, int]] = field(default_factory=list)

    def metrics_of(self, variant: str) -> List[MetricsReport]:
        return [metrics for name, _, metrics, _, _ in self.rows if name == variant]

    def mean(self, variant: str, attr: str) -> float:
        return float(np.mean([getattr(m, attr) for m in self.metrics_of(variant)]))

    def parameters(self, variant: str) -> int:
        return next(params for name, _, _, params, _ in self.rows if name == variant)

    @property
    def parameter_overhead(self) -> Dict[str, int]:
        """Extra parameters of each patch variant over the downsampled baseline."""
        base = self.parameters("downsampled")
        return {v: self.parameters(v) - base for v in VARIANTS if v != "downsampled"}

def run_ablation(run_config: RunConfig, seeds: Sequence[int], threads: int = 1,
                 out_dir: Optional[Union[str, Path]] = None) -> AblationResult:
    """
    Train and evaluate every variant for every seed on the configured data.

    Writes ablation.csv (per run and per-variant means) to out_dir or
    run_config.out_dir.
    """
    train, test = load_run_datasets(run_config)
    result = AblationResult()
    runs = [(variant, seed) for seed in seeds for variant in VARIANTS]
    for variant, seed in tqdm(runs, desc="ablation"):
        config = variant_config(run_config, variant, seed)
        config.validate()
        outcome = train_and_evaluate(config, train, test, threads, progress=False)
        result.rows.append((variant, seed, outcome.metrics, outcome.report.parameter_count,
                            outcome.report.peak_bytes))
        logger.info(f"{variant} seed {seed}: acc={outcome.metrics.accuracy:.4f} iou={outcome.metrics.iou:.4f}")

    out = Path(out_dir or run_config.out_dir or "runs/ablation")
    out.mkdir(parents=True, exist_ok=True)
    write_ablation_csv(out / ABLATION_FILE, result)
    for variant, extra in result.parameter_overhead.items():
        logger.info(f"{variant}: {extra:+d} parameters over the downsampled baseline")
    return result

def write_ablation_csv(path: Path, result: AblationResult) -> Path:
    columns = ["variant", "seed"] + list(CSV_COLUMNS) + ["parameters", "peak_bytes"]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for variant, seed, metrics, params, peak in result.rows:
            writer.writerow([variant, seed] + metrics.to_csv_row().split(",") + [params, peak])
        for variant in VARIANTS:
            if not result.metrics_of(variant):
                continue
            means = [result.mean(variant, attr) for attr in
                     ("accuracy", "f1", "iou", "balanced_accuracy", "plr", "nlr")]
            writer.writerow([variant, "mean"] + [f"{v:.4f}" if np.isfinite(v) else "inf" for v in means]
                            + [result.parameters(variant), ""])
    logger.info(f"Wrote ablation table to {path}")
    return path
