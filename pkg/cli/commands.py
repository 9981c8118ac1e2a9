"""
Command implementations of the patchgrad command line.

Every command returns an ExitCode; run() maps engine exceptions to exit
codes and reports them through the error manager.
"""

import argparse
import csv
import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional

from autograd.gradcheck import run_suite
from engine.experiments import (ABLATION_FILE, evaluate_checkpoint, run_ablation, run_training,
                                write_metrics_csv)
from engine.gradcheck_cases import all_cases
from engine.models import InputSpec
from memory.estimator import compare_modes, estimate_peak
from metrics.report import MetricsReport
from synthdata.dataset_io import MANIFEST_NAME, from_cls_samples, from_seg_samples, load_dataset, save_dataset
from synthdata.synth import gen_cls, gen_seg
from utils.artifact_store import read_manifest
from utils.config import CLASSIFICATION, TASK_ALIASES, RunConfig, config, load_run_config, resolve_threads
from utils.error_manager import ConfigError, ErrorCategory, ExitCode, PatchGradError, error_manager
from utils.logger import level_from_name, set_global_level, setup_logger

logger = setup_logger(__name__)

DEFAULT_TRIALS = 20
DEFAULT_SEEDS = 3
DEFAULT_IMAGE_SIZE = 256
DEFAULT_CLASSES = 5

# ============================================================================
# Commands
# ============================================================================

def cmd_gen_data(args: argparse.Namespace) -> ExitCode:
    if args.count < 1:
        logger.error(f"count must be ≥ 1, got {args.count}")
        return ExitCode.USAGE
    threads = resolve_threads(args.threads)
    if TASK_ALIASES[args.task] == CLASSIFICATION:
        samples = gen_cls(args.seed, args.count, args.size, args.size, args.classes, threads=threads)
        dataset = from_cls_samples(samples, args.seed, args.classes)
    else:
        samples = gen_seg(args.seed, args.count, args.size, args.size, threads=threads)
        dataset = from_seg_samples(samples, args.seed)
    save_dataset(dataset, args.out)
    return ExitCode.SUCCESS

def cmd_train(args: argparse.Namespace) -> ExitCode:
    run_config = load_run_config(args.config)
    outcome = run_training(run_config, resolve_threads(args.threads), progress=not args.quiet)
    print(MetricsReport.csv_header())
    print(outcome.metrics.to_csv_row())
    return ExitCode.SUCCESS

def cmd_eval(args: argparse.Namespace) -> ExitCode:
    dataset = load_dataset(args.data)
    metrics = evaluate_checkpoint(args.checkpoint, dataset, resolve_threads(args.threads))
    if args.out:
        write_metrics_csv(args.out, metrics)
        logger.info(f"Wrote metrics to {args.out}")
    print(MetricsReport.csv_header())
    print(metrics.to_csv_row())
    return ExitCode.SUCCESS

def cmd_grad_check(args: argparse.Namespace) -> ExitCode:
    result = run_suite(trials=args.trials, seed=args.seed, cases=all_cases())
    for report in result.reports:
        print(report.summary())
    failed = [r.name for r in result.reports if not r.passed]
    if failed:
        logger.error(f"Gradient check failed for: {', '.join(failed)}")
        return ExitCode.CHECK_FAILED
    logger.info(f"All {len(result.reports)} gradient checks passed")
    return ExitCode.SUCCESS

def mem_report_inputs(run_config: RunConfig, size: Optional[int], classes: Optional[int]) -> InputSpec:
    """Input shape for an estimate: --size/--classes, else the configured dataset manifest."""
    if size is not None:
        num_classes = (classes or DEFAULT_CLASSES) if run_config.task == CLASSIFICATION else 1
        return InputSpec(task=run_config.task, channels=1, M=size, N=size, num_classes=num_classes)
    if not run_config.data_dir:
        raise ConfigError(["data_dir: required by mem-report unless --size is given"])
    manifest = read_manifest(Path(run_config.data_dir) / MANIFEST_NAME)
    return InputSpec(task=run_config.task, channels=1, M=int(manifest["M"]), N=int(manifest["N"]),
                     num_classes=int(manifest.get("K", 1)))

def cmd_mem_report(args: argparse.Namespace) -> ExitCode:
    run_config = load_run_config(args.config)
    inputs = mem_report_inputs(run_config, args.size, args.classes)
    batch = args.batch or run_config.batch_size
    estimate = estimate_peak(run_config, inputs, batch)
    comparison = compare_modes(run_config, inputs, batch)
    print(estimate.render())
    print(comparison.render())
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["phase", "running_total_bytes"])
            writer.writerows(estimate.phases)
            writer.writerow(["full_image_peak", comparison.full_image_peak])
            writer.writerow(["patch_mode_peak", comparison.patch_mode_peak])
        logger.info(f"Wrote memory estimate to {args.out}")
    return ExitCode.SUCCESS

def cmd_ablate(args: argparse.Namespace) -> ExitCode:
    run_config = load_run_config(args.config)
    result = run_ablation(run_config, list(range(args.seeds)), resolve_threads(args.threads), args.out)
    out = Path(args.out or run_config.out_dir or "runs/ablation")
    print((out / ABLATION_FILE).read_text(encoding="utf-8"), end="")
    logger.info(f"Ablation finished: {len(result.rows)} runs")
    return ExitCode.SUCCESS

COMMANDS: Dict[str, Callable[[argparse.Namespace], ExitCode]] = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "grad-check": cmd_grad_check,
    "mem-report": cmd_mem_report,
    "ablate": cmd_ablate,
}

# ============================================================================
# Parser
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (1 = bit-deterministic; default PATCHGRAD_THREADS or all CPUs)")
    common.add_argument("--verbose", action="store_true", help="log at DEBUG level")

    parser = argparse.ArgumentParser(prog="patchgrad", description="Patch-based memory-budgeted training engine")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", parents=[common], help="generate a synthetic dataset")
    gen.add_argument("--task", choices=["cls", "seg"], required=True)
    gen.add_argument("--out", required=True, help="output dataset directory")
    gen.add_argument("--count", type=int, required=True)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--size", type=int, default=DEFAULT_IMAGE_SIZE, help="image side M=N")
    gen.add_argument("--classes", type=int, default=DEFAULT_CLASSES, help="classification classes K")

    train = sub.add_parser("train", parents=[common], help="train and evaluate from a run config")
    train.add_argument("--config", required=True)
    train.add_argument("--quiet", action="store_true", help="no progress bar")

    ev = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a dataset")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", default=None, help="metrics CSV path")

    grad = sub.add_parser("grad-check", parents=[common], help="finite-difference gradient suite")
    grad.add_argument("--trials", type=int, default=DEFAULT_TRIALS)
    grad.add_argument("--seed", type=int, default=0)

    mem = sub.add_parser("mem-report", parents=[common], help="estimate peak memory without training")
    mem.add_argument("--config", required=True)
    mem.add_argument("--size", type=int, default=None, help="image side instead of the dataset's")
    mem.add_argument("--classes", type=int, default=None)
    mem.add_argument("--batch", type=int, default=None)
    mem.add_argument("--out", default=None, help="CSV of the phase totals")

    ablate = sub.add_parser("ablate", parents=[common], help="patch+global vs patch vs downsampled")
    ablate.add_argument("--config", required=True)
    ablate.add_argument("--seeds", type=int, default=DEFAULT_SEEDS)
    ablate.add_argument("--out", default=None)
    return parser

def run(argv: Optional[List[str]] = None) -> int:
    """Parse argv, run one command and return its exit code."""
    args = build_parser().parse_args(argv)
    set_global_level(logging.DEBUG if args.verbose else level_from_name(config.get("logging.level", "INFO")))
    error_manager.clear_errors()
    try:
        code = int(COMMANDS[args.command](args))
    except PatchGradError as e:
        error_manager.report_exception(e, component=args.command)
        code = int(e.exit_code)
    except OSError as e:
        error_manager.report_error(ErrorCategory.SYSTEM, "io_error", component=args.command, details=str(e))
        code = int(ExitCode.USAGE)
    if code != ExitCode.SUCCESS:
        summary = error_manager.get_error_summary()
        logger.error(f"{args.command} exited with code {code}: {summary['total']} error(s), "
                     f"by category {summary['by_category']}")
    return code
