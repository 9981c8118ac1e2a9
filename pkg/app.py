"""
Main launcher for the PatchGrad training engine.

Usage:
    python app.py gen-data --task cls --out data/cls --count 100 --seed 7
    python app.py train --config runs/cls.cfg
    python app.py eval --checkpoint runs/cls/checkpoint --data data/cls_test
    python app.py grad-check
    python app.py mem-report --config runs/cls.cfg --size 1024
    python app.py ablate --config runs/cls.cfg --seeds 3
"""

import argparse
import os
import sys

from utils.config import resolve_threads
from utils.logger import setup_logger

logger = setup_logger(__name__)

BLAS_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

def pin_blas_threads(argv) -> int:
    """Resolve --threads before numpy loads; a single thread also pins BLAS."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--threads", type=int, default=None)
    known, _ = pre.parse_known_args(argv)
    threads = resolve_threads(known.threads)
    if threads == 1:
        for var in BLAS_THREAD_VARS:
            os.environ[var] = "1"
    return threads

def main(argv=None) -> int:
    """Main entry point for the command line."""
    argv = sys.argv[1:] if argv is None else argv
    threads = pin_blas_threads(argv)
    logger.info("=" * 60)
    logger.info(f"PatchGrad starting ({threads} thread{'s' if threads != 1 else ''})")
    logger.info("=" * 60)

    from cli.commands import run

    try:
        exit_code = run(argv)
        logger.info(f"Exiting with code {exit_code}")
        return exit_code
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return 130

if __name__ == "__main__":
    sys.exit(main())
