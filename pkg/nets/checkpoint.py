"""
Checkpoint directories.

Layout:
- manifest.txt: one line per parameter, "name filename shape" (shape as 16x3x3x3)
- one PGT1 blob per parameter (param_%03d.pgt)
- run.cfg: the RunConfig that produced the parameters
"""

from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from utils.artifact_store import staged_directory
from utils.config import RunConfig, parse_run_config
from utils.error_manager import ConfigError, DatasetConsistencyError, DatasetFormatError
from utils.logger import setup_logger
from utils.tensor_proto import BLOB_SUFFIX, format_shape, parse_shape, read_tensor, write_tensor

logger = setup_logger(__name__)

MANIFEST_NAME = "manifest.txt"
RUN_CONFIG_NAME = "run.cfg"

def save_checkpoint(directory: Union[str, Path], arrays: Dict[str, np.ndarray],
                    run_config: Optional[RunConfig] = None) -> Path:
    """
    Write parameters (qualified name -> array) atomically to `directory`.

    Returns:
        The checkpoint directory
    """
    directory = Path(directory)
    with staged_directory(directory) as staging:
        lines = []
        total_bytes = 0
        for i, name in enumerate(sorted(arrays)):
            filename = f"param_{i:03d}{BLOB_SUFFIX}"
            total_bytes += write_tensor(staging / filename, arrays[name])
            lines.append(f"{name} {filename} {format_shape(arrays[name].shape)}")
        (staging / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")
        if run_config is not None:
            (staging / RUN_CONFIG_NAME).write_text(run_config.to_text(), encoding="utf-8")
    logger.info(f"Checkpoint saved to {directory} ({len(arrays)} tensors, {total_bytes} bytes)")
    return directory

def load_checkpoint(directory: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Optional[RunConfig]]:
    """
    Read a checkpoint directory.

    Raises:
        DatasetFormatError: missing directory/manifest, malformed manifest line
        DatasetConsistencyError: blob shape differs from the manifest, or a blob is missing
        TensorFormatError: corrupt blob
    """
    directory = Path(directory)
    manifest = directory / MANIFEST_NAME
    if not manifest.is_file():
        raise DatasetFormatError(f"no checkpoint manifest at {manifest}")

    arrays: Dict[str, np.ndarray] = {}
    for lineno, raw in enumerate(manifest.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        parts = raw.split()
        if len(parts) != 3:
            raise DatasetFormatError(f"{manifest}:{lineno}: expected 'name filename shape', got '{raw}'")
        name, filename, shape_text = parts
        blob_path = directory / filename
        if not blob_path.is_file():
            raise DatasetConsistencyError(f"checkpoint lists {filename} but it is missing")
        data = read_tensor(blob_path)
        if data.shape != parse_shape(shape_text):
            raise DatasetConsistencyError(
                f"{filename} has shape {list(data.shape)}, manifest says {shape_text}"
            )
        arrays[name] = data

    run_config = None
    cfg_path = directory / RUN_CONFIG_NAME
    if cfg_path.is_file():
        try:
            run_config = parse_run_config(cfg_path.read_text(encoding="utf-8"), source=str(cfg_path))
        except ConfigError as e:
            raise DatasetFormatError(f"checkpoint run config is invalid: {e}") from e

    logger.info(f"Checkpoint loaded from {directory} ({len(arrays)} tensors)")
    return arrays, run_config
