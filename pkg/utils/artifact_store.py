"""
Artifact storage for the PatchGrad training engine.

Handles staged directory writes (a directory appears complete or not at all),
SHA-256 digests of files and directories, and key=value manifests.
"""

import hashlib
import os
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Iterator, Union

from utils.logger import setup_logger
from utils.error_manager import DatasetFormatError

logger = setup_logger(__name__)

CHUNK_SIZE = 64 * 1024  # 64 KB read chunks for hashing

def calculate_file_checksum(file_path: Union[str, Path]) -> str:
    """Calculate SHA-256 checksum of a file."""
    sha256_hash = hashlib.sha256()
    with open(file_path, 'rb') as f:
        for chunk in iter(lambda: f.read(CHUNK_SIZE), b""):
            sha256_hash.update(chunk)
    return sha256_hash.hexdigest()

def directory_digest(directory: Union[str, Path]) -> str:
    """
    SHA-256 over every file in a directory tree (relative names and contents),
    visited in sorted order. Two directories with equal digests hold
    bitwise-identical artifacts.
    """
    directory = Path(directory)
    digest = hashlib.sha256()
    for path in sorted(p for p in directory.rglob("*") if p.is_file()):
        digest.update(path.relative_to(directory).as_posix().encode("utf-8"))
        digest.update(calculate_file_checksum(path).encode("ascii"))
    return digest.hexdigest()

@contextmanager
def staged_directory(target: Union[str, Path]) -> Iterator[Path]:
    """
    Yield a temporary sibling directory; on success it replaces `target`.

    On error the staging directory is removed and `target` is left untouched,
    so readers never observe a half-written dataset or checkpoint.
    """
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        yield staging
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    if target.exists():
        shutil.rmtree(target)
    os.replace(staging, target)
    logger.debug(f"Committed artifact directory {target}")

def write_manifest(path: Union[str, Path], entries: Dict[str, object]) -> None:
    """Write key=value lines in insertion order."""
    lines = [f"{key}={value}" for key, value in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

def read_manifest(path: Union[str, Path]) -> Dict[str, str]:
    """Read key=value lines, ignoring blanks and '#' comments."""
    path = Path(path)
    if not path.is_file():
        raise DatasetFormatError(f"manifest not found: {path}")
    entries: Dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DatasetFormatError(f"{path}:{lineno}: expected key=value, got '{raw}'")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries
