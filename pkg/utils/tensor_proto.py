"""
Tensor blob protocol for the PatchGrad training engine.

Defines the binary layout used for every tensor written to disk
(dataset images and masks, checkpoint parameters).

Blob layout (little-endian):
- Header: [magic "PGT1"(4B)][rank(4B)]
- Dims:   rank x uint32
- Data:   prod(dims) x float32, row-major
"""

import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from utils.error_manager import TensorFormatError

# ============================================================================
# Blob Structure
# ============================================================================

PGT_MAGIC = b"PGT1"
# magic (4 bytes) | rank (4 bytes)
BLOB_HEADER_FORMAT = "<4sI"
BLOB_HEADER_SIZE = struct.calcsize(BLOB_HEADER_FORMAT)
BLOB_SUFFIX = ".pgt"
FLOAT_BYTES = 4

def pack_tensor(array: np.ndarray) -> bytes:
    """Pack an array into a PGT1 blob (data cast to float32)."""
    data = np.ascontiguousarray(array, dtype="<f4")
    shape = data.shape
    header = struct.pack(BLOB_HEADER_FORMAT, PGT_MAGIC, len(shape))
    dims = struct.pack(f"<{len(shape)}I", *shape)
    return header + dims + data.tobytes()

def unpack_tensor(blob: bytes) -> np.ndarray:
    """
    Unpack a PGT1 blob.

    Raises:
        TensorFormatError: bad magic, truncated header or data, trailing bytes
    """
    if len(blob) < BLOB_HEADER_SIZE:
        raise TensorFormatError(f"blob truncated: {len(blob)} bytes is shorter than the header")

    magic, rank = struct.unpack(BLOB_HEADER_FORMAT, blob[:BLOB_HEADER_SIZE])
    if magic != PGT_MAGIC:
        raise TensorFormatError(f"bad magic bytes {magic!r}, expected {PGT_MAGIC!r}")

    dims_end = BLOB_HEADER_SIZE + 4 * rank
    if len(blob) < dims_end:
        raise TensorFormatError(f"blob truncated inside the dimension table (rank {rank})")
    shape: Tuple[int, ...] = struct.unpack(f"<{rank}I", blob[BLOB_HEADER_SIZE:dims_end])

    expected = int(np.prod(shape, dtype=np.int64)) * FLOAT_BYTES
    payload = blob[dims_end:]
    if len(payload) != expected:
        raise TensorFormatError(
            f"payload size {len(payload)} does not match shape {list(shape)} ({expected} bytes)"
        )

    return np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)

def write_tensor(path: Union[str, Path], array: np.ndarray) -> int:
    """Write one blob file; returns bytes written."""
    blob = pack_tensor(array)
    Path(path).write_bytes(blob)
    return len(blob)

def read_tensor(path: Union[str, Path]) -> np.ndarray:
    """Read one blob file."""
    return unpack_tensor(Path(path).read_bytes())

def format_shape(shape) -> str:
    """Render a shape for text manifests, e.g. 16x3x3x3 (scalar: '-')."""
    return "x".join(str(d) for d in shape) if len(shape) else "-"

def parse_shape(text: str) -> Tuple[int, ...]:
    """Inverse of format_shape."""
    if text == "-":
        return ()
    return tuple(int(d) for d in text.split("x"))
