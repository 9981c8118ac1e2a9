"""
The Z-block: per-image cache of patch features.

Two layouts:
- grid:   storage [d, m, n]; one d-vector per patch (classification)
- canvas: storage [C, M, N]; one C x ph x pw map per patch, placed at the
          patch's pixel position (segmentation)

Each cell carries two flags. `filled` marks cells written at least once in
the current outer step; `fresh` marks cells written by the latest update.
Only fresh cells are connected to the tape: stacking Z-blocks into a batch
tensor routes the upstream gradient back to the feature rows that produced
the fresh cells, and stale cells act as constants.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from autograd.tensor import Tensor, element_bytes, get_dtype, make_result
from patches.grid import PatchGrid
from utils.error_manager import ContractError, DimensionError, PatchIndexError
from utils.logger import setup_logger

logger = setup_logger(__name__)

GRID = "grid"
CANVAS = "canvas"

@dataclass
class FreshSource:
    """Fresh cell `cell` holds row `row` of the tape tensor `source`."""
    cell: int
    source: Tensor
    row: int

@dataclass
class ZBlock:
    grid: PatchGrid
    layout: str
    channels: int
    storage: np.ndarray = None
    filled: np.ndarray = None
    fresh: np.ndarray = None
    sources: List[FreshSource] = field(default_factory=list)

    def __post_init__(self):
        if self.layout not in (GRID, CANVAS):
            raise ContractError(f"unknown Z-block layout '{self.layout}'")
        if self.channels < 1:
            raise DimensionError(f"Z-block needs at least one channel, got {self.channels}")
        if self.storage is None:
            self.storage = np.zeros(self.shape, dtype=get_dtype())
        if self.filled is None:
            self.filled = np.zeros(self.grid.cells, dtype=bool)
        if self.fresh is None:
            self.fresh = np.zeros(self.grid.cells, dtype=bool)

    @classmethod
    def zeros_grid(cls, grid: PatchGrid, d: int) -> "ZBlock":
        return cls(grid=grid, layout=GRID, channels=d)

    @classmethod
    def zeros_canvas(cls, grid: PatchGrid, channels: int) -> "ZBlock":
        return cls(grid=grid, layout=CANVAS, channels=channels)

    @property
    def shape(self) -> Tuple[int, int, int]:
        if self.layout == GRID:
            return (self.channels, self.grid.m, self.grid.n)
        return (self.channels, self.grid.M, self.grid.N)

    @property
    def cell_shape(self) -> Tuple[int, ...]:
        if self.layout == GRID:
            return (self.channels,)
        return (self.channels, self.grid.ph, self.grid.pw)

    @property
    def nbytes(self) -> int:
        return element_bytes(self.shape)

    @property
    def fresh_indices(self) -> List[int]:
        return [int(i) for i in np.flatnonzero(self.fresh)]

    @property
    def filled_indices(self) -> List[int]:
        return [int(i) for i in np.flatnonzero(self.filled)]

    def cell_region(self, index: int) -> Tuple[slice, ...]:
        """Storage slice (without the channel axis) that holds one cell."""
        row, col = self.grid.cell_position(index)
        if self.layout == GRID:
            return (slice(row, row + 1), slice(col, col + 1))
        ph, pw = self.grid.ph, self.grid.pw
        return (slice(row * ph, (row + 1) * ph), slice(col * pw, (col + 1) * pw))

    def read_cell(self, index: int) -> np.ndarray:
        return self.storage[(slice(None),) + self.cell_region(index)].reshape(self.cell_shape)

    def update(self, indices: Sequence[int], features: Tensor,
               rows: Optional[Sequence[int]] = None) -> "ZBlock":
        """
        Overwrite the listed cells with feature rows and make them the fresh set.

        Args:
            indices: patch indices to write
            features: tensor whose leading axis holds one cell feature per row
            rows: row of `features` for each index (0..len(indices)-1 when omitted)

        Raises:
            PatchIndexError: index outside the grid
            DimensionError: feature cell shape does not match the layout
            ContractError: duplicate indices or mismatched row count
        """
        indices = [int(i) for i in indices]
        rows = list(range(len(indices))) if rows is None else [int(r) for r in rows]
        if len(rows) != len(indices):
            raise ContractError(f"{len(indices)} indices but {len(rows)} feature rows")
        if len(set(indices)) != len(indices):
            raise ContractError(f"duplicate patch indices in update: {indices}")
        for index in indices:
            if not 0 <= index < self.grid.cells:
                raise PatchIndexError(f"patch index {index} outside grid of {self.grid.cells}")
        if indices and tuple(features.shape[1:]) != self.cell_shape:
            raise DimensionError(
                f"feature cell shape {list(features.shape[1:])} does not match Z-block cell {list(self.cell_shape)}"
            )
        for row in rows:
            if not 0 <= row < features.shape[0]:
                raise ContractError(f"feature row {row} outside {features.shape[0]} rows")

        self.fresh[:] = False
        self.sources = []
        for index, row in zip(indices, rows):
            region = (slice(None),) + self.cell_region(index)
            target = self.storage[region]
            target[...] = features.data[row].reshape(target.shape)
            self.fresh[index] = True
            self.filled[index] = True
            if features.requires_grad:
                self.sources.append(FreshSource(cell=index, source=features, row=row))
        return self

    def reset(self) -> None:
        self.storage.fill(0.0)
        self.filled[:] = False
        self.fresh[:] = False
        self.sources = []

def update_zblock(z: ZBlock, indices: Sequence[int], features: Tensor,
                  rows: Optional[Sequence[int]] = None) -> ZBlock:
    """Functional form of ZBlock.update."""
    return z.update(indices, features, rows)

# ============================================================================
# Z-block -> Tensor
# ============================================================================

def stack_zblocks(blocks: Sequence[ZBlock]) -> Tensor:
    """
    [B, channels, H, W] batch tensor of the blocks' current contents.

    The op's tape parents are the distinct source tensors of fresh cells; the
    backward rule copies each fresh cell's gradient slice into its source row.
    """
    if not blocks:
        raise ContractError("stack_zblocks needs at least one block")
    shape = blocks[0].shape
    if any(b.shape != shape for b in blocks):
        raise DimensionError("cannot stack Z-blocks of different shapes")
    out = np.stack([b.storage for b in blocks]).astype(get_dtype(), copy=False)

    parents: List[Tensor] = []
    routes: List[Tuple[int, int, int, Tuple[slice, ...], Tuple[int, ...]]] = []
    for b, block in enumerate(blocks):
        for src in block.sources:
            if not any(p is src.source for p in parents):
                parents.append(src.source)
            slot = next(i for i, p in enumerate(parents) if p is src.source)
            routes.append((b, slot, src.row, block.cell_region(src.cell), block.cell_shape))

    def backward_fn(grad: np.ndarray):
        grads = [np.zeros(p.shape, dtype=grad.dtype) for p in parents]
        for b, slot, row, region, cell_shape in routes:
            grads[slot][row] += grad[(b, slice(None)) + region].reshape(cell_shape)
        return tuple(grads)

    return make_result(out, tuple(parents), backward_fn, "stack_zblocks")

def tile_features_to_canvas(z: ZBlock) -> Tensor:
    """Canvas-layout Z as Tensor[C, M, N]; unfilled regions are zero."""
    if z.layout != CANVAS:
        raise ContractError("tile_features_to_canvas needs a canvas-layout Z-block")
    out = np.ascontiguousarray(z.storage).astype(get_dtype(), copy=True)
    sources = list(z.sources)
    parents: List[Tensor] = []
    for src in sources:
        if not any(p is src.source for p in parents):
            parents.append(src.source)

    def backward_fn(grad: np.ndarray):
        grads = [np.zeros(p.shape, dtype=grad.dtype) for p in parents]
        for src in sources:
            slot = next(i for i, p in enumerate(parents) if p is src.source)
            grads[slot][src.row] += grad[(slice(None),) + z.cell_region(src.cell)]
        return tuple(grads)

    return make_result(out, tuple(parents), backward_fn, "tile_features_to_canvas")
