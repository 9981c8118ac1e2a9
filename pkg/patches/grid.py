"""
Patch geometry and schedule: grid layout, tiling, stitching and the global patch.

Patch index i covers grid row i // n and column i % n (row-major).
"""

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from autograd.tensor import Tensor
from utils.error_manager import DimensionError, PlanError

ImageLike = Union[Tensor, np.ndarray]

@dataclass(frozen=True)
class PatchGrid:
    """Image of M x N pixels and c channels cut into m x n non-overlapping patches."""
    M: int
    N: int
    c: int
    m: int
    n: int

    def __post_init__(self):
        if min(self.M, self.N, self.c, self.m, self.n) < 1:
            raise DimensionError(f"grid dimensions must be positive: {self}")
        if self.M % self.m or self.N % self.n:
            raise DimensionError(f"image {self.M}x{self.N} not divisible into a {self.m}x{self.n} grid")

    @property
    def ph(self) -> int:
        return self.M // self.m

    @property
    def pw(self) -> int:
        return self.N // self.n

    @property
    def cells(self) -> int:
        return self.m * self.n

    def cell_position(self, index: int) -> tuple:
        """(row, col) of a patch index."""
        return divmod(index, self.n)

@dataclass(frozen=True)
class PatchPlan:
    """Sampling rate S, inner iterations J and the derived k patches per iteration."""
    grid: PatchGrid
    sampling_rate: float
    inner_iterations: int
    without_replacement: bool = True

    def __post_init__(self):
        if not 0.0 < self.sampling_rate <= 1.0:
            raise PlanError(f"sampling rate must lie in (0, 1], got {self.sampling_rate}")
        if self.inner_iterations < 1:
            raise PlanError(f"inner iterations must be >= 1, got {self.inner_iterations}")
        if self.k * self.inner_iterations > self.grid.cells:
            raise PlanError(
                f"k*J = {self.k}*{self.inner_iterations} exceeds the {self.grid.cells} patches of the grid"
            )

    @property
    def k(self) -> int:
        """k = max(1, floor(S * m * n))."""
        return max(1, math.floor(self.sampling_rate * self.grid.cells))

    @property
    def patches_per_outer_step(self) -> int:
        return self.k * self.inner_iterations

def _pixels(image: ImageLike) -> np.ndarray:
    return image.data if isinstance(image, Tensor) else np.asarray(image)

def _check_image(pixels: np.ndarray, grid: PatchGrid) -> None:
    if pixels.shape != (grid.c, grid.M, grid.N):
        raise DimensionError(
            f"image shape {list(pixels.shape)} does not match grid [{grid.c}, {grid.M}, {grid.N}]"
        )

def tile_image(image: ImageLike, grid: PatchGrid) -> np.ndarray:
    """[c,M,N] -> [m*n, c, ph, pw] in row-major patch order."""
    pixels = _pixels(image)
    _check_image(pixels, grid)
    blocks = pixels.reshape(grid.c, grid.m, grid.ph, grid.n, grid.pw)
    return np.ascontiguousarray(blocks.transpose(1, 3, 0, 2, 4).reshape(grid.cells, grid.c, grid.ph, grid.pw))

def stitch_patches(patches: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Inverse of tile_image: [m*n, c', ph, pw] -> [c', M, N] (c' may differ from c)."""
    if patches.ndim != 4 or patches.shape[0] != grid.cells or patches.shape[2:] != (grid.ph, grid.pw):
        raise DimensionError(
            f"patch stack {list(patches.shape)} does not match grid of {grid.cells} x {grid.ph}x{grid.pw}"
        )
    channels = patches.shape[1]
    blocks = patches.reshape(grid.m, grid.n, channels, grid.ph, grid.pw)
    return np.ascontiguousarray(blocks.transpose(2, 0, 3, 1, 4).reshape(channels, grid.M, grid.N))

def area_downsample(pixels: np.ndarray, fh: int, fw: int) -> np.ndarray:
    """Mean over non-overlapping fh x fw blocks of [..., H, W]."""
    *lead, height, width = pixels.shape
    if height % fh or width % fw:
        raise DimensionError(f"{height}x{width} not divisible by downsampling factors {fh}x{fw}")
    blocks = pixels.reshape(*lead, height // fh, fh, width // fw, fw)
    return blocks.mean(axis=(-3, -1))

@dataclass
class GlobalPatch:
    """The full image area-averaged to patch size; feature filled in after theta1 runs."""
    pixels: np.ndarray
    feature: Optional[Tensor] = None

def make_global_patch(image: ImageLike, grid: PatchGrid) -> GlobalPatch:
    """Area-average [c,M,N] by (m, n) down to [c,ph,pw]."""
    pixels = _pixels(image)
    _check_image(pixels, grid)
    return GlobalPatch(pixels=area_downsample(pixels, grid.m, grid.n).astype(pixels.dtype, copy=False))

def extract_patches(image: ImageLike, grid: PatchGrid, indices) -> np.ndarray:
    """[len(indices), c, ph, pw]: the listed patches of one image, equal to tile_image rows."""
    pixels = _pixels(image)
    _check_image(pixels, grid)
    out = np.empty((len(indices), grid.c, grid.ph, grid.pw), dtype=pixels.dtype)
    for slot, index in enumerate(indices):
        row, col = grid.cell_position(int(index))
        out[slot] = pixels[:, row * grid.ph:(row + 1) * grid.ph, col * grid.pw:(col + 1) * grid.pw]
    return out
