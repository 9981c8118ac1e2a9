"""
Evaluation-time Z-block construction: every patch, no sampling, no tape.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import List, Tuple

import numpy as np

from autograd.tensor import Tensor, no_grad
from nets.layers import Model
from patches.grid import ImageLike, PatchGrid, tile_image
from patches.zblock import ZBlock
from utils.logger import setup_logger

logger = setup_logger(__name__)

def _chunks(cells: int, chunk_size: int) -> List[Tuple[int, int]]:
    return [(start, min(start + chunk_size, cells)) for start in range(0, cells, chunk_size)]

def fill_zblock_for_inference(backbone: Model, image: ImageLike, grid: PatchGrid,
                              chunk_size: int = 4, threads: int = 1) -> ZBlock:
    """
    Run theta1 over all m*n patches in chunks of at most chunk_size.

    Chunks may run on a thread pool; their features are written into Z in
    ascending patch order, so the result is bitwise independent of both
    chunk_size and threads.

    Returns:
        ZBlock with every cell filled and none fresh
    """
    chunk_size = max(1, int(chunk_size))
    patches = tile_image(image, grid)
    spans = _chunks(grid.cells, chunk_size)

    def extract(span: Tuple[int, int]) -> np.ndarray:
        start, stop = span
        return backbone(Tensor(patches[start:stop])).data

    with no_grad():
        if threads > 1 and len(spans) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                outputs = list(pool.map(extract, spans))
        else:
            outputs = [extract(span) for span in spans]

    first = outputs[0]
    if first.ndim == 2:
        z = ZBlock.zeros_grid(grid, first.shape[1])
    else:
        z = ZBlock.zeros_canvas(grid, first.shape[1])
    for (start, stop), features in zip(spans, outputs):
        z.update(range(start, stop), Tensor(features))
    z.fresh[:] = False
    z.sources = []
    return z
