"""
Fusion of the Z-block with the global-patch feature.

- fuse_add:        Z_g = Z + g, g broadcast over every grid cell
- fuse_concat_cls: g replicated over the grid and concatenated (2d channels)
- fuse_concat_seg: g_feat upsampled by (m, n) to canvas size and
                   concatenated after the canvas (2C channels)

Each accepts a single image (no batch axis) or a batch.
"""

from autograd import ops
from autograd.tensor import Tensor
from utils.error_manager import DimensionError

def _batched(t: Tensor, rank: int) -> Tensor:
    return ops.reshape(t, (1,) + t.shape) if t.ndim == rank - 1 else t

def fuse_add(z: Tensor, g: Tensor) -> Tensor:
    """
    [B,d,m,n] + [B,d] (or [d,m,n] + [d]) with g repeated over the grid.

    Raises:
        DimensionError: channel counts differ
    """
    if z.ndim == 3 and g.ndim == 1:
        if g.shape[0] != z.shape[0]:
            raise DimensionError(f"feature dim of g ({g.shape[0]}) differs from Z ({z.shape[0]})")
        return ops.add(z, ops.reshape(g, (g.shape[0], 1, 1)))
    if z.ndim != 4 or g.ndim != 2 or g.shape != z.shape[:2]:
        raise DimensionError(f"cannot fuse Z {list(z.shape)} with g {list(g.shape)}")
    return ops.add(z, ops.reshape(g, g.shape + (1, 1)))

def fuse_concat_cls(z: Tensor, g: Tensor) -> Tensor:
    """[B,d,m,n] and [B,d] -> [B,2d,m,n]; the global feature fills channels [d, 2d)."""
    if z.ndim != 4 or g.ndim != 2 or g.shape != z.shape[:2]:
        raise DimensionError(f"cannot fuse Z {list(z.shape)} with g {list(g.shape)}")
    batch, d, m, n = z.shape
    spread = ops.upsample_nearest(ops.reshape(g, (batch, d, 1, 1)), m, n)
    return ops.concat([z, spread], axis=1)

def fuse_concat_seg(canvas: Tensor, g_feat: Tensor) -> Tensor:
    """
    [B,C,M,N] and [B,C,ph,pw] -> [B,2C,M,N] (or the unbatched forms).

    Raises:
        DimensionError: channel counts differ or M x N is not a multiple of ph x pw
    """
    single = canvas.ndim == 3
    canvas4, g4 = _batched(canvas, 4), _batched(g_feat, 4)
    if canvas4.ndim != 4 or g4.ndim != 4 or canvas4.shape[:2] != g4.shape[:2]:
        raise DimensionError(f"cannot fuse canvas {list(canvas.shape)} with global map {list(g_feat.shape)}")
    height, width = canvas4.shape[2:]
    ph, pw = g4.shape[2:]
    if height % ph or width % pw:
        raise DimensionError(f"canvas {height}x{width} is not a multiple of the global map {ph}x{pw}")
    fused = ops.concat([canvas4, ops.upsample_nearest(g4, height // ph, width // pw)], axis=1)
    if single:
        return ops.reshape(fused, fused.shape[1:])
    return fused
