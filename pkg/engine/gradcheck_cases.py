"""
Gradient-check cases for the losses and the two composed training paths.

The composed cases run one inner iteration end to end: theta1 on the fresh
patches and on the global patch, a Z-block update over random stale
contents, fusion, theta2 and the task loss. Their inputs are every
parameter of theta1 and theta2.

All cases are built to be checkable in float32 at eps 1e-3. Losses run on a
handful of elements, since a mean over N elements shrinks each gradient by N
while the loss value keeps its rounding. The composed paths draw positive,
unit-gain parameters with centre-dominant kernels on images whose pixels are
pairwise apart: no relu sits at its kink, no maxpool window changes its
winner under a step of eps, and every parameter gradient sums same-signed
terms.
"""

from typing import List, Tuple

import numpy as np

from autograd import ops
from autograd.gradcheck import PRIMITIVE_CASES, CheckCase, centered_objective, output_weights, small_uniform
from autograd.tensor import Tensor, no_grad
from engine.losses import bce_with_logits, cross_entropy, dice_loss, seg_loss
from nets.aggregators import AggregatorSpec, aggregator_program
from nets.backbones import BackboneSpec, backbone_program
from nets.layers import Model
from patches.fusion import fuse_add, fuse_concat_cls, fuse_concat_seg
from patches.grid import PatchGrid, extract_patches, make_global_patch
from patches.zblock import ZBlock, stack_zblocks
from utils.config import CLASSIFICATION, SEGMENTATION

COMPOSED_ELEMENTS_PER_INPUT = 12

# Composed-path parameters
OFF_CENTER = 1e-5
BIAS_SCALE = 0.05

# Composed-path images: block base + COARSE_GAP * block rank + FINE_GAP * rank inside the block
PIXEL_BASE = 0.25
COARSE_GAP = 0.125
FINE_GAP = 0.025

# ============================================================================
# Losses
# ============================================================================

def _loss_shape(rng, max_elements: int) -> Tuple[int, int, int, int]:
    shapes = [(b, 1, h, w) for b in (1, 2) for h in (1, 2) for w in (1, 2) if b * h * w <= max_elements]
    return shapes[int(rng.integers(len(shapes)))]

def _binary_targets(rng, shape):
    return (rng.random(size=shape) < 0.5).astype(np.float64)

def _cross_entropy_case(rng):
    batch, classes = int(rng.integers(1, 3)), int(rng.integers(2, 4))
    logits = Tensor(rng.uniform(-0.25, 0.25, size=(batch, classes)))
    labels = rng.integers(0, classes, size=batch)
    return (lambda x: cross_entropy(x, labels)), [logits]

def _bce_case(rng):
    shape = _loss_shape(rng, 4)
    targets = _binary_targets(rng, shape)
    return (lambda x: bce_with_logits(x, targets)), [Tensor(rng.uniform(-0.25, 0.25, size=shape))]

def _dice_case(rng):
    shape = _loss_shape(rng, 2)
    targets = _binary_targets(rng, shape)
    return (lambda p: dice_loss(p, targets)), [Tensor(rng.uniform(0.3, 0.7, size=shape))]

def _seg_loss_case(rng):
    shape = _loss_shape(rng, 2)
    targets = _binary_targets(rng, shape)
    return (lambda x: seg_loss(x, targets)), [Tensor(rng.uniform(-0.25, 0.25, size=shape))]

# ============================================================================
# Composed Paths
# ============================================================================

def _random_grid(rng, patch: int) -> PatchGrid:
    m, n = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    return PatchGrid(M=m * patch, N=n * patch, c=1, m=m, n=n)

def _fresh_sets(rng, grid: PatchGrid, batch: int, k: int) -> List[List[int]]:
    return [sorted(int(i) for i in rng.choice(grid.cells, size=k, replace=False)) for _ in range(batch)]

def separated_image(rng, grid: PatchGrid) -> np.ndarray:
    """
    [1, M, N] image whose pixels differ pairwise by at least FINE_GAP.

    Every m x n block shares one within-block ranking, so the area-averaged
    global patch differs pairwise by COARSE_GAP as well.
    """
    coarse = rng.permutation(grid.ph * grid.pw).reshape(grid.ph, grid.pw)
    fine = rng.permutation(grid.m * grid.n).reshape(grid.m, grid.n)
    pixels = (PIXEL_BASE + COARSE_GAP * np.kron(coarse, np.ones((grid.m, grid.n)))
              + FINE_GAP * np.tile(fine, (grid.ph, grid.pw)))
    return pixels[None]

def condition_parameters(model: Model, rng) -> None:
    """Positive unit-gain weights, centre-dominant 3x3 kernels and small positive biases."""
    for name, tensor in model.params.items():
        shape = tensor.shape
        if name.endswith(".bias"):
            data = BIAS_SCALE * rng.uniform(0.5, 1.5, size=shape)
        elif len(shape) == 4:
            cout, cin, kh, kw = shape
            data = OFF_CENTER / cin * rng.uniform(0.5, 1.5, size=shape)
            data[:, :, kh // 2, kw // 2] = rng.uniform(0.5, 1.5, size=(cout, cin)) / cin
        else:
            data = rng.uniform(0.5, 1.5, size=shape) / shape[0]
        tensor.data = data.astype(tensor.data.dtype)

def _composed(rng, task: str):
    patch = 4
    grid = _random_grid(rng, patch)
    batch = int(rng.integers(1, 3))
    k = int(rng.integers(1, grid.cells + 1))
    # one target class per trial so per-sample gradients share a sign
    label = int(rng.integers(0, 2))
    if task == CLASSIFICATION:
        channels = int(rng.integers(2, 4))
        backbone_spec = BackboneSpec(widths=(2,), feature_dim=channels, patch_size=(patch, patch), task=task)
        fusion = "concat" if rng.random() < 0.5 else "add"
        fused = 2 * channels if fusion == "concat" else channels
        aggregator_spec = AggregatorSpec(CLASSIFICATION, (grid.m, grid.n, fused), num_classes=2, width=channels)
        targets = np.full(batch, label)
    else:
        channels = 2
        backbone_spec = BackboneSpec(widths=(2, 2, 2), seg_channels=channels, patch_size=(patch, patch), task=task)
        fusion = "concat"
        aggregator_spec = AggregatorSpec(SEGMENTATION, (grid.M, grid.N, 2 * channels))
        targets = np.full((batch, 1, grid.M, grid.N), float(label))

    theta1 = Model.initialize(backbone_program(backbone_spec), int(rng.integers(0, 2 ** 31)))
    theta2 = Model.initialize(aggregator_program(aggregator_spec), int(rng.integers(0, 2 ** 31)))
    condition_parameters(theta1, rng)
    condition_parameters(theta2, rng)
    if task == CLASSIFICATION:
        # opposite-signed class columns: d(z1 - z0) is a sum of positive terms
        theta2.params["classifier.weight"].data[:, 0] *= -1
    names1, names2 = list(theta1.params), list(theta2.params)

    images = np.stack([separated_image(rng, grid) for _ in range(batch)])
    fresh = _fresh_sets(rng, grid, batch, k)
    pixels = np.concatenate([extract_patches(images[b], grid, fresh[b]) for b in range(batch)])
    global_pixels = np.stack([make_global_patch(image, grid).pixels for image in images])
    empty = ZBlock.zeros_grid(grid, channels) if task == CLASSIFICATION else ZBlock.zeros_canvas(grid, channels)
    stale = rng.uniform(0.5, 1.5, size=(batch,) + empty.shape)

    def logits(*tensors):
        backbone = Model(theta1.program, dict(zip(names1, tensors[:len(names1)])))
        aggregator = Model(theta2.program, dict(zip(names2, tensors[len(names1):])))
        features = backbone(Tensor(pixels))
        blocks = []
        for b in range(batch):
            z = ZBlock.zeros_grid(grid, channels) if task == CLASSIFICATION else ZBlock.zeros_canvas(grid, channels)
            z.storage[...] = stale[b]
            z.update(fresh[b], features, rows=range(b * k, (b + 1) * k))
            blocks.append(z)
        g = backbone(Tensor(global_pixels))
        stacked = stack_zblocks(blocks)
        if task == SEGMENTATION:
            return aggregator(fuse_concat_seg(stacked, g))
        fused = fuse_concat_cls(stacked, g) if fusion == "concat" else fuse_add(stacked, g)
        return aggregator(fused)

    params = list(theta1.params.values()) + list(theta2.params.values())
    # centre the logits on zero so the loss sits away from saturation
    with no_grad():
        raw = logits(*params).data
    output_bias = theta2.params[f"{theta2.program.steps[-1].layer}.bias"]
    axes = tuple(axis for axis in range(raw.ndim) if axis != 1)
    output_bias.data = (output_bias.data - raw.mean(axis=axes)).astype(output_bias.data.dtype)

    def f(*tensors):
        out = logits(*tensors)
        if task == SEGMENTATION:
            return seg_loss(out, targets)
        return cross_entropy(out, targets)

    return f, params

def _stack_case(rng):
    grid = _random_grid(rng, 2)
    channels, batch = int(rng.integers(1, 4)), int(rng.integers(1, 3))
    k = int(rng.integers(1, grid.cells + 1))
    fresh = _fresh_sets(rng, grid, batch, k)
    features = Tensor(small_uniform(rng, (batch * k, channels)))

    def stack(x):
        blocks = []
        for b in range(batch):
            z = ZBlock.zeros_grid(grid, channels)
            z.update(fresh[b], x, rows=range(b * k, (b + 1) * k))
            blocks.append(z)
        return stack_zblocks(blocks)

    weights = output_weights(rng, (batch, channels, grid.m, grid.n))
    return centered_objective(stack, [features], weights), [features]

LOSS_CASES: List[CheckCase] = [
    CheckCase("cross_entropy", _cross_entropy_case),
    CheckCase("bce_with_logits", _bce_case),
    CheckCase("dice_loss", _dice_case),
    CheckCase("seg_loss", _seg_loss_case),
]

COMPOSED_CASES: List[CheckCase] = [
    CheckCase("stack_zblocks", _stack_case),
    CheckCase("patch_path_cls", lambda rng: _composed(rng, CLASSIFICATION),
              max_elements_per_input=COMPOSED_ELEMENTS_PER_INPUT),
    CheckCase("patch_path_seg", lambda rng: _composed(rng, SEGMENTATION),
              max_elements_per_input=COMPOSED_ELEMENTS_PER_INPUT),
]

def all_cases() -> List[CheckCase]:
    """Every primitive op, every loss and both composed paths."""
    return PRIMITIVE_CASES + LOSS_CASES + COMPOSED_CASES
