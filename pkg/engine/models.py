"""
Complete predictors built from a RunConfig.

PatchModel couples theta1, theta2, the patch grid and the fusion scheme and
owns the batched forward used both by training (sampled Z) and by inference
(fully computed Z). DownsampledModel is the full-image baseline: theta1 plus
a head on area-downsampled images.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from autograd.tensor import Tensor, get_dtype, no_grad
from nets.aggregators import AggregatorSpec, build_aggregator, build_head, head_program
from nets.backbones import BackboneSpec, build_backbone
from nets.layers import Model, Program
from patches.fusion import fuse_add, fuse_concat_cls, fuse_concat_seg
from patches.grid import PatchGrid, area_downsample, make_global_patch
from patches.inference import fill_zblock_for_inference
from patches.zblock import ZBlock, stack_zblocks
from utils.config import CLASSIFICATION, SEGMENTATION, RunConfig
from utils.error_manager import ConfigError
from utils.logger import setup_logger

logger = setup_logger(__name__)

@dataclass(frozen=True)
class InputSpec:
    """Shape of the dataset a model is built for."""
    task: str
    channels: int
    M: int
    N: int
    num_classes: int = 1

def _checked(run_config: RunConfig, inputs: InputSpec) -> None:
    if run_config.task != inputs.task:
        raise ConfigError([f"task: config says {run_config.task} but the dataset holds {inputs.task}"])

def patch_specs(run_config: RunConfig, inputs: InputSpec) -> Tuple[PatchGrid, BackboneSpec, AggregatorSpec]:
    """
    Grid and network shapes of the patch model, without allocating parameters.

    Raises:
        ConfigError: the image does not split into the configured grid
    """
    _checked(run_config, inputs)
    try:
        grid = PatchGrid(inputs.M, inputs.N, inputs.channels, run_config.grid_m, run_config.grid_n)
    except ValueError as e:
        raise ConfigError([f"grid_m/grid_n: {e}"]) from e
    task = run_config.task
    backbone_spec = BackboneSpec(
        in_channels=inputs.channels, widths=tuple(run_config.widths), feature_dim=run_config.feature_dim,
        seg_channels=run_config.seg_channels, patch_size=(grid.ph, grid.pw), task=task,
    )
    channels = backbone_spec.output_channels
    if task == SEGMENTATION:
        fused = 2 * channels if run_config.use_global_patch else channels
        aggregator_spec = AggregatorSpec(SEGMENTATION, (grid.M, grid.N, fused))
    else:
        concat = run_config.use_global_patch and run_config.fusion == "concat"
        aggregator_spec = AggregatorSpec(CLASSIFICATION, (grid.m, grid.n, 2 * channels if concat else channels),
                                         num_classes=inputs.num_classes, width=channels)
    return grid, backbone_spec, aggregator_spec

# ============================================================================
# Patch Model
# ============================================================================

class PatchModel:
    """theta1 + Z-block + optional global patch + theta2."""

    def __init__(self, run_config: RunConfig, inputs: InputSpec):
        self.grid, self.backbone_spec, self.aggregator_spec = patch_specs(run_config, inputs)
        self.task = run_config.task
        self.use_global = run_config.use_global_patch
        self.fusion = run_config.fusion
        self.num_classes = inputs.num_classes
        self.backbone = build_backbone(self.backbone_spec, run_config.seed)
        self.aggregator = build_aggregator(self.aggregator_spec, run_config.seed + 1)

    @property
    def feature_channels(self) -> int:
        return self.backbone_spec.output_channels

    @property
    def models(self) -> List[Model]:
        return [self.backbone, self.aggregator]

    def named_parameters(self) -> Dict[str, Tensor]:
        return {name: p for model in self.models for name, p in model.named_parameters()}

    @property
    def parameter_count(self) -> int:
        return sum(m.parameter_count for m in self.models)

    def new_zblock(self) -> ZBlock:
        if self.task == SEGMENTATION:
            return ZBlock.zeros_canvas(self.grid, self.feature_channels)
        return ZBlock.zeros_grid(self.grid, self.feature_channels)

    def global_pixels(self, images: np.ndarray) -> np.ndarray:
        """[B,c,ph,pw] global patches of a batch."""
        return np.stack([make_global_patch(image, self.grid).pixels for image in images])

    def aggregate(self, zblocks: Sequence[ZBlock], global_feature: Optional[Tensor]) -> Tensor:
        """Stack the Z-blocks, fuse the global feature and run theta2."""
        stacked = stack_zblocks(zblocks)
        if global_feature is None:
            fused = stacked
        elif self.task == SEGMENTATION:
            fused = fuse_concat_seg(stacked, global_feature)
        elif self.fusion == "concat":
            fused = fuse_concat_cls(stacked, global_feature)
        else:
            fused = fuse_add(stacked, global_feature)
        return self.aggregator(fused)

    def predict_logits(self, images: np.ndarray, chunk_size: int = 4, threads: int = 1) -> np.ndarray:
        """Logits of a batch with every patch in Z; runs without the tape."""
        images = np.asarray(images, dtype=get_dtype())
        zblocks = [fill_zblock_for_inference(self.backbone, image, self.grid, chunk_size, threads)
                   for image in images]
        with no_grad():
            g = self.backbone(Tensor(self.global_pixels(images))) if self.use_global else None
            return self.aggregate(zblocks, g).data

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        for model in self.models:
            model.load_arrays(arrays)

# ============================================================================
# Downsampled Baseline
# ============================================================================

def downsample_factor(run_config: RunConfig, inputs: InputSpec) -> int:
    """Integer factor taking M to baseline_size; N must divide by it too."""
    if inputs.M % run_config.baseline_size:
        raise ConfigError([f"baseline_size: {run_config.baseline_size} does not divide image height {inputs.M}"])
    factor = inputs.M // run_config.baseline_size
    if inputs.N % factor:
        raise ConfigError([f"baseline_size: factor {factor} does not divide image width {inputs.N}"])
    return factor

def downsample_masks(masks: np.ndarray, factor: int) -> np.ndarray:
    """Max over factor x factor blocks: a low-resolution pixel is foreground if any source pixel is."""
    *lead, height, width = masks.shape
    blocks = masks.reshape(*lead, height // factor, factor, width // factor, factor)
    return blocks.max(axis=(-3, -1))

def downsampled_specs(run_config: RunConfig, inputs: InputSpec) -> Tuple[int, BackboneSpec, Program]:
    """Downsampling factor, theta1 shape and head program of the baseline."""
    _checked(run_config, inputs)
    factor = downsample_factor(run_config, inputs)
    backbone_spec = BackboneSpec(
        in_channels=inputs.channels, widths=tuple(run_config.widths), feature_dim=run_config.feature_dim,
        seg_channels=run_config.seg_channels, patch_size=(inputs.M // factor, inputs.N // factor),
        task=run_config.task,
    )
    return factor, backbone_spec, head_program(run_config.task, backbone_spec.output_channels, inputs.num_classes)

class DownsampledModel:
    """theta1 + head trained on the full image area-downsampled by `factor`."""

    def __init__(self, run_config: RunConfig, inputs: InputSpec):
        self.factor, self.backbone_spec, _ = downsampled_specs(run_config, inputs)
        self.task = run_config.task
        self.input_size = self.backbone_spec.patch_size
        self.num_classes = inputs.num_classes
        self.backbone = build_backbone(self.backbone_spec, run_config.seed)
        self.head = build_head(self.task, self.backbone_spec.output_channels, self.num_classes, run_config.seed + 1)

    @property
    def models(self) -> List[Model]:
        return [self.backbone, self.head]

    def named_parameters(self) -> Dict[str, Tensor]:
        return {name: p for model in self.models for name, p in model.named_parameters()}

    @property
    def parameter_count(self) -> int:
        return sum(m.parameter_count for m in self.models)

    def downsample(self, images: np.ndarray) -> np.ndarray:
        return area_downsample(np.asarray(images), self.factor, self.factor).astype(get_dtype(), copy=False)

    def forward(self, small_images: np.ndarray) -> Tensor:
        return self.head(self.backbone(Tensor(small_images)))

    def predict_logits(self, images: np.ndarray, chunk_size: int = 4, threads: int = 1) -> np.ndarray:
        """Class logits, or mask logits upsampled back to full resolution."""
        with no_grad():
            logits = self.forward(self.downsample(images)).data
        if self.task == SEGMENTATION:
            logits = np.repeat(np.repeat(logits, self.factor, axis=2), self.factor, axis=3)
        return logits

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        for model in self.models:
            model.load_arrays(arrays)

def build_model(run_config: RunConfig, inputs: InputSpec):
    """PatchModel or DownsampledModel according to run_config.mode."""
    if run_config.mode == "downsampled":
        return DownsampledModel(run_config, inputs)
    return PatchModel(run_config, inputs)
