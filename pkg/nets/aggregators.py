"""
Aggregator networks (theta2) and the full-image baseline heads.
"""

from dataclasses import dataclass
from typing import Tuple

from nets.layers import GAP, INPUT, Model, Program, RELU
from utils.config import CLASSIFICATION, SEGMENTATION
from utils.error_manager import ModelBuildError
from utils.logger import setup_logger

logger = setup_logger(__name__)

@dataclass(frozen=True)
class AggregatorSpec:
    """
    Input layout and output of theta2.

    layout is (m, n, channels) for classification, where channels is d (add
    fusion or no global patch) or 2d (concat fusion), and (M, N, channels)
    for segmentation with channels 2C (or C without the global patch).
    """
    variant: str
    layout: Tuple[int, int, int]
    num_classes: int = 1
    width: int = 0  # conv width of the classification aggregator; 0 means in_channels

    @property
    def in_channels(self) -> int:
        return self.layout[2]

def aggregator_cls_program(spec: AggregatorSpec) -> Program:
    """
    conv3x3 over the m x n grid (width d), relu, global average pool, linear to K.

    Raises:
        ModelBuildError: empty grid, bad channel count or class count
    """
    m, n, channels = spec.layout
    if m * n < 1:
        raise ModelBuildError(f"aggregator grid {m}x{n} has no cells")
    if channels < 1 or spec.num_classes < 1:
        raise ModelBuildError(f"aggregator needs channels >= 1 and classes >= 1, got {channels}/{spec.num_classes}")
    width = spec.width or channels
    program = Program(name="aggregator")
    program.conv(INPUT, "c1", "mix", channels, width, 3)
    program.add(RELU, ["c1"], "r1")
    program.add(GAP, ["r1"], "pooled")
    program.linear("pooled", "logits", "classifier", width, spec.num_classes)
    return program

def aggregator_seg_program(spec: AggregatorSpec) -> Program:
    """A single 1x1 conv from the fused canvas to one logit channel."""
    channels = spec.layout[2]
    if channels < 1:
        raise ModelBuildError(f"aggregator needs channels >= 1, got {channels}")
    program = Program(name="aggregator")
    program.conv(INPUT, "logits", "mask", channels, 1, 1)
    return program

def aggregator_program(spec: AggregatorSpec) -> Program:
    if spec.variant == SEGMENTATION:
        return aggregator_seg_program(spec)
    if spec.variant == CLASSIFICATION:
        return aggregator_cls_program(spec)
    raise ModelBuildError(f"unknown aggregator variant '{spec.variant}'")

def build_aggregator_cls(spec: AggregatorSpec, seed: int = 1) -> Model:
    """theta2 for classification: Tensor[B,channels,m,n] -> Tensor[B,K] logits."""
    model = Model.initialize(aggregator_cls_program(spec), seed)
    logger.info(f"Built classification aggregator: layout={list(spec.layout)}, K={spec.num_classes}, "
                f"{model.parameter_count} parameters")
    return model

def build_aggregator_seg(spec: AggregatorSpec, seed: int = 1) -> Model:
    """theta2 for segmentation: Tensor[B,channels,M,N] -> Tensor[B,1,M,N] logits."""
    model = Model.initialize(aggregator_seg_program(spec), seed)
    logger.info(f"Built segmentation aggregator: layout={list(spec.layout)}, {model.parameter_count} parameters")
    return model

def build_aggregator(spec: AggregatorSpec, seed: int = 1) -> Model:
    if spec.variant == SEGMENTATION:
        return build_aggregator_seg(spec, seed)
    return build_aggregator_cls(spec, seed)

# ============================================================================
# Baseline Head
# ============================================================================

def head_program(task: str, in_channels: int, num_classes: int = 1) -> Program:
    """Linear d -> K for classification; 1x1 conv C -> 1 for segmentation."""
    if in_channels < 1:
        raise ModelBuildError(f"head needs in_channels >= 1, got {in_channels}")
    program = Program(name="head")
    if task == SEGMENTATION:
        program.conv(INPUT, "logits", "mask", in_channels, 1, 1)
    else:
        if num_classes < 1:
            raise ModelBuildError(f"head needs num_classes >= 1, got {num_classes}")
        program.linear(INPUT, "logits", "classifier", in_channels, num_classes)
    return program

def build_head(task: str, in_channels: int, num_classes: int = 1, seed: int = 1) -> Model:
    """Head placed on theta1 for the downsampled full-image baseline."""
    return Model.initialize(head_program(task, in_channels, num_classes), seed)
