"""
Patch-level networks (theta1).

The classification backbone maps a patch [B,c,ph,pw] to a feature vector
[B,d]; the segmentation backbone is a two-level encoder-decoder with skip
concatenation that maps [B,c,ph,pw] to a feature map [B,C,ph,pw].
"""

from dataclasses import dataclass
from typing import Tuple

from nets.layers import CONCAT, GAP, INPUT, MAXPOOL, Model, Program, RELU, UPSAMPLE
from utils.config import CLASSIFICATION, DEFAULT_FEATURE_DIM, DEFAULT_SEG_CHANNELS, SEGMENTATION
from utils.error_manager import ModelBuildError
from utils.logger import setup_logger

logger = setup_logger(__name__)

SEG_DEPTH = 2  # down/up stages of the segmentation backbone

@dataclass(frozen=True)
class BackboneSpec:
    """Shape contract of theta1."""
    in_channels: int = 1
    widths: Tuple[int, ...] = (16, 32, 64)
    feature_dim: int = DEFAULT_FEATURE_DIM
    seg_channels: int = DEFAULT_SEG_CHANNELS
    patch_size: Tuple[int, int] = (64, 64)
    task: str = CLASSIFICATION

    def validate(self) -> None:
        if not self.widths or any(w < 1 for w in self.widths):
            raise ModelBuildError(f"backbone widths must be non-empty and positive, got {list(self.widths)}")
        if self.in_channels < 1:
            raise ModelBuildError(f"in_channels must be >= 1, got {self.in_channels}")
        if self.feature_dim < 1:
            raise ModelBuildError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.seg_channels < 1:
            raise ModelBuildError(f"seg_channels must be >= 1, got {self.seg_channels}")

    @property
    def output_channels(self) -> int:
        return self.feature_dim if self.task == CLASSIFICATION else self.seg_channels

def backbone_cls_program(spec: BackboneSpec) -> Program:
    """
    conv3x3-relu-maxpool2 per width, then global average pooling to d.

    A 1x1 conv head maps the last width to d; it is left out when the two
    already agree.

    Raises:
        ModelBuildError: patch size not divisible by 2**len(widths)
    """
    spec.validate()
    factor = 2 ** len(spec.widths)
    ph, pw = spec.patch_size
    if ph % factor or pw % factor:
        raise ModelBuildError(
            f"patch size {ph}x{pw} not divisible by the cumulative pooling factor {factor}"
        )

    program = Program(name="backbone")
    src, cin = INPUT, spec.in_channels
    for i, width in enumerate(spec.widths, start=1):
        program.conv(src, f"c{i}", f"stage{i}", cin, width, 3)
        program.add(RELU, [f"c{i}"], f"r{i}")
        program.add(MAXPOOL, [f"r{i}"], f"p{i}")
        src, cin = f"p{i}", width
    if cin != spec.feature_dim:
        program.conv(src, "head", "head", cin, spec.feature_dim, 1)
        src = "head"
    program.add(GAP, [src], "features")
    return program

def backbone_seg_program(spec: BackboneSpec) -> Program:
    """
    Two-level encoder-decoder ending in a 1x1 conv to C channels.

    Encoder: e1 = relu(conv(x)), e2 = relu(conv(pool(e1))), bottleneck
    b = relu(conv(pool(e2))). Decoder levels upsample, concatenate the
    matching encoder output and convolve back to that level's width.

    Raises:
        ModelBuildError: patch size not divisible by 4, or widths not of length 3
    """
    spec.validate()
    if len(spec.widths) != SEG_DEPTH + 1:
        raise ModelBuildError(f"segmentation backbone needs {SEG_DEPTH + 1} widths, got {list(spec.widths)}")
    ph, pw = spec.patch_size
    factor = 2 ** SEG_DEPTH
    if ph % factor or pw % factor:
        raise ModelBuildError(f"patch size {ph}x{pw} not divisible by {factor}")

    w1, w2, w3 = spec.widths
    program = Program(name="backbone")
    program.conv(INPUT, "c1", "enc1", spec.in_channels, w1, 3)
    program.add(RELU, ["c1"], "e1")
    program.add(MAXPOOL, ["e1"], "p1")
    program.conv("p1", "c2", "enc2", w1, w2, 3)
    program.add(RELU, ["c2"], "e2")
    program.add(MAXPOOL, ["e2"], "p2")
    program.conv("p2", "c3", "bottleneck", w2, w3, 3)
    program.add(RELU, ["c3"], "b")

    program.add(UPSAMPLE, ["b"], "u2")
    program.add(CONCAT, ["u2", "e2"], "k2")
    program.conv("k2", "c4", "dec2", w3 + w2, w2, 3)
    program.add(RELU, ["c4"], "d2")
    program.add(UPSAMPLE, ["d2"], "u1")
    program.add(CONCAT, ["u1", "e1"], "k1")
    program.conv("k1", "c5", "dec1", w2 + w1, w1, 3)
    program.add(RELU, ["c5"], "d1")
    program.conv("d1", "features", "head", w1, spec.seg_channels, 1)
    return program

def backbone_program(spec: BackboneSpec) -> Program:
    if spec.task == SEGMENTATION:
        return backbone_seg_program(spec)
    return backbone_cls_program(spec)

def build_backbone_cls(spec: BackboneSpec, seed: int = 0) -> Model:
    """theta1 for classification: Tensor[B,c,ph,pw] -> Tensor[B,d]."""
    model = Model.initialize(backbone_cls_program(spec), seed)
    logger.info(f"Built classification backbone: widths={list(spec.widths)}, d={spec.feature_dim}, "
                f"{model.parameter_count} parameters")
    return model

def build_backbone_seg(spec: BackboneSpec, seed: int = 0) -> Model:
    """theta1 for segmentation: Tensor[B,c,ph,pw] -> Tensor[B,C,ph,pw]."""
    model = Model.initialize(backbone_seg_program(spec), seed)
    logger.info(f"Built segmentation backbone: widths={list(spec.widths)}, C={spec.seg_channels}, "
                f"{model.parameter_count} parameters")
    return model

def build_backbone(spec: BackboneSpec, seed: int = 0) -> Model:
    if spec.task == SEGMENTATION:
        return build_backbone_seg(spec, seed)
    return build_backbone_cls(spec, seed)
