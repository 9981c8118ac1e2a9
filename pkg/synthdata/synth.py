"""
Deterministic synthetic datasets.

Classification: 6-10 small outline glyphs (circle, square, triangle, cross)
per image; the label is the number of crosses, clamped to K-1. At 1/4
resolution the glyphs shrink to about 3 px and their shapes blur together,
so the label is only recoverable from full-resolution detail.

Segmentation: 3-6 thin quadratic Bezier strokes over Gaussian noise; the
mask is the exact stroke raster.

Every sample draws from its own generator, default_rng([seed, index, attempt]),
so output does not depend on generation order or thread count.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import cv2
import numpy as np

from utils.error_manager import ContractError
from utils.logger import setup_logger

logger = setup_logger(__name__)

# ============================================================================
# Constants
# ============================================================================

CIRCLE = "circle"
SQUARE = "square"
TRIANGLE = "triangle"
CROSS = "cross"
GLYPH_KINDS = (CIRCLE, SQUARE, TRIANGLE, CROSS)
DISTRACTOR_KINDS = (CIRCLE, SQUARE, TRIANGLE)

GLYPH_COUNT_RANGE = (6, 10)
GLYPH_SIZE_RANGE = (10, 14)
GLYPH_THICKNESS = 2
GLYPH_GAP = 2  # minimum free pixels between glyph boxes
MAX_PLACEMENT_TRIES = 1000

CURVE_COUNT_RANGE = (3, 6)
STROKE_WIDTH_RANGE = (1, 3)
INTENSITY_RANGE = (0.5, 1.0)
NOISE_SIGMA = 0.05
FOREGROUND_RANGE = (0.006, 0.12)
MAX_CURVE_ATTEMPTS = 100

# ============================================================================
# Samples
# ============================================================================

@dataclass(frozen=True)
class GlyphPlacement:
    kind: str
    x: int
    y: int
    size: int

@dataclass
class ClsSample:
    image: np.ndarray  # [1, M, N] float32 in [0, 1]
    label: int
    seed: int
    index: int
    attempt: int = 0
    glyphs: List[GlyphPlacement] = field(default_factory=list)

@dataclass(frozen=True)
class Stroke:
    control_points: Tuple[Tuple[float, float], ...]
    width: int

@dataclass
class SegSample:
    image: np.ndarray  # [1, M, N] float32
    mask: np.ndarray   # [1, M, N] float32 of {0, 1}
    seed: int
    index: int
    attempt: int = 0
    strokes: List[Stroke] = field(default_factory=list)
    intensity: float = 1.0

    def noise(self) -> np.ndarray:
        """The additive noise field this sample was generated with."""
        return stroke_noise(self.seed, self.index, self.attempt, self.mask.shape)

# ============================================================================
# Glyphs
# ============================================================================

def draw_glyph(canvas: np.ndarray, kind: str, x: int, y: int, size: int) -> None:
    """Rasterize one outline glyph into a uint8 canvas inside the box (x, y, size)."""
    last = size - 1
    if kind == CIRCLE:
        center = (x + size // 2, y + size // 2)
        cv2.circle(canvas, center, size // 2 - 1, 255, GLYPH_THICKNESS, lineType=cv2.LINE_8)
    elif kind == SQUARE:
        cv2.rectangle(canvas, (x + 1, y + 1), (x + last - 1, y + last - 1), 255,
                      GLYPH_THICKNESS, lineType=cv2.LINE_8)
    elif kind == TRIANGLE:
        points = np.array([[x + size // 2, y + 1], [x + 1, y + last - 1], [x + last - 1, y + last - 1]],
                          dtype=np.int32)
        cv2.polylines(canvas, [points], True, 255, GLYPH_THICKNESS, lineType=cv2.LINE_8)
    elif kind == CROSS:
        mid_x, mid_y = x + size // 2, y + size // 2
        cv2.line(canvas, (x + 1, mid_y), (x + last - 1, mid_y), 255, GLYPH_THICKNESS, lineType=cv2.LINE_8)
        cv2.line(canvas, (mid_x, y + 1), (mid_x, y + last - 1), 255, GLYPH_THICKNESS, lineType=cv2.LINE_8)
    else:
        raise ContractError(f"unknown glyph kind '{kind}'")

def glyph_template(kind: str, size: int) -> np.ndarray:
    """A single glyph rasterized on a size x size canvas, values in {0, 1}."""
    canvas = np.zeros((size, size), dtype=np.uint8)
    draw_glyph(canvas, kind, 0, 0, size)
    return (canvas > 0).astype(np.float32)

def template_ambiguity(size: int = 12, factor: int = 1) -> float:
    """
    Largest normalized cross-correlation between templates of two different
    glyph kinds after area-downsampling by `factor` (1 = full resolution).
    """
    usable = (size // factor) * factor
    vectors = []
    for kind in GLYPH_KINDS:
        t = glyph_template(kind, size)[:usable, :usable]
        t = t.reshape(usable // factor, factor, usable // factor, factor).mean(axis=(1, 3)).ravel()
        t = t - t.mean()
        vectors.append(t / (np.linalg.norm(t) + 1e-12))
    worst = 0.0
    for i in range(len(vectors)):
        for j in range(i + 1, len(vectors)):
            worst = max(worst, float(vectors[i] @ vectors[j]))
    return worst

def _overlaps(box: Tuple[int, int, int], placed: List[GlyphPlacement]) -> bool:
    x, y, size = box
    for other in placed:
        if (x < other.x + other.size + GLYPH_GAP and other.x < x + size + GLYPH_GAP and
                y < other.y + other.size + GLYPH_GAP and other.y < y + size + GLYPH_GAP):
            return True
    return False

def _place_glyphs(rng: np.random.Generator, kinds: List[str], M: int, N: int) -> Optional[List[GlyphPlacement]]:
    placed: List[GlyphPlacement] = []
    tries = 0
    for kind in kinds:
        while True:
            tries += 1
            if tries > MAX_PLACEMENT_TRIES:
                return None
            size = int(rng.integers(GLYPH_SIZE_RANGE[0], GLYPH_SIZE_RANGE[1] + 1))
            x = int(rng.integers(0, N - size + 1))
            y = int(rng.integers(0, M - size + 1))
            if not _overlaps((x, y, size), placed):
                placed.append(GlyphPlacement(kind, x, y, size))
                break
    return placed

def count_crosses(glyphs: List[GlyphPlacement]) -> int:
    return sum(1 for g in glyphs if g.kind == CROSS)

def stratified_labels(seed: int, count: int, K: int) -> np.ndarray:
    """Each consecutive block of K samples holds every class once, in shuffled order."""
    labels = np.empty(count, dtype=np.int64)
    for block, start in enumerate(range(0, count, K)):
        order = np.random.default_rng([seed, block]).permutation(K)
        labels[start:start + K] = order[:min(K, count - start)]
    return labels

def _make_cls_sample(seed: int, index: int, label: int, M: int, N: int) -> ClsSample:
    attempt = 0
    while True:
        rng = np.random.default_rng([seed, index, attempt])
        total = int(rng.integers(max(GLYPH_COUNT_RANGE[0], label), GLYPH_COUNT_RANGE[1] + 1))
        kinds = [CROSS] * label + [DISTRACTOR_KINDS[int(i)] for i in rng.integers(0, 3, size=total - label)]
        kinds = [kinds[int(i)] for i in rng.permutation(total)]
        glyphs = _place_glyphs(rng, kinds, M, N)
        if glyphs is not None:
            break
        logger.debug(f"Sample {index}: glyph placement failed on attempt {attempt}, regenerating")
        attempt += 1

    canvas = np.zeros((M, N), dtype=np.uint8)
    for g in glyphs:
        draw_glyph(canvas, g.kind, g.x, g.y, g.size)
    image = (canvas.astype(np.float32) / 255.0)[None]
    return ClsSample(image=image, label=int(label), seed=seed, index=index, attempt=attempt, glyphs=glyphs)

def _check_generation_args(count: int, M: int, N: int) -> None:
    if count < 1:
        raise ContractError(f"count must be ≥ 1, got {count}")
    if M < 2 * GLYPH_SIZE_RANGE[1] or N < 2 * GLYPH_SIZE_RANGE[1]:
        raise ContractError(f"image size {M}x{N} is too small (minimum {2 * GLYPH_SIZE_RANGE[1]})")

def gen_cls(seed: int, count: int, M: int = 256, N: int = 256, K: int = 5,
            threads: int = 1) -> List[ClsSample]:
    """
    Glyph-counting classification samples; label = crosses, clamped to K-1.

    Raises:
        ContractError: count < 1, K outside [2, 7], or the image is too small
    """
    _check_generation_args(count, M, N)
    if not 2 <= K <= GLYPH_COUNT_RANGE[0] + 1:
        raise ContractError(f"K must lie in [2, {GLYPH_COUNT_RANGE[0] + 1}], got {K}")
    labels = stratified_labels(seed, count, K)

    def make(index: int) -> ClsSample:
        return _make_cls_sample(seed, index, int(labels[index]), M, N)

    samples = _map(make, count, threads)
    logger.info(f"Generated {count} classification samples ({M}x{N}, K={K}, seed={seed})")
    return samples

# ============================================================================
# Strokes
# ============================================================================

def stroke_noise(seed: int, index: int, attempt: int, shape: Tuple[int, ...]) -> np.ndarray:
    rng = np.random.default_rng([seed, index, attempt, 1])
    return rng.normal(0.0, NOISE_SIGMA, size=shape).astype(np.float32)

def bezier_points(control_points, samples: int) -> np.ndarray:
    """Points on a quadratic Bezier curve as int32 (x, y) pairs."""
    p0, p1, p2 = (np.asarray(p, dtype=np.float64) for p in control_points)
    t = np.linspace(0.0, 1.0, samples)[:, None]
    curve = (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t ** 2 * p2
    return np.round(curve).astype(np.int32)

def _random_stroke(rng: np.random.Generator, M: int, N: int) -> Stroke:
    min_span = M / 2.0
    for _ in range(MAX_CURVE_ATTEMPTS):
        p0 = (float(rng.uniform(0, N - 1)), float(rng.uniform(0, M - 1)))
        p2 = (float(rng.uniform(0, N - 1)), float(rng.uniform(0, M - 1)))
        if np.hypot(p2[0] - p0[0], p2[1] - p0[1]) >= min_span:
            break
    p1 = (float(rng.uniform(0, N - 1)), float(rng.uniform(0, M - 1)))
    width = int(rng.integers(STROKE_WIDTH_RANGE[0], STROKE_WIDTH_RANGE[1] + 1))
    return Stroke(control_points=(p0, p1, p2), width=width)

def rasterize_strokes(strokes: List[Stroke], M: int, N: int) -> np.ndarray:
    """Binary [M, N] raster of the strokes."""
    canvas = np.zeros((M, N), dtype=np.uint8)
    for stroke in strokes:
        points = bezier_points(stroke.control_points, 4 * max(M, N))
        cv2.polylines(canvas, [points.reshape(-1, 1, 2)], False, 255, stroke.width, lineType=cv2.LINE_8)
    return (canvas > 0).astype(np.float32)

def _make_seg_sample(seed: int, index: int, M: int, N: int) -> SegSample:
    attempt = 0
    while True:
        rng = np.random.default_rng([seed, index, attempt])
        curves = int(rng.integers(CURVE_COUNT_RANGE[0], CURVE_COUNT_RANGE[1] + 1))
        strokes = [_random_stroke(rng, M, N) for _ in range(curves)]
        intensity = float(rng.uniform(*INTENSITY_RANGE))
        mask = rasterize_strokes(strokes, M, N)
        fraction = float(mask.mean())
        if FOREGROUND_RANGE[0] <= fraction <= FOREGROUND_RANGE[1]:
            break
        attempt += 1

    mask = mask[None]
    image = (mask * np.float32(intensity) + stroke_noise(seed, index, attempt, mask.shape)).astype(np.float32)
    return SegSample(image=image, mask=mask, seed=seed, index=index, attempt=attempt,
                     strokes=strokes, intensity=intensity)

def gen_seg(seed: int, count: int, M: int = 256, N: int = 256, threads: int = 1) -> List[SegSample]:
    """
    Thin-stroke segmentation samples with exact masks.

    Raises:
        ContractError: count < 1 or the image is too small
    """
    _check_generation_args(count, M, N)

    def make(index: int) -> SegSample:
        return _make_seg_sample(seed, index, M, N)

    samples = _map(make, count, threads)
    logger.info(f"Generated {count} segmentation samples ({M}x{N}, seed={seed})")
    return samples

def _map(make, count: int, threads: int) -> list:
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(make, range(count)))
    return [make(i) for i in range(count)]
