"""Tests for the synthetic dataset generators."""

import numpy as np
import pytest

from synthdata.synth import (CROSS, FOREGROUND_RANGE, GLYPH_COUNT_RANGE, GLYPH_GAP, count_crosses, gen_cls, gen_seg,
                             glyph_template, rasterize_strokes, stratified_labels, template_ambiguity)
from utils.error_manager import ContractError

class TestClassification:

    @pytest.fixture(scope="class")
    def samples(self):
        return gen_cls(seed=11, count=6, M=128, N=128, K=3)

    def test_deterministic(self, samples):
        again = gen_cls(seed=11, count=6, M=128, N=128, K=3)
        for a, b in zip(samples, again):
            np.testing.assert_array_equal(a.image, b.image)
            assert a.label == b.label

    def test_thread_count_does_not_change_output(self, samples):
        threaded = gen_cls(seed=11, count=6, M=128, N=128, K=3, threads=3)
        for a, b in zip(samples, threaded):
            np.testing.assert_array_equal(a.image, b.image)

    def test_labels_count_crosses(self, samples):
        for sample in samples:
            assert sample.label == min(count_crosses(sample.glyphs), 2)
            assert GLYPH_COUNT_RANGE[0] <= len(sample.glyphs) <= GLYPH_COUNT_RANGE[1]

    def test_glyph_boxes_keep_their_gap(self, samples):
        for sample in samples:
            glyphs = sample.glyphs
            for i, a in enumerate(glyphs):
                for b in glyphs[i + 1:]:
                    apart_x = a.x + a.size + GLYPH_GAP <= b.x or b.x + b.size + GLYPH_GAP <= a.x
                    apart_y = a.y + a.size + GLYPH_GAP <= b.y or b.y + b.size + GLYPH_GAP <= a.y
                    assert apart_x or apart_y

    def test_image_range(self, samples):
        for sample in samples:
            assert sample.image.shape == (1, 128, 128)
            assert sample.image.dtype == np.float32
            assert sample.image.min() >= 0.0 and sample.image.max() <= 1.0

    def test_stratified_labels(self):
        labels = stratified_labels(seed=2, count=10, K=4)
        assert sorted(labels[:4]) == [0, 1, 2, 3]
        assert sorted(labels[4:8]) == [0, 1, 2, 3]
        assert len(labels) == 10

    def test_cross_is_distinct_at_full_resolution(self):
        assert template_ambiguity(12, 1) < template_ambiguity(12, 4)
        assert glyph_template(CROSS, 12).sum() > 0

    @pytest.mark.parametrize("kwargs", [{"count": 0}, {"count": 2, "K": 1}, {"count": 2, "K": 8},
                                        {"count": 2, "M": 20, "N": 20}])
    def test_invalid_arguments(self, kwargs):
        with pytest.raises(ContractError):
            gen_cls(seed=0, **kwargs)

    def test_count_message(self):
        with pytest.raises(ContractError, match="count must be ≥ 1, got 0"):
            gen_cls(seed=0, count=0)

class TestSegmentation:

    @pytest.fixture(scope="class")
    def samples(self):
        return gen_seg(seed=4, count=4, M=64, N=64)

    def test_masks_are_binary(self, samples):
        for sample in samples:
            assert set(np.unique(sample.mask).tolist()) <= {0.0, 1.0}

    def test_foreground_fraction(self, samples):
        for sample in samples:
            assert FOREGROUND_RANGE[0] <= sample.mask.mean() <= FOREGROUND_RANGE[1]

    def test_image_is_mask_times_intensity_plus_noise(self, samples):
        for sample in samples:
            expected = sample.mask * np.float32(sample.intensity) + sample.noise()
            np.testing.assert_array_equal(sample.image, expected.astype(np.float32))

    def test_mask_is_stroke_raster(self, samples):
        for sample in samples:
            np.testing.assert_array_equal(sample.mask[0], rasterize_strokes(sample.strokes, 64, 64))

    def test_deterministic_across_threads(self, samples):
        threaded = gen_seg(seed=4, count=4, M=64, N=64, threads=2)
        for a, b in zip(samples, threaded):
            np.testing.assert_array_equal(a.image, b.image)
            np.testing.assert_array_equal(a.mask, b.mask)

    def test_invalid_count(self):
        with pytest.raises(ContractError):
            gen_seg(seed=0, count=0)
