"""Tests for fusing the Z-block with the global-patch feature."""

import numpy as np
import pytest

from autograd import ops
from autograd.tensor import Tensor, backward, parameter
from patches.fusion import fuse_add, fuse_concat_cls, fuse_concat_seg
from utils.error_manager import DimensionError

class TestFuseAdd:

    def test_broadcasts_over_grid(self, rng):
        z = rng.normal(size=(2, 3, 2, 4))
        g = rng.normal(size=(2, 3))
        fused = fuse_add(Tensor(z), Tensor(g))
        np.testing.assert_allclose(fused.data, z + g[:, :, None, None], rtol=1e-6)

    def test_single_image(self, rng):
        z = rng.normal(size=(3, 2, 2))
        g = rng.normal(size=(3,))
        np.testing.assert_allclose(fuse_add(Tensor(z), Tensor(g)).data, z + g[:, None, None], rtol=1e-6)

    def test_global_gradient_sums_cells(self):
        g = parameter(np.zeros((1, 2)))
        backward(ops.sum_all(fuse_add(Tensor(np.zeros((1, 2, 3, 3))), g)))
        np.testing.assert_allclose(g.grad, [[9.0, 9.0]])

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            fuse_add(Tensor(np.zeros((1, 3, 2, 2))), Tensor(np.zeros((1, 2))))
        with pytest.raises(DimensionError):
            fuse_add(Tensor(np.zeros((3, 2, 2))), Tensor(np.zeros((2,))))

class TestFuseConcat:

    def test_cls_concat_doubles_channels(self, rng):
        z = rng.normal(size=(2, 3, 2, 2)).astype(np.float32)
        g = rng.normal(size=(2, 3)).astype(np.float32)
        fused = fuse_concat_cls(Tensor(z), Tensor(g))
        assert fused.shape == (2, 6, 2, 2)
        np.testing.assert_array_equal(fused.data[:, :3], z)
        np.testing.assert_array_equal(fused.data[:, 3:, 1, 0], g)

    def test_seg_concat_upsamples_global_map(self, rng):
        canvas = rng.normal(size=(1, 2, 8, 8)).astype(np.float32)
        g_feat = rng.normal(size=(1, 2, 4, 4)).astype(np.float32)
        fused = fuse_concat_seg(Tensor(canvas), Tensor(g_feat))
        assert fused.shape == (1, 4, 8, 8)
        np.testing.assert_array_equal(fused.data[:, :2], canvas)
        np.testing.assert_array_equal(fused.data[0, 2:, 5, 2], g_feat[0, :, 2, 1])

    def test_seg_concat_single_image(self, rng):
        fused = fuse_concat_seg(Tensor(rng.normal(size=(2, 8, 4))), Tensor(rng.normal(size=(2, 4, 2))))
        assert fused.shape == (4, 8, 4)

    def test_seg_concat_needs_integer_factor(self):
        with pytest.raises(DimensionError):
            fuse_concat_seg(Tensor(np.zeros((1, 2, 8, 8))), Tensor(np.zeros((1, 2, 3, 3))))
