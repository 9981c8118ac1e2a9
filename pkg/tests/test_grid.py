"""Tests for patch geometry, plans and the global patch."""

import numpy as np
import pytest

from autograd.tensor import Tensor
from patches.grid import (PatchGrid, PatchPlan, area_downsample, extract_patches, make_global_patch,
                          stitch_patches, tile_image)
from utils.error_manager import DimensionError, PlanError

class TestPatchGrid:

    def test_patch_size(self):
        grid = PatchGrid(M=64, N=48, c=1, m=4, n=3)
        assert (grid.ph, grid.pw, grid.cells) == (16, 16, 12)

    def test_row_major_positions(self):
        grid = PatchGrid(M=8, N=12, c=1, m=2, n=3)
        assert grid.cell_position(0) == (0, 0)
        assert grid.cell_position(2) == (0, 2)
        assert grid.cell_position(4) == (1, 1)

    @pytest.mark.parametrize("dims", [(30, 32, 1, 4, 4), (32, 32, 1, 0, 4), (32, 32, 0, 4, 4)])
    def test_invalid_grid(self, dims):
        with pytest.raises(DimensionError):
            PatchGrid(*dims)

class TestPatchPlan:

    def test_k_is_floor_of_rate_times_cells(self):
        plan = PatchPlan(PatchGrid(64, 64, 1, 4, 4), sampling_rate=0.2, inner_iterations=4)
        assert plan.k == 3
        assert plan.patches_per_outer_step == 12

    def test_k_is_at_least_one(self):
        plan = PatchPlan(PatchGrid(32, 32, 1, 2, 2), sampling_rate=0.1, inner_iterations=3)
        assert plan.k == 1
        assert plan.patches_per_outer_step == 3

    def test_full_rate(self):
        plan = PatchPlan(PatchGrid(32, 32, 1, 2, 2), sampling_rate=1.0, inner_iterations=1)
        assert plan.k == 4

    @pytest.mark.parametrize("rate,iterations", [(0.0, 1), (1.5, 1), (0.5, 0), (0.5, 3)])
    def test_invalid_plan(self, rate, iterations):
        with pytest.raises(PlanError):
            PatchPlan(PatchGrid(32, 32, 1, 2, 2), sampling_rate=rate, inner_iterations=iterations)

class TestTiling:

    def test_stitch_inverts_tile(self, rng):
        grid = PatchGrid(M=12, N=8, c=2, m=3, n=2)
        image = rng.normal(size=(2, 12, 8)).astype(np.float32)
        patches = tile_image(image, grid)
        assert patches.shape == (6, 2, 4, 4)
        np.testing.assert_array_equal(stitch_patches(patches, grid), image)

    def test_tile_order(self):
        grid = PatchGrid(M=4, N=4, c=1, m=2, n=2)
        image = np.arange(16, dtype=np.float32).reshape(1, 4, 4)
        patches = tile_image(image, grid)
        np.testing.assert_array_equal(patches[1, 0], [[2, 3], [6, 7]])
        np.testing.assert_array_equal(patches[2, 0], [[8, 9], [12, 13]])

    def test_extract_matches_tile_rows(self, rng):
        grid = PatchGrid(M=16, N=16, c=1, m=4, n=4)
        image = Tensor(rng.normal(size=(1, 16, 16)))
        tiles = tile_image(image, grid)
        indices = [13, 0, 6]
        np.testing.assert_array_equal(extract_patches(image, grid, indices), tiles[indices])

    def test_stitch_allows_other_channel_counts(self, rng):
        grid = PatchGrid(M=8, N=8, c=1, m=2, n=2)
        features = rng.normal(size=(4, 3, 4, 4))
        assert stitch_patches(features, grid).shape == (3, 8, 8)

    def test_image_shape_must_match(self, rng):
        grid = PatchGrid(M=8, N=8, c=1, m=2, n=2)
        with pytest.raises(DimensionError):
            tile_image(rng.normal(size=(1, 8, 6)), grid)
        with pytest.raises(DimensionError):
            stitch_patches(rng.normal(size=(3, 1, 4, 4)), grid)

class TestGlobalPatch:

    def test_global_patch_is_block_mean(self, rng):
        grid = PatchGrid(M=12, N=8, c=1, m=3, n=2)
        image = rng.normal(size=(1, 12, 8)).astype(np.float32)
        gp = make_global_patch(image, grid)
        assert gp.pixels.shape == (1, 4, 4)
        assert gp.feature is None
        np.testing.assert_allclose(gp.pixels[0, 1, 2], image[0, 3:6, 4:6].mean(), rtol=1e-6)

    def test_one_by_one_grid_keeps_image(self, rng):
        grid = PatchGrid(M=8, N=8, c=1, m=1, n=1)
        image = rng.normal(size=(1, 8, 8)).astype(np.float32)
        np.testing.assert_array_equal(make_global_patch(image, grid).pixels, image)

    def test_area_downsample_indivisible(self):
        with pytest.raises(DimensionError):
            area_downsample(np.zeros((1, 5, 4)), 2, 2)
