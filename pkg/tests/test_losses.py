"""Tests for the training objectives."""

import math

import numpy as np
import pytest

from autograd.tensor import Tensor, backward, get_graph, parameter
from engine.losses import (bce_with_logits, cross_entropy, cross_entropy_trace, dice_loss, seg_loss,
                           seg_loss_trace)
from utils.error_manager import ContractError, DimensionError

class TestCrossEntropy:

    def test_uniform_logits_give_log_k(self):
        loss = cross_entropy(Tensor(np.zeros((3, 5))), [0, 2, 4])
        assert loss.item() == pytest.approx(math.log(5), rel=1e-6)

    def test_large_logits_stay_finite(self):
        loss = cross_entropy(Tensor(np.array([[1000.0, -1000.0], [-1000.0, 1000.0]])), [0, 1])
        assert np.isfinite(loss.item())
        assert loss.item() == pytest.approx(0.0, abs=1e-6)

    def test_gradient_is_softmax_minus_onehot_over_batch(self):
        logits = parameter(np.array([[0.0, 0.0], [0.0, 0.0]]))
        backward(cross_entropy(logits, [1, 0]))
        np.testing.assert_allclose(logits.grad, [[0.25, -0.25], [-0.25, 0.25]], rtol=1e-6)

    def test_errors(self):
        with pytest.raises(DimensionError):
            cross_entropy(Tensor(np.zeros((2, 3, 1))), [0, 1])
        with pytest.raises(DimensionError):
            cross_entropy(Tensor(np.zeros((2, 3))), [0])
        with pytest.raises(ContractError):
            cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])

class TestSegmentationLosses:

    def test_bce_at_zero_logits(self):
        loss = bce_with_logits(Tensor(np.zeros((1, 1, 2, 2))), np.array([[[[0, 1], [1, 0]]]]))
        assert loss.item() == pytest.approx(math.log(2), rel=1e-6)

    def test_bce_is_stable(self):
        loss = bce_with_logits(Tensor(np.array([500.0, -500.0])), np.array([1.0, 0.0]))
        assert loss.item() == pytest.approx(0.0, abs=1e-6)

    def test_perfect_dice(self):
        mask = np.array([[1.0, 0.0], [1.0, 1.0]])
        assert dice_loss(Tensor(mask), mask).item() == pytest.approx(0.0, abs=1e-7)

    def test_dice_empty_prediction_and_target(self):
        zeros = np.zeros((2, 2))
        assert dice_loss(Tensor(zeros), zeros).item() == pytest.approx(0.0, abs=1e-7)

    def test_dice_disjoint(self):
        probs = np.array([1.0, 0.0])
        target = np.array([0.0, 1.0])
        assert dice_loss(Tensor(probs), target).item() == pytest.approx(1.0 - 1.0 / 3.0, rel=1e-6)

    def test_targets_must_be_binary(self):
        with pytest.raises(ContractError):
            bce_with_logits(Tensor(np.zeros(3)), np.array([0.0, 0.5, 1.0]))
        with pytest.raises(DimensionError):
            dice_loss(Tensor(np.zeros(3)), np.zeros(4))

    def test_seg_loss_is_bce_plus_dice(self, rng):
        logits = rng.normal(size=(2, 1, 4, 4)).astype(np.float32)
        mask = (rng.uniform(size=(2, 1, 4, 4)) > 0.5).astype(np.float32)
        total = seg_loss(Tensor(logits), mask).item()
        probs = 1.0 / (1.0 + np.exp(-logits))
        expected = bce_with_logits(Tensor(logits), mask).item() + dice_loss(Tensor(probs), mask).item()
        assert total == pytest.approx(expected, rel=1e-5)

class TestTraces:

    def test_cross_entropy_trace_matches_tape(self):
        cross_entropy(parameter(np.zeros((2, 3))), [0, 1])
        nodes = list(get_graph().nodes.values())
        assert [(n.op, n.out_shape) for n in nodes] == cross_entropy_trace((2, 3))

    def test_seg_loss_trace_matches_tape(self):
        seg_loss(parameter(np.zeros((2, 1, 4, 4))), np.zeros((2, 1, 4, 4)))
        nodes = sorted(get_graph().nodes.values(), key=lambda n: n.index)
        assert [(n.op, n.out_shape) for n in nodes] == seg_loss_trace((2, 1, 4, 4))
