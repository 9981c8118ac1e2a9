"""Tests for the tensor type, the tape and backward()."""

import numpy as np
import pytest

from autograd import ops
from autograd.tensor import (Tensor, backward, element_bytes, get_dtype, get_graph, is_grad_enabled, no_grad,
                             parameter, precision)
from utils.error_manager import ContractError

class TestTensor:

    def test_nbytes_counts_four_bytes_per_element(self):
        assert Tensor(np.zeros((2, 3, 4))).nbytes == 96
        with precision(np.float64):
            t = Tensor(np.zeros((5,)))
            assert t.data.dtype == np.float64
            assert t.nbytes == 20

    def test_element_bytes_of_scalar_shape(self):
        assert element_bytes(()) == 4

    def test_default_dtype_is_float32(self):
        assert get_dtype() is np.float32
        assert Tensor([1, 2, 3]).data.dtype == np.float32

    def test_precision_restores_dtype(self):
        with precision(np.float64):
            assert get_dtype() is np.float64
        assert get_dtype() is np.float32

    def test_item_and_zero_grad(self):
        w = parameter(np.array([2.0]))
        backward(ops.sum_all(ops.mul(w, w)))
        assert w.grad[0] == pytest.approx(4.0)
        w.zero_grad()
        assert w.grad[0] == 0.0
        assert Tensor(np.array(3.5)).item() == 3.5

class TestTape:

    def test_ops_on_constants_record_nothing(self):
        ops.add(Tensor(np.ones(3)), Tensor(np.ones(3)))
        assert len(get_graph()) == 0

    def test_no_grad_records_nothing(self):
        w = parameter(np.ones(3))
        with no_grad():
            assert not is_grad_enabled()
            out = ops.mul(w, w)
        assert is_grad_enabled()
        assert len(get_graph()) == 0
        assert not out.requires_grad

    def test_backward_releases_visited_nodes(self):
        w = parameter(np.ones((2, 2)))
        loss = ops.sum_all(ops.relu(ops.mul(w, w)))
        assert len(get_graph()) == 3
        backward(loss)
        assert len(get_graph()) == 0

    def test_gradients_accumulate_across_backward_calls(self):
        w = parameter(np.array([1.0, 2.0]))
        backward(ops.sum_all(ops.scale(w, 3.0)))
        backward(ops.sum_all(ops.scale(w, 3.0)))
        np.testing.assert_allclose(w.grad, [6.0, 6.0])

    def test_shared_subexpression_sums_both_paths(self):
        w = parameter(np.array([3.0]))
        h = ops.mul(w, w)
        backward(ops.sum_all(ops.add(h, h)))
        np.testing.assert_allclose(w.grad, [12.0])

    def test_non_scalar_loss_rejected(self):
        w = parameter(np.ones(3))
        with pytest.raises(ContractError):
            backward(ops.mul(w, w))

    def test_leaf_scalar_backward(self):
        w = parameter(np.array(2.0))
        backward(w)
        assert w.grad == pytest.approx(1.0)

    def test_listeners_see_stash_and_release(self):
        events = []
        graph = get_graph()
        graph.add_listener(lambda kind, node: events.append((kind, node.op, node.nbytes)))
        w = parameter(np.ones((2, 3)))
        backward(ops.sum_all(ops.relu(w)))
        assert events == [("stash", "relu", 24), ("stash", "sum", 4), ("release", "sum", 4),
                          ("release", "relu", 24)]

    def test_raising_listener_keeps_node_off_tape(self):
        def refuse(kind, node):
            raise RuntimeError("no room")

        graph = get_graph()
        graph.add_listener(refuse)
        with pytest.raises(RuntimeError):
            ops.relu(parameter(np.ones(2)))
        graph.remove_listener(refuse)
        assert len(graph) == 0

    def test_clear_releases_newest_first(self):
        released = []
        graph = get_graph()
        w = parameter(np.ones(2))
        ops.relu(ops.scale(w, 2.0))
        graph.add_listener(lambda kind, node: released.append(node.op))
        graph.clear()
        assert released == ["relu", "scale"]
        assert len(graph) == 0
