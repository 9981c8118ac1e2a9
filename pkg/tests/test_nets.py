"""Tests for step programs, backbones, aggregators and baseline heads."""

import numpy as np
import pytest

from autograd.tensor import Tensor, get_graph, no_grad
from nets.aggregators import AggregatorSpec, aggregator_program, build_aggregator, build_head, head_program
from nets.backbones import BackboneSpec, backbone_program, build_backbone
from nets.layers import Model, count_parameters, trace
from utils.config import CLASSIFICATION, SEGMENTATION
from utils.error_manager import DimensionError, ModelBuildError

CLS_SPEC = BackboneSpec(widths=(2, 3), feature_dim=5, patch_size=(16, 12), task=CLASSIFICATION)
SEG_SPEC = BackboneSpec(widths=(2, 3, 4), seg_channels=3, patch_size=(16, 8), task=SEGMENTATION)

class TestBackbones:

    def test_cls_output_shape(self, rng):
        model = build_backbone(CLS_SPEC, seed=0)
        out = model(Tensor(rng.normal(size=(3, 1, 16, 12))))
        assert out.shape == (3, 5)

    def test_seg_output_shape(self, rng):
        model = build_backbone(SEG_SPEC, seed=0)
        out = model(Tensor(rng.normal(size=(2, 1, 16, 8))))
        assert out.shape == (2, 3, 16, 8)

    def test_cls_head_only_when_widths_differ(self, rng):
        assert "head.weight" in backbone_program(CLS_SPEC).param_shapes
        spec = BackboneSpec(widths=(2, 3), feature_dim=3, patch_size=(16, 12), task=CLASSIFICATION)
        program = backbone_program(spec)
        assert not any(name.startswith("head.") for name in program.param_shapes)
        assert count_parameters(program) == (2 * 9 + 2) + (3 * 2 * 9 + 3)
        out = build_backbone(spec)(Tensor(rng.normal(size=(2, 1, 16, 12))))
        assert out.shape == (2, 3)

    def test_cls_patch_must_divide_pooling(self):
        with pytest.raises(ModelBuildError):
            backbone_program(BackboneSpec(widths=(2, 3), patch_size=(10, 12)))

    def test_seg_needs_three_widths(self):
        with pytest.raises(ModelBuildError):
            backbone_program(BackboneSpec(widths=(2, 3), patch_size=(16, 16), task=SEGMENTATION))

    def test_wrong_input_shape(self, rng):
        model = build_backbone(CLS_SPEC)
        with pytest.raises(DimensionError):
            model(Tensor(rng.normal(size=(1, 2, 16, 12))))

    def test_batch_invariance(self, rng):
        model = build_backbone(SEG_SPEC, seed=4)
        x = rng.normal(size=(3, 1, 16, 8)).astype(np.float32)
        with no_grad():
            batched = model(Tensor(x)).data
            for i in range(3):
                np.testing.assert_array_equal(batched[i:i + 1], model(Tensor(x[i:i + 1])).data)

class TestPrograms:

    @pytest.mark.parametrize("spec,shape", [(CLS_SPEC, (2, 1, 16, 12)), (SEG_SPEC, (2, 1, 16, 8))])
    def test_trace_matches_recorded_nodes(self, rng, spec, shape):
        program = backbone_program(spec)
        model = Model.initialize(program, seed=1)
        out = model(Tensor(rng.normal(size=shape)))
        nodes = sorted(get_graph().nodes.values(), key=lambda node: node.index)
        traced = trace(program, shape)
        assert [node.out_shape for node in nodes] == [s for _, s in traced]
        assert traced[-1][1] == out.shape

    def test_count_parameters_without_allocation(self):
        program = backbone_program(CLS_SPEC)
        # stage1 1->2 3x3, stage2 2->3 3x3, head 3->5 1x1
        expected = (2 * 9 + 2) + (3 * 2 * 9 + 3) + (5 * 3 + 5)
        assert count_parameters(program) == expected
        assert Model.initialize(program).parameter_count == expected

    def test_unknown_step_op(self):
        program = backbone_program(CLS_SPEC)
        program.add("softmax", ["features"], "probs")
        with pytest.raises(ModelBuildError):
            trace(program, (1, 1, 16, 12))

class TestModel:

    def test_initialize_is_seeded(self):
        program = backbone_program(CLS_SPEC)
        a, b, c = Model.initialize(program, 7), Model.initialize(program, 7), Model.initialize(program, 8)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name].data, b.params[name].data)
        assert any(not np.array_equal(a.params[n].data, c.params[n].data) for n in a.params if n.endswith("weight"))

    def test_biases_start_at_zero(self):
        model = Model.initialize(backbone_program(CLS_SPEC), 0)
        for name, tensor in model.params.items():
            if name.endswith(".bias"):
                assert not tensor.data.any()

    def test_qualified_names(self):
        model = Model.initialize(backbone_program(CLS_SPEC), 0)
        names = [name for name, _ in model.named_parameters()]
        assert names[0] == "backbone.stage1.weight"
        assert all(name.startswith("backbone.") for name in names)

    def test_state_round_trip(self):
        program = backbone_program(CLS_SPEC)
        source, target = Model.initialize(program, 1), Model.initialize(program, 2)
        target.load_arrays(source.state_arrays())
        for name in source.params:
            np.testing.assert_array_equal(source.params[name].data, target.params[name].data)

    def test_load_rejects_missing_and_misshapen(self):
        model = Model.initialize(backbone_program(CLS_SPEC), 0)
        arrays = model.state_arrays()
        arrays.pop("backbone.head.bias")
        with pytest.raises(ModelBuildError):
            model.load_arrays(arrays)
        arrays = model.state_arrays()
        arrays["backbone.head.bias"] = np.zeros(7)
        with pytest.raises(ModelBuildError):
            model.load_arrays(arrays)

    def test_missing_parameter_at_construction(self):
        program = backbone_program(CLS_SPEC)
        with pytest.raises(ModelBuildError):
            Model(program, {})

class TestAggregators:

    def test_cls_aggregator_logits(self, rng):
        spec = AggregatorSpec(CLASSIFICATION, (3, 2, 8), num_classes=4, width=4)
        model = build_aggregator(spec)
        assert model(Tensor(rng.normal(size=(2, 8, 3, 2)))).shape == (2, 4)

    def test_cls_width_defaults_to_input_channels(self):
        program = aggregator_program(AggregatorSpec(CLASSIFICATION, (2, 2, 6), num_classes=3))
        assert program.param_shapes["mix.weight"] == (6, 6, 3, 3)

    def test_seg_aggregator_logits(self, rng):
        model = build_aggregator(AggregatorSpec(SEGMENTATION, (8, 8, 4)))
        assert model(Tensor(rng.normal(size=(1, 4, 8, 8)))).shape == (1, 1, 8, 8)

    def test_unknown_variant(self):
        with pytest.raises(ModelBuildError):
            aggregator_program(AggregatorSpec("detection", (2, 2, 4)))

    def test_empty_grid(self):
        with pytest.raises(ModelBuildError):
            aggregator_program(AggregatorSpec(CLASSIFICATION, (0, 2, 4), num_classes=2))

    def test_heads(self, rng):
        cls_head = build_head(CLASSIFICATION, 5, 3)
        assert cls_head(Tensor(rng.normal(size=(2, 5)))).shape == (2, 3)
        seg_head = build_head(SEGMENTATION, 3)
        assert seg_head(Tensor(rng.normal(size=(2, 3, 4, 4)))).shape == (2, 1, 4, 4)
        with pytest.raises(ModelBuildError):
            head_program(CLASSIFICATION, 0, 2)
