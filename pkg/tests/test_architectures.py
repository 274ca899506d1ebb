"""Graph builders: structure, shape laws, node counts, serialization."""
import numpy as np
import pytest

from lithocnn.architectures import (
    build_alexnet,
    build_architecture,
    build_googlenet,
    build_inception_module,
    build_residual_module,
    build_resnet,
    build_vgg,
)
from lithocnn.checkpoint import Model, load_checkpoint, save_checkpoint
from lithocnn.engine import no_grad
from lithocnn.errors import CheckpointError, ParameterError, ShapeError
from lithocnn.graph import LayerSpec, NetworkGraph, forward, node_count
from lithocnn.rng import RngHandle

WIDTH = 0.2  # keeps unit-test forwards cheap; full width is exercised in acceptance

BUILDERS = {
    "alexnet": lambda c, ch: build_alexnet(c, ch, width=WIDTH),
    "vgg": lambda c, ch: build_vgg(c, ch, width=WIDTH),
    "googlenet": lambda c, ch: build_googlenet(c, ch, width=WIDTH),
    "resnet": lambda c, ch: build_resnet(c, ch, width=WIDTH),
}


def runtime_shapes(graph, batch=2):
    params = graph.init_params(RngHandle(0))
    x = np.random.default_rng(1).normal(size=(batch,) + graph.input_shape).astype(np.float32)
    with no_grad():
        probs, acts = forward(graph, params, x, mode="infer", capture="all")
    return probs, {name: arr.shape[1:] if arr.shape[0] == batch else arr.shape for name, arr in acts.items()}


@pytest.mark.parametrize("arch", sorted(BUILDERS))
@pytest.mark.parametrize("channels", [1, 3])
def test_derived_shapes_match_runtime(arch, channels):
    graph = BUILDERS[arch](6, channels)
    derived = graph.derive_shapes()
    probs, actual = runtime_shapes(graph)
    for name, shape in actual.items():
        assert tuple(shape) == tuple(derived[name]), f"{arch}/{name}"
    assert probs.data.shape == (2, 6)
    assert np.allclose(probs.data.sum(axis=1), 1.0, atol=1e-6)


@pytest.mark.parametrize("arch", sorted(BUILDERS))
def test_node_counts_equal_runtime_activation_counts(arch):
    graph = BUILDERS[arch](6, 3)
    params = graph.init_params(RngHandle(0))
    x = np.zeros((2,) + graph.input_shape, dtype=np.float32)
    with no_grad():
        _, acts = forward(graph, params, x, mode="infer", capture="all")
    derived = graph.derive_shapes()
    for name, arr in acts.items():
        per_sample = arr.size // 2
        assert node_count(derived[name]) == per_sample, name


class TestNodeCount:
    def test_alexnet_conv1_plane(self):
        assert node_count((55, 55, 96)) == 290_400

    def test_unit(self):
        assert node_count((1, 1, 1)) == 1

    def test_input_plane(self):
        assert node_count((227, 227, 3)) == 154_587


class TestAlexNet:
    def test_layer_census(self):
        graph = build_alexnet(6, 3)
        kinds = [s.kind for s in graph.layers]
        assert kinds.count("conv") == 5
        assert kinds.count("dense") == 3

    def test_output_width_is_class_count(self):
        graph = build_alexnet(6, 3)
        assert graph.layers[-1].params["units"] == 6

    def test_forward_on_zeros_is_softmax(self):
        graph = build_alexnet(4, 3, width=0.05)
        params = graph.init_params(RngHandle(2))
        with no_grad():
            probs = forward(graph, params, np.zeros((1, 3, 227, 227), dtype=np.float32))
        assert probs.data.shape == (1, 4)
        assert probs.data.sum() == pytest.approx(1.0, abs=1e-9)


class TestVgg:
    def test_all_convs_are_3x3_same_padded(self):
        graph = build_vgg(6, 3, "vgg16")
        convs = [s for s in graph.layers if s.kind == "conv"]
        assert len(convs) == 13
        assert all(s.params["kernel_size"] == 3 and s.params["padding"] == 1 for s in convs)

    def test_spatial_halves_at_each_pool(self):
        graph = build_vgg(6, 3, "vgg16", width=WIDTH)
        shapes = graph.derive_shapes()
        prev = dict(graph.derive_shapes())
        sizes = [227]
        for spec in graph.layers:
            if spec.kind == "max_pool":
                sizes.append(shapes[spec.name][1])
        for before, after in zip(sizes, sizes[1:]):
            assert after in (before // 2, (before - 1) // 2)
        assert sizes[-1] == 7

    def test_unknown_variant(self):
        with pytest.raises(ParameterError):
            build_vgg(6, 3, "vgg99")


class TestInception:
    def test_output_channels_sum(self):
        module = build_inception_module(192, (64, 128, 32, 32), name="m")
        assert module.params["out_channels"] == 256

    def test_spatial_preserved_and_concat(self):
        module = build_inception_module(8, (4, 6, 2, 2), (3, 1), name="m")
        layers = [module, LayerSpec("dense", "out", {"units": 3}, ["m"])]
        graph = NetworkGraph("googlenet", "v1", (8, 28, 28), 3, layers)
        shapes = graph.derive_shapes()
        assert shapes["m"] == (14, 28, 28)

    def test_bottleneck_precedes_wide_convs(self):
        module = build_inception_module(192, (64, 128, 32, 32), (96, 16), name="m")
        b2 = module.params["branches"][1]
        b3 = module.params["branches"][2]
        assert b2[0]["params"]["kernel_size"] == 1 and b2[0]["params"]["out_channels"] == 96
        assert b2[2]["params"]["kernel_size"] == 3
        assert b3[0]["params"]["kernel_size"] == 1 and b3[0]["params"]["out_channels"] == 16
        assert b3[2]["params"]["kernel_size"] == 5


class TestGoogLeNet:
    def test_single_dense_classifier(self):
        graph = build_googlenet(6, 3)
        assert sum(1 for s in graph.layers if s.kind == "dense") == 1

    def test_output_classes(self):
        graph = build_googlenet(7, 3, width=WIDTH)
        probs, _ = runtime_shapes(graph)
        assert probs.data.shape == (2, 7)


class TestResidual:
    def test_zeroed_branch_reduces_to_relu(self):
        module = build_residual_module(8, 8, 1, name="r")
        assert module.params["projection"] is None
        layers = [module, LayerSpec("dense", "out", {"units": 2}, ["r"])]
        graph = NetworkGraph("resnet", "resnet18", (8, 8, 8), 2, layers)
        params = graph.init_params(RngHandle(0))
        for name, slots in params.items():
            if name.startswith("r."):
                for k in ("w", "gamma", "beta", "b"):
                    if k in slots:
                        slots[k] = np.zeros_like(slots[k])
        x = np.random.default_rng(0).normal(size=(2, 8, 8, 8)).astype(np.float32)
        with no_grad():
            _, acts = forward(graph, params, x, mode="infer", capture=["r"])
        assert np.array_equal(acts["r"], np.maximum(x, 0))

    def test_stride_two_halves_both_paths(self):
        module = build_residual_module(4, 8, 2, name="r")
        assert module.params["projection"] is not None
        layers = [module, LayerSpec("dense", "out", {"units": 2}, ["r"])]
        # stride-2 3x3 same-padded convs need an odd input size to dimension
        graph = NetworkGraph("resnet", "resnet18", (4, 17, 17), 2, layers)
        assert graph.derive_shapes()["r"] == (8, 9, 9)

    def test_projection_only_when_needed(self):
        assert build_residual_module(8, 8, 1).params["projection"] is None
        assert build_residual_module(8, 16, 1).params["projection"] is not None
        assert build_residual_module(8, 8, 2).params["projection"] is not None

    def test_bad_stride(self):
        with pytest.raises(ParameterError):
            build_residual_module(8, 8, 3)


class TestResnetBuilder:
    def test_unknown_variant(self):
        with pytest.raises(ParameterError):
            build_resnet(6, 3, "resnet1000")

    def test_output_classes(self):
        graph = build_resnet(5, 1, width=WIDTH)
        probs, _ = runtime_shapes(graph)
        assert probs.data.shape == (2, 5)


class TestForwardContract:
    def test_infer_twice_bitwise_identical(self):
        graph = build_alexnet(6, 3, width=0.05)
        params = graph.init_params(RngHandle(9))
        x = np.random.default_rng(4).normal(size=(2, 3, 227, 227)).astype(np.float32)
        with no_grad():
            a = forward(graph, params, x).data
            b = forward(graph, params, x).data
        assert np.array_equal(a, b)

    def test_zero_weights_give_uniform_rows(self):
        graph = build_alexnet(5, 3, width=0.05)
        params = graph.init_params(RngHandle(9))
        for slots in params.values():
            for k in slots:
                if k in ("w", "b", "gamma", "beta"):
                    slots[k] = np.zeros_like(slots[k])
        x = np.random.default_rng(4).normal(size=(3, 3, 227, 227)).astype(np.float32)
        with no_grad():
            probs = forward(graph, params, x).data
        assert np.allclose(probs, 1.0 / 5, atol=1e-7)

    def test_input_shape_mismatch(self):
        graph = build_alexnet(6, 3, width=0.05)
        params = graph.init_params(RngHandle(9))
        with pytest.raises(ShapeError):
            forward(graph, params, np.zeros((1, 1, 227, 227), dtype=np.float32))

    def test_graph_json_roundtrip_forward_bitwise(self):
        graph = build_googlenet(6, 3, width=0.1)
        params = graph.init_params(RngHandle(5))
        clone = NetworkGraph.from_dict(graph.to_dict())
        x = np.random.default_rng(4).normal(size=(1, 3, 227, 227)).astype(np.float32)
        with no_grad():
            a = forward(graph, params, x).data
            b = forward(clone, params, x).data
        assert np.array_equal(a, b)


class TestCheckpoint:
    def _model(self, seed=3):
        graph = build_resnet(6, 3, "resnet10", width=0.1)
        params = graph.init_params(RngHandle(seed))
        labels = ["a", "b", "c", "d", "e", "f"]
        return Model(graph=graph, params=params, labels=labels, width=0.1)

    def test_roundtrip_predictions_bitwise(self, tmp_path):
        model = self._model()
        x = np.random.default_rng(0).normal(size=(2, 3, 227, 227)).astype(np.float32)
        with no_grad():
            before = forward(model.graph, model.params, x).data
        path = tmp_path / "m.lcn"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assert loaded.labels == model.labels
        with no_grad():
            after = forward(loaded.graph, loaded.params, x).data
        assert np.array_equal(before, after)

    def test_crc_corruption_detected(self, tmp_path):
        path = tmp_path / "m.lcn"
        save_checkpoint(self._model(), path)
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="CRC"):
            load_checkpoint(path)

    def test_version_mismatch_names_versions(self, tmp_path):
        import struct
        import zlib

        path = tmp_path / "m.lcn"
        save_checkpoint(self._model(), path)
        blob = bytearray(path.read_bytes())[:-4]
        blob[4:8] = struct.pack("<I", 99)
        blob += struct.pack("<I", zlib.crc32(bytes(blob)))
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="version 99"):
            load_checkpoint(path)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.lcn"
        path.write_bytes(b"PNG...whatever")
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)


def test_build_architecture_dispatch():
    assert build_architecture("alexnet", 6, 3, 0.1).arch_id == "alexnet"
    assert build_architecture("vgg", 6, 3, 0.1, "vgg11").variant == "vgg11"
    with pytest.raises(ParameterError):
        build_architecture("lenet", 6, 3)


def test_head_validation():
    with pytest.raises(ParameterError):
        build_alexnet(1, 3)
    with pytest.raises(ParameterError):
        build_alexnet(6, 2)
    with pytest.raises(ParameterError):
        build_alexnet(6, 3, width=1.5)
