"""Feature-map capture and local surrogate explanations."""
import numpy as np
import pytest

from lithocnn.engine import no_grad
from lithocnn.errors import ParameterError
from lithocnn.graph import forward
from lithocnn.interpret import Explanation, explain, extract_feature_maps, model_predict_fn
from lithocnn.rng import RngHandle


def constant_model(classes=3):
    row = np.full(classes, 1.0 / classes)

    def predict(batch):
        return np.tile(row, (len(batch), 1))

    return predict


def region_mean_model(grid=4):
    """Class-0 score is the mean intensity of grid cell (0, 0); affine in the mask."""

    def predict(batch):
        h = batch.shape[2] // grid
        w = batch.shape[3] // grid
        score = batch[:, 0, :h, :w].mean(axis=(1, 2))
        return np.stack([score, 1.0 - score], axis=1)

    return predict


@pytest.fixture
def bright_corner_tile():
    tile = np.full((3, 64, 64), 0.2, dtype=np.float32)
    tile[:, :16, :16] = 0.9
    return tile


class TestExplain:
    def test_constant_model_weights_vanish(self, bright_corner_tile):
        result = explain(constant_model(), bright_corner_tile, 0, grid=4, n_samples=200, rng=RngHandle(1))
        assert result.uninformative
        assert np.abs(result.weights).max() < 1e-6

    def test_planted_region_ranks_first(self, bright_corner_tile):
        result = explain(region_mean_model(4), bright_corner_tile, 0, grid=4, n_samples=300, rng=RngHandle(2))
        flat = result.weights.ravel()
        assert flat.argmax() == 0  # region (0, 0)
        assert result.weights[0, 0] > np.partition(flat, -2)[-2] + 1e-9
        assert result.mask[0] == (0, 0)
        assert result.residual < 1e-6  # model is affine in the region mask

    def test_fixed_seed_identical_mask(self, bright_corner_tile):
        a = explain(region_mean_model(4), bright_corner_tile, 0, grid=4, n_samples=120, rng=RngHandle(5, 7))
        b = explain(region_mean_model(4), bright_corner_tile, 0, grid=4, n_samples=120, rng=RngHandle(5, 7))
        assert a.mask == b.mask
        assert np.array_equal(a.weights, b.weights)

    def test_sample_budget_checked(self, bright_corner_tile):
        with pytest.raises(ParameterError):
            explain(constant_model(), bright_corner_tile, 0, grid=7, n_samples=10, rng=RngHandle(0))

    def test_weights_attach_to_coordinates(self, bright_corner_tile):
        fine = explain(region_mean_model(4), bright_corner_tile, 0, grid=8, n_samples=400, rng=RngHandle(3))
        # at a finer grid the planted quadrant covers cells (0..1, 0..1)
        rows = {rc for rc in fine.mask[:4]}
        assert rows <= {(0, 0), (0, 1), (1, 0), (1, 1)}


class TestFeatureMaps:
    def test_first_conv_shape_law(self, tiny_model, tile_227):
        maps = extract_feature_maps(tiny_model.graph, tiny_model.params, tile_227, ["conv1"])
        derived = tiny_model.graph.derive_shapes()["conv1"]
        assert maps.layers["conv1"]["activations"].shape == tuple(derived)

    def test_constant_input_constant_maps(self, tiny_model):
        tile = np.full((3, 227, 227), 0.5, dtype=np.float32)
        maps = extract_feature_maps(tiny_model.graph, tiny_model.params, tile, ["conv1"])
        act = maps.layers["conv1"]["activations"]
        interior = act[:, 1:-1, 1:-1]  # borders unaffected by padding here (P=0), full map constant
        per_filter_spread = np.ptp(interior.reshape(act.shape[0], -1), axis=1)
        assert np.all(per_filter_spread < 1e-4)

    def test_four_filters_exported(self, tiny_model, tile_227):
        maps = extract_feature_maps(tiny_model.graph, tiny_model.params, tile_227, ["conv1", "conv2"])
        for name in ("conv1", "conv2"):
            display = maps.layers[name]["display"]
            assert display.shape[0] >= 4
            assert display.min() >= 0.0 and display.max() <= 1.0

    def test_capture_does_not_perturb_prediction(self, tiny_model, tile_227):
        with no_grad():
            plain = forward(tiny_model.graph, tiny_model.params, tile_227[None]).data
            captured, _ = forward(
                tiny_model.graph, tiny_model.params, tile_227[None], capture=["conv1", "fc8"]
            )
        assert np.array_equal(plain, captured.data)

    def test_unknown_layer_rejected(self, tiny_model, tile_227):
        with pytest.raises(ParameterError):
            extract_feature_maps(tiny_model.graph, tiny_model.params, tile_227, ["convX"])


def test_model_predict_fn_rows_are_probabilities(tiny_model, tile_227):
    predict = model_predict_fn(tiny_model.graph, tiny_model.params)
    out = predict(np.stack([tile_227, tile_227]))
    assert out.shape == (2, 6)
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-6)
    assert np.array_equal(out[0], out[1])
