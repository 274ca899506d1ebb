import numpy as np
import pytest

from lithocnn.architectures import build_alexnet
from lithocnn.checkpoint import Model
from lithocnn.rng import RngHandle


@pytest.fixture
def np_rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def tiny_model():
    """Randomly initialized narrow AlexNet; cheap enough for CLI/service tests."""
    graph = build_alexnet(6, 3, width=0.05)
    params = graph.init_params(RngHandle(11))
    labels = ["argillite", "granite", "limestone", "sandstone_laminated", "sandstone_massive", "siltstone"]
    return Model(graph=graph, params=params, labels=labels, width=0.05)


@pytest.fixture(scope="session")
def tiny_checkpoint(tiny_model, tmp_path_factory):
    from lithocnn.checkpoint import save_checkpoint

    path = tmp_path_factory.mktemp("ckpt") / "tiny.lcn"
    save_checkpoint(tiny_model, path)
    return path


@pytest.fixture(scope="session")
def tile_227():
    """One deterministic synthetic RGB tile."""
    from lithocnn.synthetic import generate_tile
    from lithocnn.images import LithotypeLabel

    return generate_tile(LithotypeLabel.SANDSTONE_LAMINATED, RngHandle(3, 1))


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Eight labeled synthetic tiles per class, materialized once per session."""
    from lithocnn.images import load_manifest
    from lithocnn.synthetic import generate_corpus

    root = tmp_path_factory.mktemp("corpus")
    manifest = generate_corpus(root, per_class=8, seed=2029)
    return {"dir": root, "manifest": manifest, "records": load_manifest(manifest)}
