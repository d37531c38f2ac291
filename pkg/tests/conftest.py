import json

import numpy as np
import pytest

from panorama_iqa.core.imageio import ErpImage, save_image
from panorama_iqa.core.synthetic import SyntheticConfig, build_synthetic_dataset
from panorama_iqa.management import setup
from panorama_iqa.settings import RunConfig, apply_overrides

TOY_OVERRIDES = {
    "sampler.resolution": 16,
    "sampler.fraction": 0.1,
    "model.token_dim": 16,
    "model.patch_size": 8,
    "model.n_layers": 1,
    "model.n_heads": 2,
    "model.mlp_dim": 32,
    "model.max_patches": 4,
    "training.steps": 5,
    "training.batch_size": 4,
}


def pytest_configure():
    setup()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_config():
    return apply_overrides(RunConfig(), TOY_OVERRIDES).validate()


@pytest.fixture
def random_image(rng):
    return ErpImage(rng.random((32, 64, 3)))


@pytest.fixture
def tiny_dataset(tmp_path):
    """4 scenes x 2 blur levels of 32x64 panoramas."""
    config = SyntheticConfig(n_scenes=4, height=32, width=64, levels=2)
    return build_synthetic_dataset(tmp_path / "dataset", config, seed=3)


def write_image(path, data):
    save_image(ErpImage(data), path)
    return path


def write_manifest_lines(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path
