import numpy as np
import pytest

from matedit.datasetio import load_manifest
from matedit.scenegen import DatasetConfig, generate_dataset


TINY_CONFIG = dict(n_objects=2, materials_per_object=1, cams_per_setup=1,
                   strengths_per_attribute=3, attributes=("roughness",),
                   resolution=16, spp=6, seed=11, reject_nulls=False)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small rendered dataset shared by IO/train/CLI/service tests."""
    root = tmp_path_factory.mktemp("tiny_dataset")
    config = DatasetConfig(**TINY_CONFIG)
    manifest = generate_dataset(config, root)
    return root, manifest


@pytest.fixture(scope="session")
def tiny_model(tiny_dataset, tmp_path_factory):
    """A minimally trained checkpoint; exercises contracts, not quality."""
    from matedit.traineval import TrainConfig, train

    root, _ = tiny_dataset
    out = tmp_path_factory.mktemp("tiny_model") / "model.ckpt"
    config = TrainConfig(dataset_path=str(root), steps=40, batch_size=2,
                         lr=3e-4, base_width=16, seed=1, checkpoint_every=0,
                         log_every=1000, holdout_fraction=0.0,
                         out_path=str(out))
    train(config, log=None)
    return out


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
