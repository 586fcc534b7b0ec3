import numpy as np
import pytest

from stallwatch import dataset, detector


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory):
    """Small synthetic lot (32px crops) shared by training-path tests."""
    root = tmp_path_factory.mktemp("synth")
    dataset.synth_generate(root, n_per_label=40, seed=7, size=32)
    return root


@pytest.fixture(scope="session")
def synth_index(synth_root):
    return dataset.scan_tree(synth_root)


@pytest.fixture(scope="session")
def small_model(synth_index):
    """Desk-shaped 32x32 model fine-tuned briefly on the synthetic fixture."""
    model = detector.build(detector.desk_spec((32, 32), seed=1))
    detector.fine_tune(
        model, synth_index, detector.Hyperparams(iterations=200, batch_size=32, seed=1)
    )
    return model


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
