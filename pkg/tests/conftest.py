import os

import hypothesis
import numpy as np
import pytest

from easycore.core.data import ClusterConfig, Dataset, generate_clusters
from easycore.core.model import ModelConfig, build_model

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.register_profile("ci", max_examples=100, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "fast"))


@pytest.fixture
def small_config():
    return ModelConfig(input_dim=2, hidden_dim=8, num_blocks=2, num_classes=2)


@pytest.fixture
def small_model(small_config):
    return build_model(small_config, init_seed=3)


@pytest.fixture
def toy_clusters():
    """Two well-separated clusters, 40 train / 20 test points."""
    config = ClusterConfig(
        centers=((-3.0, 0.0), (3.0, 0.0)),
        train_counts=(20, 20),
        test_counts=(10, 10),
        stds=(0.5, 0.5),
    )
    return generate_clusters(config, seed=11)


@pytest.fixture
def toy_train(toy_clusters):
    return toy_clusters[0]


@pytest.fixture
def line_dataset():
    features = np.array([[0.0, 0.0], [1.0, 0.5], [2.0, 1.0], [3.0, 0.0], [4.0, 2.0], [5.0, 1.0]])
    return Dataset(features, np.array([0, 0, 0, 1, 1, 1]), class_count=2)
