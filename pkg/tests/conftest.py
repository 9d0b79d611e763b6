import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from meterguard import forest, synth

settings.register_profile(
    "suite",
    derandomize=True,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def default_dataset():
    """The standard full-size corpus (7201 rows per class, seed 1)."""
    return synth.synthesize(synth.SynthConfig())


@pytest.fixture(scope="session")
def small_dataset():
    return synth.synthesize(synth.SynthConfig(samples_per_class=240, seed=5))


@pytest.fixture(scope="session")
def small_Xy(small_dataset):
    return small_dataset.feature_matrix(), small_dataset.labels()


@pytest.fixture(scope="session")
def small_model(small_Xy):
    X, y = small_Xy
    params = forest.ForestParams(n_trees=15)
    return forest.fit_forest(X, y, params, rng_seed=2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
