import numpy as np
import pytest

from models import SparseTensor, TensorKind
from services.data_io import all_indices
from services.sampling import make_rng
from services.tensor_ring import eval_entries, random_model


@pytest.fixture(autouse=True)
def isolated_registry(tmp_path, monkeypatch):
    """Keep the run registry out of the working directory."""
    monkeypatch.setenv('DATABASE_URL', f"sqlite:///{tmp_path / 'runs.db'}")
    monkeypatch.delenv('MAX_DENSE_ENTRIES', raising=False)
    return tmp_path / 'runs.db'


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def small_model(rng):
    model = random_model((3, 4, 2), (2, 3, 2), rng)
    return model.replace(weights=[rng.normal(size=r) for r in model.ranks])


def _observe(model, rng, fraction):
    indices = all_indices(model.shape)
    keep = rng.random(indices.shape[0]) < fraction
    keep[0] = True
    return indices[keep]


@pytest.fixture
def tiny_continuous(rng):
    """(data, truth) with noise std 0.1 on 80% of a 4x5x3 tensor."""
    truth = random_model((4, 5, 3), 2, rng)
    indices = _observe(truth, rng, 0.8)
    values = eval_entries(truth, indices) + rng.normal(0.0, 0.1, size=indices.shape[0])
    return SparseTensor(truth.shape, indices, values, TensorKind.CONTINUOUS), truth


@pytest.fixture
def tiny_binary(rng):
    """(data, truth) with Bernoulli(sigmoid(x)) labels on 80% of a 4x5x3 tensor."""
    truth = random_model((4, 5, 3), 2, rng, scale=1.5)
    indices = _observe(truth, rng, 0.8)
    x = eval_entries(truth, indices)
    values = (rng.random(x.shape[0]) < 1.0 / (1.0 + np.exp(-x))).astype(np.float64)
    return SparseTensor(truth.shape, indices, values, TensorKind.BINARY), truth
