"""Fixtures compartidas."""

import numpy as np
import pytest

from src.data.datasets import gen_moons, split_dataset
from src.flows.models import build_model

from .helpers import small_spec


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def moons():
    return split_dataset(gen_moons(512, 0.05, seed=0), 0.25, seed=0)


@pytest.fixture
def hcf_model():
    return build_model(small_spec("hcf"))


@pytest.fixture
def outdir(tmp_path):
    return tmp_path / "runs"
