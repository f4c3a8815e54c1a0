"""Pytest configuration and fixtures"""

import os
import sys

import numpy as np
import pytest

# Add repository root to path
sys.path.insert(0, os.path.dirname(__file__))

from slpca.models.schemas import BinaryDataMatrix, SimulationSpec  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale reproduction runs (set SLPCA_RUN_SLOW=1)")


def pytest_collection_modifyitems(config, items):
    if os.getenv("SLPCA_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set SLPCA_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    """Seeded generator"""
    return np.random.default_rng(20240101)


@pytest.fixture
def noise_data(rng):
    """20×10 matrix of Bernoulli(1/2) cells"""
    return BinaryDataMatrix(values=rng.integers(0, 2, size=(20, 10)).astype(float))


@pytest.fixture
def planted_data(rng):
    """60×12 matrix with a strong rank-one signal on the first six columns"""
    n, d = 60, 12
    scores = rng.normal(0.0, 3.0, size=n)
    loadings = np.zeros(d)
    loadings[:6] = 1.0
    theta = np.outer(scores, loadings)
    values = (rng.random((n, d)) < 1.0 / (1.0 + np.exp(-theta))).astype(float)
    return BinaryDataMatrix(values=values)


@pytest.fixture
def missing_data(noise_data, rng):
    """noise_data with roughly 10% of its cells masked"""
    mask = rng.random(noise_data.values.shape) < 0.1
    return BinaryDataMatrix(values=noise_data.values, mask=mask)


@pytest.fixture
def mixed_data(rng):
    """20×6 matrix: four binary columns and two continuous ones"""
    values = rng.integers(0, 2, size=(20, 6)).astype(float)
    values[:, 4:] = rng.normal(0.0, 1.5, size=(20, 2))
    kinds = ["binary"] * 4 + ["continuous"] * 2
    return BinaryDataMatrix(values=values, col_kind=kinds)


@pytest.fixture
def small_spec():
    """Tiny planted experiment used by fast simulation tests"""
    return SimulationSpec(
        n=30,
        d=12,
        k_true=2,
        snr=[3.0, 2.0],
        support=[list(range(0, 3)), list(range(3, 6))],
        replicates=2,
        k_fit=2,
        seed=7,
        baseline=0.5,
        lambda_grid=[0.0, 0.002, 0.005],
    )
