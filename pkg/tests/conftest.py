"""Shared fixtures: cached synthetic problems so suites stay fast."""

import numpy as np
import pytest

from mcrr import synthetic, training
from mcrr.data import split_periods
from mcrr.model import ModelConfig


@pytest.fixture(scope="session")
def basin_cache():
    """Memoised synthetic basins keyed by (model, scenario, seed)."""
    cache = {}

    def get(model: str, scenario: str, seed: int = 2024):
        key = (model, scenario, seed)
        if key not in cache:
            config = ModelConfig(model, scenario)
            cache[key] = synthetic.synthetic_basin(config, seed=seed)
        return cache[key]

    return get


@pytest.fixture(scope="session")
def problem_cache(basin_cache):
    """Memoised calibration problems on the bundled synthetic periods."""
    cache = {}

    def get(model: str, scenario: str, seed: int = 2024):
        key = (model, scenario, seed)
        if key not in cache:
            config = ModelConfig(model, scenario)
            forcing, geom, truth = basin_cache(model, scenario, seed)
            windows = split_periods(forcing, synthetic.SYNTHETIC_PERIODS)
            cache[key] = (
                training.build_problem(forcing, windows, config, geom),
                truth,
            )
        return cache[key]

    return get
