from __future__ import annotations

import numpy as np
import pytest

from symsde.cli import make_drift, make_sigma
from symsde.flow import FlowMap
from symsde.solver import ModelSpec


@pytest.fixture
def sigma_sin2():
    return make_sigma("sin_plus_2")


@pytest.fixture
def fm_sin2(sigma_sin2):
    return FlowMap(sigma_sin2)


@pytest.fixture
def model_sin2_sincos(sigma_sin2):
    return ModelSpec(sigma_sin2, make_drift("sin_cos"), 0.1)


@pytest.fixture
def model_pure_noise():
    return ModelSpec(make_sigma("const:1.0"), make_drift("zero"), 0.3)


def rel_err(got, exact):
    got = np.asarray(got, dtype=float)
    exact = np.asarray(exact, dtype=float)
    return np.max(np.abs(got - exact) / np.maximum(1.0, np.abs(exact)))
