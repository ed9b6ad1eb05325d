"""Shared fixtures: fast quadrature settings and small reference models."""

import numpy as np
import pytest

from tumblerec.fields import (ModelConfig, builtin_kernel, builtin_sigma,
                              constant_model, sigma_from_kernel)
from tumblerec.solver import QuadratureSpec


@pytest.fixture(scope="session")
def fast_spec():
    """Reduced rule orders that keep unit tests quick but meaningful."""
    return QuadratureSpec(space_nodes=8, window_nodes=8, disk_radial=6,
                          disk_azimuth=6, time_nodes=10, cap_polar=6,
                          cap_azimuth=6, sigma_nodes=4)


@pytest.fixture(scope="session")
def model_sigma_const():
    """Constant sigma = 0.3, no tumbling."""
    return ModelConfig(kernel=builtin_kernel("zero"),
                       sigma=builtin_sigma("constant", k0=0.3), horizon=1.0)


@pytest.fixture(scope="session")
def model_k_const():
    """Constant kernel k0 = 0.01 with derived sigma."""
    return constant_model(0.01, 1.0)


@pytest.fixture(scope="session")
def model_aniso():
    """Anisotropic kernel k0 (1 + 0.5 <v, v'>) with derived sigma."""
    kern = builtin_kernel("anisotropic", k0=0.01, beta=0.5)
    return ModelConfig(kernel=kern, sigma=sigma_from_kernel(kern), horizon=1.0)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260823)
