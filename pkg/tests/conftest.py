"""Shared fixtures and model builders for the test suite."""

import numpy as np
import pytest

from cevnorm.models import CiModel, NoiseLaw
from cevnorm.norming import ErvParams


def make_model(rho1=0.5, kappa1=1.0, rho2=0.5, kappa2=1.0, a1=1.0, a2=1.0,
               family="gaussian", perturbation=0.0, negative_control=False):
    noise = NoiseLaw(family=family, location=0.0, scale=1.0)
    return CiModel(
        erv1=ErvParams(a=a1, rho=rho1, kappa=kappa1),
        erv2=ErvParams(a=a2, rho=rho2, kappa=kappa2),
        noise1=noise,
        noise2=noise,
        perturbation=perturbation,
        negative_control=negative_control,
    )


@pytest.fixture(scope="session")
def canonical_model():
    """rho=(0.5,0.5), kappa=(1,1), a=(1,1), standard gaussian noise."""
    return make_model()


@pytest.fixture(scope="session")
def constant_model():
    """rho=kappa=(0,0): norming functions constant, coordinates pure noise."""
    return make_model(rho1=0.0, kappa1=0.0, rho2=0.0, kappa2=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20260823)
