"""Shared fixtures: the mass-on-car benchmark."""

import pytest

from funnel_mpc.funnel.boundary import FunnelParams, solve_funnel
from funnel_mpc.funnel.reference import cosine_reference
from funnel_mpc.systems.mass_on_car import mass_on_car


@pytest.fixture(scope="session")
def benchmark_params():
    return FunnelParams(r=2, alpha=(1.5, 1.35), beta=(0.15, 0.675), p=(1.1,), psi0=(4.1, 2.0))


@pytest.fixture(scope="session")
def benchmark_funnel(benchmark_params):
    return solve_funnel(benchmark_params, 12.0)


@pytest.fixture(scope="session")
def cosine_ref():
    return cosine_reference()


@pytest.fixture(scope="session")
def plant():
    return mass_on_car()
