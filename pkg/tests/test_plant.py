"""Tests for funnel_mpc.systems."""

import math

import numpy as np
import pytest

from funnel_mpc.errors import DimensionMismatch, SingularMassMatrix
from funnel_mpc.systems.mass_on_car import MassOnCarParams, mass_on_car, mechanical_energy
from funnel_mpc.systems.plant import LinearPlant
from funnel_mpc.systems.registry import PLANTS, plant_by_name, plant_entry

DOUBLE_INTEGRATOR = (np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([[0.0], [1.0]]))


class TestLinearPlant:
    def test_double_integrator(self):
        a, b = DOUBLE_INTEGRATOR
        plant = LinearPlant(a, b, [[1.0, 0.0]], r=2)
        x = np.array([2.0, 3.0])
        np.testing.assert_allclose(plant.output_chain(x), [2.0, 3.0])
        np.testing.assert_allclose(plant.rhs(x, [5.0]), [3.0, 5.0])
        np.testing.assert_allclose(plant.gamma(x), [[1.0]])
        np.testing.assert_allclose(plant.p_drift(x), [0.0])

    def test_rhs_matches_drift_plus_input_map(self):
        a, b = DOUBLE_INTEGRATOR
        plant = LinearPlant(a, b, [[1.0, 0.0]], r=2)
        x = np.arange(6.0).reshape(3, 2)
        u = np.array([[1.0], [2.0], [3.0]])
        expected = plant.drift(x) + (plant.input_map(x) @ u[..., None])[..., 0]
        np.testing.assert_allclose(plant.rhs(x, u), expected)

    def test_relative_degree_too_high(self):
        a, b = DOUBLE_INTEGRATOR
        with pytest.raises(ValueError, match="relative degree"):
            LinearPlant(a, b, [[0.0, 1.0]], r=2)

    def test_relative_degree_too_low(self):
        a, b = DOUBLE_INTEGRATOR
        with pytest.raises(ValueError, match="singular"):
            LinearPlant(a, b, [[1.0, 0.0]], r=1)

    def test_dimension_checks(self):
        a, b = DOUBLE_INTEGRATOR
        with pytest.raises(DimensionMismatch):
            LinearPlant(a, b, [[1.0, 0.0, 0.0]], r=2)
        plant = LinearPlant(a, b, [[1.0, 0.0]], r=2)
        with pytest.raises(DimensionMismatch):
            plant.rhs(np.zeros(3), [0.0])
        with pytest.raises(DimensionMismatch):
            plant.rhs(np.zeros(2), [0.0, 0.0])


class TestMassOnCar:
    def test_structure(self, plant):
        assert (plant.n, plant.m, plant.r) == (4, 1, 2)
        assert plant.has_normal_form

    def test_benchmark_gain(self, plant):
        assert plant.gamma(np.zeros(4))[0, 0] == pytest.approx(1.0 / 9.0)

    def test_gain_against_mass_matrix_inverse(self, plant):
        params = MassOnCarParams()
        oracle = np.array([1.0, math.cos(params.theta)]) @ np.linalg.inv(params.mass_matrix)[:, 0]
        assert plant.gamma(np.zeros(4))[0, 0] == pytest.approx(oracle, abs=1e-12)
        assert oracle == pytest.approx(1.0 / 9.0, abs=1e-12)

    def test_vertical_ramp_gain(self):
        params = MassOnCarParams(theta=math.pi / 2)
        gamma = mass_on_car(params).gamma(np.zeros(4))[0, 0]
        assert gamma == pytest.approx(1.0 / (params.m1 + params.m2), rel=1e-12)

    @pytest.mark.parametrize("u", [0.0, 3.0, -7.5])
    def test_chain_derivatives_follow_normal_form(self, plant, u):
        x = np.array([0.3, -0.2, 0.5, 0.1])
        dx = plant.rhs(x, [u])
        h = 1e-6
        rate = (plant.output_chain(x + h * dx) - plant.output_chain(x - h * dx)) / (2 * h)
        zeta = plant.output_chain(x)
        assert rate[0] == pytest.approx(zeta[1], rel=1e-7)
        expected = plant.p_drift(x)[0] + plant.gamma(x)[0, 0] * u
        assert rate[1] == pytest.approx(expected, rel=1e-6, abs=1e-9)

    def test_output_chain(self, plant):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        c = math.cos(math.pi / 4)
        np.testing.assert_allclose(plant.output_chain(x), [1.0 + 2.0 * c, 3.0 + 4.0 * c])

    def test_equations_of_motion(self, plant):
        params = MassOnCarParams()
        x = np.array([0.3, -0.2, 0.5, 0.1])
        u = np.array([2.0])
        dx = plant.rhs(x, u)
        force = np.array([u[0], -params.k_spring * x[1] - params.d_damp * x[3]])
        np.testing.assert_allclose(dx[:2], x[2:])
        np.testing.assert_allclose(params.mass_matrix @ dx[2:], force, atol=1e-12)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            MassOnCarParams(m1=-1.0)

    def test_singular_mass_matrix(self):
        with pytest.raises(SingularMassMatrix):
            mass_on_car(MassOnCarParams(m1=1e-14, theta=0.0))

    def test_energy_dissipates_without_input(self, plant):
        params = MassOnCarParams()
        x = np.array([0.0, 0.5, 0.2, -0.3])
        assert mechanical_energy(params, np.zeros(4)) == 0.0
        rate = np.gradient(
            [mechanical_energy(params, x + h * plant.rhs(x, [0.0])) for h in (-1e-6, 0.0, 1e-6)],
            1e-6,
        )[1]
        assert rate == pytest.approx(-params.d_damp * x[3] ** 2, rel=1e-5)


class TestRegistry:
    def test_build_by_name(self):
        plant = plant_by_name("mass-on-car", m1=2.0)
        assert plant.name == "mass-on-car"
        assert "mass-on-car" in PLANTS
        assert plant_entry("mass-on-car").params_type is MassOnCarParams

    def test_unknown_plant(self):
        with pytest.raises(KeyError, match="Valid plants"):
            plant_by_name("pendulum")
