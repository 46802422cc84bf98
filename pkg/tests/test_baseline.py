"""Tests for funnel_mpc.control.baseline."""

import os

import numpy as np
import pytest

from funnel_mpc.control.baseline import (
    FunnelControllerConfig,
    clip_to_ball,
    feedback,
    run_closed_loop,
    sampled_feedback_controls,
)
from funnel_mpc.errors import SaturatedChain
from funnel_mpc.funnel.boundary import solve_funnel
from funnel_mpc.funnel.reference import cosine_reference


@pytest.fixture
def controller(plant, benchmark_funnel, cosine_ref):
    return FunnelControllerConfig(plant, benchmark_funnel, cosine_ref)


@pytest.fixture(scope="module")
def short_run(plant, benchmark_funnel, cosine_ref):
    cfg = FunnelControllerConfig(plant, benchmark_funnel, cosine_ref)
    return run_closed_loop(cfg, np.zeros(4), (0.0, 0.4))


class TestFeedback:
    def test_value_at_rest(self, controller):
        # e_1 = -1 and e_2 = -k_1 at t = 0; the inverse gain is 9
        k1 = 1.0 / (1.0 - 1.0 / 4.1**2)
        k2 = 1.0 / (1.0 - k1**2 / 4.0)
        u = feedback(controller, 0.0, np.zeros(4))
        assert u.shape == (1,)
        assert u[0] == pytest.approx(9.0 * k1 * k2, rel=1e-8)

    def test_batched(self, controller):
        x = np.zeros((3, 4))
        x[1, 0] = 0.5
        u = feedback(controller, 0.0, x)
        assert u.shape == (3, 1)
        assert u[0, 0] == pytest.approx(feedback(controller, 0.0, np.zeros(4))[0])
        assert u[1, 0] < u[0, 0]

    def test_outside_funnel(self, controller):
        with pytest.raises(SaturatedChain) as info:
            feedback(controller, 0.0, np.array([10.0, 0.0, 0.0, 0.0]))
        assert info.value.index == 1

    def test_saturation(self, plant, benchmark_funnel, cosine_ref):
        cfg = FunnelControllerConfig(plant, benchmark_funnel, cosine_ref, saturation=5.0)
        assert abs(feedback(cfg, 0.0, np.zeros(4))[0]) <= 5.0


class TestConfig:
    def test_rejects_bad_saturation(self, plant, benchmark_funnel, cosine_ref):
        with pytest.raises(ValueError):
            FunnelControllerConfig(plant, benchmark_funnel, cosine_ref, saturation=0.0)

    def test_rejects_short_reference(self, plant, benchmark_funnel):
        with pytest.raises(ValueError):
            FunnelControllerConfig(plant, benchmark_funnel, cosine_reference(max_order=0))


class TestClipToBall:
    def test_norms_are_bounded_exactly(self):
        rng = np.random.default_rng(1)
        u = rng.normal(scale=20.0, size=(100, 3))
        clipped = clip_to_ball(u, 15.0)
        assert np.all(np.linalg.norm(clipped, axis=-1) <= 15.0)

    def test_inside_is_untouched(self):
        u = np.array([[0.3, -0.4]])
        np.testing.assert_array_equal(clip_to_ball(u, 1.0), u)

    def test_zero_radius(self):
        np.testing.assert_array_equal(clip_to_ball(np.array([[2.0]]), 0.0), [[0.0]])


class TestSampledFeedback:
    def test_first_value_is_feedback(self, controller):
        u = sampled_feedback_controls(controller, np.zeros(4), 0.0, 0.04, 5)
        assert u.n_steps == 5
        assert u.values[0, 0] == pytest.approx(feedback(controller, 0.0, np.zeros(4))[0])


class TestRunClosedLoop:
    def test_stays_inside_funnel(self, short_run):
        summary = short_run.summary
        assert summary.controller == "funnel-controller"
        assert all(ratio < 1 for ratio in summary.max_ratios)
        assert short_run.applied is None
        assert short_run.steps == []

    def test_samples(self, short_run):
        trajectory = short_run.trajectory
        assert trajectory.n_samples == 10 * 4 + 1
        assert trajectory.t[0] == 0.0
        assert trajectory.t_end == pytest.approx(0.4)
        assert trajectory.errors is not None
        assert np.all(np.isfinite(trajectory.stage_cost))

    def test_inputs_are_feedback(self, short_run, controller):
        trajectory = short_run.trajectory
        j = 17
        expected = feedback(controller, trajectory.t[j], trajectory.x[j])
        np.testing.assert_allclose(trajectory.u[j], expected)

    def test_zero_length(self, controller):
        result = run_closed_loop(controller, np.zeros(4), (0.0, 0.0))
        assert result.trajectory.n_samples == 1
        assert result.summary.input_energy == 0.0

    def test_start_outside_funnel(self, controller):
        with pytest.raises(SaturatedChain):
            run_closed_loop(controller, np.array([10.0, 0.0, 0.0, 0.0]), (0.0, 0.4))


@pytest.mark.slow
@pytest.mark.skipif(
    os.getenv("FUNNEL_MPC_RUN_SLOW") != "1", reason="set FUNNEL_MPC_RUN_SLOW=1 to run"
)
class TestBenchmarkReproduction:
    """The funnel controller on mass-on-car over [0, 10]."""

    @pytest.fixture(scope="class")
    def full_run(self, plant, benchmark_params, cosine_ref):
        funnel = solve_funnel(benchmark_params, 10.6)
        return run_closed_loop(
            FunnelControllerConfig(plant, funnel, cosine_ref), np.zeros(4), (0.0, 10.0)
        )

    def test_covers_the_interval(self, full_run):
        assert full_run.trajectory.t_end == pytest.approx(10.0)
        assert full_run.trajectory.n_samples == 250 * 4 + 1

    def test_errors_strictly_inside(self, full_run):
        assert all(ratio < 1 for ratio in full_run.summary.max_ratios)

    def test_inputs_are_finite(self, full_run):
        assert np.all(np.isfinite(full_run.trajectory.u))
        assert full_run.summary.input_energy > 0
