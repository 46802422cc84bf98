"""Tests for funnel_mpc.control.fmpc."""

import os

import numpy as np
import pytest

from funnel_mpc.analysis.verification import (
    check_recursive_feasibility,
    compare_summaries,
    monitor_derivative_bound,
)
from funnel_mpc.config import DEFAULT_CONTROL_DT
from funnel_mpc.control.baseline import FunnelControllerConfig, run_closed_loop
from funnel_mpc.control.fmpc import FmpcConfig, run
from funnel_mpc.control.ocp import solve
from funnel_mpc.errors import InfeasibleStart
from funnel_mpc.funnel.boundary import solve_funnel
from funnel_mpc.simulation.integrator import integrate

SHORT = {"t_end": 0.08, "horizon": 0.2}


@pytest.fixture(scope="module")
def short_run(plant, benchmark_funnel, cosine_ref):
    cfg = FmpcConfig(x0=np.zeros(4), **SHORT)
    return cfg, run(cfg, plant, benchmark_funnel, cosine_ref)


class TestFmpcConfig:
    def test_defaults_are_benchmark(self):
        cfg = FmpcConfig(x0=np.zeros(4))
        assert cfg.n_steps == 250
        assert cfg.eps == (0.94, 0.99)
        assert cfg.input_bound == 15.0
        assert cfg.cost_cfg.lambda_u == 0.01
        assert cfg.delta == cfg.control_dt == DEFAULT_CONTROL_DT

    def test_rejects_partial_step(self):
        with pytest.raises(ValueError, match="multiple"):
            FmpcConfig(x0=np.zeros(4), t_end=0.05)

    def test_rejects_delta_beyond_horizon(self):
        with pytest.raises(ValueError):
            FmpcConfig(x0=np.zeros(4), delta=0.8)


class TestRun:
    def test_steps(self, short_run):
        _, result = short_run
        assert result.controller == "fmpc"
        assert [step.t_hat for step in result.steps] == pytest.approx([0.0, 0.04])
        assert result.summary.steps == 2
        assert result.applied.n_steps == 2

    def test_samples(self, short_run):
        _, result = short_run
        trajectory = result.trajectory
        assert trajectory.n_samples == 2 * 4 + 1
        assert trajectory.t_end == pytest.approx(0.08)
        assert np.all(np.diff(trajectory.t) > 0)

    def test_recursively_feasible(self, short_run, benchmark_funnel, cosine_ref):
        cfg, result = short_run
        report = check_recursive_feasibility(
            result, benchmark_funnel, cosine_ref, cfg.eps, cfg.input_bound
        )
        assert report.ok
        assert result.summary.max_input_norm <= 15.0

    def test_applied_input_reproduces_trajectory(self, short_run, plant):
        cfg, result = short_run
        replay = integrate(plant, cfg.x0, result.applied, (0.0, result.applied.t_end))
        np.testing.assert_allclose(replay.x, result.trajectory.x, atol=1e-7)

    def test_single_step_applies_head_of_first_ocp(self, plant, benchmark_funnel, cosine_ref):
        cfg = FmpcConfig(x0=np.zeros(4), t_end=0.04, horizon=0.2)
        result = run(cfg, plant, benchmark_funnel, cosine_ref)
        spec = cfg.ocp_spec(plant, benchmark_funnel, cosine_ref, np.zeros(4), 0.0)
        expected = solve(spec).u_star.head(spec.shift_steps)
        np.testing.assert_allclose(result.applied.values, expected.values, rtol=1e-12)
        assert result.applied.t_end == pytest.approx(0.04)

    def test_derivatives_within_bound(self, short_run, benchmark_funnel, cosine_ref):
        _, result = short_run
        report = monitor_derivative_bound(result, benchmark_funnel, cosine_ref)
        assert np.isfinite(report.bound)
        assert report.ok

    def test_zero_length_run(self, plant, benchmark_funnel, cosine_ref):
        cfg = FmpcConfig(x0=np.zeros(4), t_end=0.0)
        result = run(cfg, plant, benchmark_funnel, cosine_ref)
        assert result.trajectory.n_samples == 1
        assert result.steps == []
        assert result.applied is None
        np.testing.assert_array_equal(result.trajectory.u, [[0.0]])

    def test_infeasible_start(self, plant, benchmark_funnel, cosine_ref):
        cfg = FmpcConfig(x0=np.array([5.0, 0.0, 0.0, 0.0]), **SHORT)
        with pytest.raises(InfeasibleStart):
            run(cfg, plant, benchmark_funnel, cosine_ref)


@pytest.mark.slow
@pytest.mark.skipif(
    os.getenv("FUNNEL_MPC_RUN_SLOW") != "1", reason="set FUNNEL_MPC_RUN_SLOW=1 to run"
)
class TestBenchmarkReproduction:
    """The full 250-step mass-on-car run over [0, 10]."""

    @pytest.fixture(scope="class")
    def full_run(self, plant, benchmark_params, cosine_ref):
        funnel = solve_funnel(benchmark_params, 10.6)
        cfg = FmpcConfig(x0=np.zeros(4))
        return cfg, funnel, run(cfg, plant, funnel, cosine_ref)

    def test_all_steps_complete(self, full_run):
        _, _, result = full_run
        assert len(result.steps) == 250
        assert result.trajectory.t_end == pytest.approx(10.0)

    def test_errors_strictly_inside(self, full_run):
        _, _, result = full_run
        assert all(ratio < 1 for ratio in result.summary.max_ratios)

    def test_input_bound(self, full_run):
        _, _, result = full_run
        assert result.summary.max_input_norm <= 15.0

    def test_recursive_feasibility(self, full_run, cosine_ref):
        cfg, funnel, result = full_run
        report = check_recursive_feasibility(result, funnel, cosine_ref, cfg.eps, 15.0)
        assert report.ok

    def test_derivatives_within_bound(self, full_run, cosine_ref):
        _, funnel, result = full_run
        assert monitor_derivative_bound(result, funnel, cosine_ref).ok

    def test_energy_comparison_with_funnel_controller(self, full_run, plant, cosine_ref):
        _, funnel, result = full_run
        baseline = run_closed_loop(
            FunnelControllerConfig(plant, funnel, cosine_ref), np.zeros(4), (0.0, 10.0)
        )
        comparison = compare_summaries(result.summary, baseline.summary)
        assert np.isfinite(comparison["input_energy_ratio"])
        assert comparison["input_energy_ratio"] > 0
        assert isinstance(comparison["fmpc_uses_less_energy"], bool)
