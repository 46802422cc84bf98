"""Tests for funnel_mpc.analysis.verification."""

import numpy as np
import pytest

from funnel_mpc.analysis.verification import (
    check_recursive_feasibility,
    check_samples,
    compare_summaries,
    monitor_derivative_bound,
)
from funnel_mpc.control.baseline import FunnelControllerConfig, run_closed_loop
from funnel_mpc.control.closed_loop import ClosedLoopSummary
from funnel_mpc.funnel.error_chain import derivative_bound

T = np.array([0.0, 0.5, 1.0])


@pytest.fixture
def on_reference(cosine_ref):
    """Output chains sitting exactly on the reference."""
    return cosine_ref.chain(T, 2).reshape(3, 2)


@pytest.fixture(scope="module")
def baseline_run(plant, benchmark_funnel, cosine_ref):
    cfg = FunnelControllerConfig(plant, benchmark_funnel, cosine_ref)
    return run_closed_loop(cfg, np.zeros(4), (0.0, 0.4))


def summary(controller, energy):
    return ClosedLoopSummary(controller, 0.0, 1.0, (0.5, 0.2), 3.0, energy)


class TestCheckSamples:
    def test_clean(self, on_reference, benchmark_funnel, cosine_ref):
        report = check_samples(T, on_reference, benchmark_funnel, cosine_ref)
        assert report.ok
        assert report.first_violation is None
        np.testing.assert_allclose(report.funnel_margins, benchmark_funnel.psi(1.0))
        assert report.checked_samples == 3

    def test_funnel_violation(self, on_reference, benchmark_funnel, cosine_ref):
        zeta = on_reference.copy()
        zeta[1, 0] += 10.0
        report = check_samples(T, zeta, benchmark_funnel, cosine_ref)
        assert not report.ok
        first = report.first_violation
        assert (first.t, first.index, first.kind) == (0.5, 1, "funnel")
        assert first.margin < 0

    def test_eps_violation_only_on_grid(self, on_reference, benchmark_funnel, cosine_ref):
        zeta = on_reference.copy()
        # |e_1| = 0.97 psi_1 at t = 0.5: inside the funnel, outside the eps-funnel
        psi1 = benchmark_funnel.psi(0.5)[0]
        zeta[1, 0] += 0.97 * psi1
        # keep e_2 = ydot - ydot_ref + k_1 e_1 small
        k1 = 1.0 / (1.0 - 0.97**2)
        zeta[1, 1] -= k1 * 0.97 * psi1
        eps = (0.94, 0.99)
        assert check_samples(T, zeta, benchmark_funnel, cosine_ref).ok
        off_grid = check_samples(T, zeta, benchmark_funnel, cosine_ref, eps, grid_times=[0.0])
        assert off_grid.ok
        on_grid = check_samples(T, zeta, benchmark_funnel, cosine_ref, eps, grid_times=[0.5])
        assert [v.kind for v in on_grid.violations] == ["eps"]
        assert on_grid.checked_grid_times == 1

    def test_unmatched_grid_time_is_a_violation(self, on_reference, benchmark_funnel, cosine_ref):
        report = check_samples(
            T, on_reference, benchmark_funnel, cosine_ref, (0.94, 0.99), grid_times=[0.0, 0.3]
        )
        assert not report.ok
        assert report.checked_grid_times == 1
        (violation,) = report.violations
        assert (violation.t, violation.index, violation.kind) == (0.3, 0, "grid")
        assert violation.margin == pytest.approx(-0.2)

    def test_input_violation(self, on_reference, benchmark_funnel, cosine_ref):
        u = np.array([[1.0], [20.0], [1.0]])
        report = check_samples(
            T, on_reference, benchmark_funnel, cosine_ref, u=u, input_bound=15.0
        )
        assert report.max_input_norm == 20.0
        assert [(v.t, v.kind) for v in report.violations] == [(0.5, "input")]

    def test_as_dict(self, on_reference, benchmark_funnel, cosine_ref):
        report = check_samples(T, on_reference, benchmark_funnel, cosine_ref)
        data = report.as_dict()
        assert data["ok"] is True
        assert data["violations"] == 0
        assert data["eps_margins"] is None


class TestRecursiveFeasibility:
    def test_baseline_run_is_inside(self, baseline_run, benchmark_funnel, cosine_ref):
        report = check_recursive_feasibility(
            baseline_run, benchmark_funnel, cosine_ref, (0.94, 0.99)
        )
        assert report.ok
        # no receding-horizon steps, so only the strict funnel bound is checked
        assert report.eps_margins is None
        assert report.max_input_norm == pytest.approx(baseline_run.summary.max_input_norm)

    def test_input_bound_applies(self, baseline_run, benchmark_funnel, cosine_ref):
        report = check_recursive_feasibility(
            baseline_run, benchmark_funnel, cosine_ref, (0.94, 0.99), input_bound=1.0
        )
        assert not report.ok
        assert {v.kind for v in report.violations} == {"input"}


class TestDerivativeBoundMonitor:
    def test_baseline_run_respects_bound(self, baseline_run, benchmark_funnel, cosine_ref):
        report = monitor_derivative_bound(baseline_run, benchmark_funnel, cosine_ref)
        assert report.ok
        assert len(report.max_norms) == 2
        assert report.bound == pytest.approx(
            derivative_bound(benchmark_funnel, cosine_ref, 0.0, report.eps)
        )
        assert report.as_dict()["ok"] is True


class TestCompareSummaries:
    def test_energy_ratio(self):
        comparison = compare_summaries(summary("fmpc", 2.0), summary("funnel-controller", 8.0))
        assert comparison["input_energy_ratio"] == pytest.approx(0.25)
        assert comparison["fmpc_uses_less_energy"] is True
        assert comparison["fmpc"]["controller"] == "fmpc"

    def test_zero_baseline_energy(self):
        comparison = compare_summaries(summary("fmpc", 2.0), summary("funnel-controller", 0.0))
        assert comparison["input_energy_ratio"] == float("inf")
