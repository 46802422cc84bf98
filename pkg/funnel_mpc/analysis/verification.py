"""Independent re-verification of closed-loop runs.

Nothing here trusts solver bookkeeping: the error chain is recomputed from the stored
output chain, the funnel and the reference.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
import math

from loguru import logger
import numpy as np
from numpy.typing import ArrayLike

from funnel_mpc.control.closed_loop import ClosedLoopResult, ClosedLoopSummary
from funnel_mpc.funnel.boundary import FunnelTrajectory
from funnel_mpc.funnel.error_chain import chain, derivative_bound
from funnel_mpc.funnel.reference import ReferenceSignal

DEFAULT_TOL = 1e-9
# Grid times are matched to samples within this distance
_TIME_MATCH = 1e-9


@dataclass(frozen=True)
class Violation:
    """One failed check.

    kind is 'funnel', 'eps', 'input' or 'grid' (a grid time with no matching sample);
    index is 1-based, 0 for 'input' and 'grid'.
    """

    t: float
    index: int
    kind: str
    margin: float


@dataclass
class FeasibilityReport:
    """Worst margins and the list of violations found."""

    funnel_margins: np.ndarray  # min_t psi_i - |e_i|, shape (r,)
    eps_margins: np.ndarray | None  # min over grid times of eps_i psi_i - |e_i|
    max_input_norm: float
    checked_samples: int
    checked_grid_times: int
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def first_violation(self) -> Violation | None:
        return min(self.violations, key=lambda v: v.t) if self.violations else None

    def as_dict(self) -> dict:
        first = self.first_violation
        return {
            "ok": self.ok,
            "funnel_margins": self.funnel_margins.tolist(),
            "eps_margins": None if self.eps_margins is None else self.eps_margins.tolist(),
            "max_input_norm": self.max_input_norm,
            "checked_samples": self.checked_samples,
            "checked_grid_times": self.checked_grid_times,
            "violations": len(self.violations),
            "first_violation": None if first is None else first.__dict__,
        }


def _grid_indices(t: np.ndarray, grid_times: ArrayLike) -> tuple[np.ndarray, list[Violation]]:
    """Sample indices of the grid times, plus a 'grid' violation for each unmatched time."""
    grid = np.atleast_1d(np.asarray(grid_times, dtype=float))
    nearest = np.clip(np.searchsorted(t, grid), 0, t.size - 1)
    candidates = np.stack([np.maximum(nearest - 1, 0), nearest])
    best = candidates[np.argmin(np.abs(t[candidates] - grid), axis=0), np.arange(grid.size)]
    distance = np.abs(t[best] - grid)
    matched = distance <= _TIME_MATCH
    unmatched = [
        Violation(float(g), 0, "grid", -float(d))
        for g, d in zip(grid[~matched], distance[~matched])
    ]
    if unmatched:
        logger.warning(
            f"{len(unmatched)} of {grid.size} grid time(s) have no sample within "
            f"{_TIME_MATCH:g}; first unmatched at t={unmatched[0].t:.6g}"
        )
    return np.unique(best[matched]), unmatched


def _input_violations(
    t: np.ndarray, u: ArrayLike, input_bound: float | None
) -> tuple[float, list[Violation]]:
    u_norms = np.linalg.norm(np.asarray(u, dtype=float), axis=-1)
    violations = []
    if input_bound is not None:
        for j in np.nonzero(u_norms > input_bound)[0]:
            violations.append(Violation(float(t[j]), 0, "input", float(input_bound - u_norms[j])))
    return float(u_norms.max()), violations


def check_samples(
    t: ArrayLike,
    zeta: ArrayLike,
    funnel: FunnelTrajectory,
    ref: ReferenceSignal,
    eps: Sequence[float] | None = None,
    grid_times: ArrayLike | None = None,
    u: ArrayLike | None = None,
    input_bound: float | None = None,
    tol: float = DEFAULT_TOL,
) -> FeasibilityReport:
    """Check sampled output chains against the funnel.

    Every sample must satisfy |e_i| < psi_i strictly. Samples at `grid_times` must
    also satisfy |e_i| <= eps_i psi_i up to `tol`, and inputs |u| <= input_bound.
    """
    t = np.asarray(t, dtype=float)
    funnel = funnel.extended_to(float(t.max()))
    state = chain(t, zeta, funnel, ref)
    norms = state.error_norms
    funnel_margins = state.psi - norms
    violations = []

    # NaN margins (past a saturated index) count as violations
    bad = ~(funnel_margins > 0)
    for j, i in zip(*np.nonzero(bad)):
        margin = float(funnel_margins[j, i])
        violations.append(Violation(float(t[j]), int(i) + 1, "funnel", margin))

    eps_margins, n_grid = None, 0
    if eps is not None and grid_times is not None:
        idx, unmatched = _grid_indices(t, grid_times)
        n_grid = idx.size
        violations.extend(unmatched)
        margins = np.asarray(eps, dtype=float) * state.psi[idx] - norms[idx]
        eps_margins = np.nanmin(np.where(np.isnan(margins), -math.inf, margins), axis=0)
        for j, i in zip(*np.nonzero(~(margins >= -tol))):
            margin = float(margins[j, i])
            violations.append(Violation(float(t[idx[j]]), int(i) + 1, "eps", margin))

    max_input = math.nan
    if u is not None:
        max_input, input_violations = _input_violations(t, u, input_bound)
        violations.extend(input_violations)

    worst = np.where(np.isnan(funnel_margins), -math.inf, funnel_margins).min(axis=0)
    report = FeasibilityReport(worst, eps_margins, max_input, t.size, n_grid, violations)
    if not report.ok:
        first = report.first_violation
        logger.warning(
            f"{len(violations)} violation(s); first at t={first.t:.6g}: {first.kind} bound "
            f"of index {first.index} (margin {first.margin:.3g})"
        )
    return report


def check_recursive_feasibility(
    result: ClosedLoopResult,
    funnel: FunnelTrajectory,
    ref: ReferenceSignal,
    eps: Sequence[float],
    input_bound: float | None = None,
    tol: float = DEFAULT_TOL,
) -> FeasibilityReport:
    """Re-check a closed-loop run.

    For an FMPC run the state at every t_hat (and at the end) must lie in the
    eps-shrunken funnel set; runs without receding-horizon steps are only held to the
    strict funnel bound. All samples must lie strictly inside the funnel.
    """
    trajectory = result.trajectory
    grid_times = None
    if result.steps:
        grid_times = [s.t_hat for s in result.steps] + [trajectory.t_end]
    if result.applied is not None:
        t_u, u = result.applied.breakpoints[:-1], result.applied.values
    else:
        t_u, u = trajectory.t, trajectory.u
    report = check_samples(
        trajectory.t,
        trajectory.zeta,
        funnel,
        ref,
        eps=eps if grid_times is not None else None,
        grid_times=grid_times,
        tol=tol,
    )
    report.max_input_norm, input_violations = _input_violations(t_u, u, input_bound)
    report.violations.extend(input_violations)
    return report


@dataclass(frozen=True)
class DerivativeBoundReport:
    """Derivative bound Y and the largest observed |y^{(i)}|, i = 0..r-1."""

    bound: float
    eps: tuple[float, ...]
    max_norms: tuple[float, ...]

    @property
    def ok(self) -> bool:
        return all(v <= self.bound for v in self.max_norms)

    def as_dict(self) -> dict:
        return {
            "bound": self.bound,
            "eps": list(self.eps),
            "max_norms": list(self.max_norms),
            "ok": self.ok,
        }


def monitor_derivative_bound(
    result: ClosedLoopResult, funnel: FunnelTrajectory, ref: ReferenceSignal
) -> DerivativeBoundReport:
    """Compare |y^{(i)}(t)| along a run with the bound Y computed at its start time.

    The fractions are taken from the run itself: eps_i = sqrt(max_t ratio_i).
    """
    trajectory = result.trajectory
    r, m = funnel.r, trajectory.m
    state = chain(trajectory.t, trajectory.zeta, funnel, ref)
    max_ratios = np.nanmax(state.ratios, axis=0)
    if np.any(max_ratios[: r - 1] >= 1):
        raise ValueError(f"Run left the funnel (max ratios {max_ratios.tolist()})")
    eps = tuple(float(min(max(np.sqrt(v), 1e-12), 1 - 1e-12)) for v in max_ratios[: r - 1])
    bound = derivative_bound(funnel, ref, float(trajectory.t[0]), eps)
    blocks = trajectory.zeta.reshape(trajectory.n_samples, r, m)
    max_norms = tuple(float(v) for v in np.linalg.norm(blocks, axis=-1).max(axis=0))
    return DerivativeBoundReport(bound, eps, max_norms)


def compare_summaries(fmpc: ClosedLoopSummary, baseline: ClosedLoopSummary) -> dict:
    """Side-by-side numbers for the FMPC and funnel-controller runs."""
    ratio = (
        fmpc.input_energy / baseline.input_energy if baseline.input_energy > 0 else math.inf
    )
    return {
        "fmpc": fmpc.as_dict(),
        "funnel_controller": baseline.as_dict(),
        "input_energy_ratio": ratio,
        "fmpc_uses_less_energy": fmpc.input_energy < baseline.input_energy,
    }
