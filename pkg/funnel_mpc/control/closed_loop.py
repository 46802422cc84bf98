"""Closed-loop results shared by the receding-horizon loop and the funnel controller."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from funnel_mpc.simulation.integrator import ControlSequence, Trajectory


@dataclass
class StepDiagnostics:
    """Bookkeeping of one receding-horizon step."""

    t_hat: float
    cost: float
    terminal_margins: tuple[float, ...]
    iterations: int
    restarts: int
    gradient_norm: float
    used_warm_start: bool


@dataclass
class ClosedLoopSummary:
    """Headline numbers of a closed-loop run."""

    controller: str
    t_start: float
    t_end: float
    max_ratios: tuple[float, ...]
    max_input_norm: float
    input_energy: float
    steps: int = 0
    total_iterations: int = 0
    total_restarts: int = 0
    iterations_per_step: list[int] = field(default_factory=list)

    @property
    def max_error_ratio(self) -> float:
        """max_t |e_1(t)| / psi_1(t)."""
        return float(np.sqrt(self.max_ratios[0]))

    def as_dict(self) -> dict:
        return {
            "controller": self.controller,
            "t_start": self.t_start,
            "t_end": self.t_end,
            "max_ratios": list(self.max_ratios),
            "max_error_ratio": self.max_error_ratio,
            "max_input_norm": self.max_input_norm,
            "input_energy": self.input_energy,
            "steps": self.steps,
            "total_iterations": self.total_iterations,
            "total_restarts": self.total_restarts,
            "iterations_per_step": self.iterations_per_step,
        }


@dataclass
class ClosedLoopResult:
    """Trajectory (with error chain attached) plus the applied input and per-step data."""

    controller: str
    trajectory: Trajectory
    applied: ControlSequence | None
    steps: list[StepDiagnostics]
    summary: ClosedLoopSummary


def input_energy(trajectory: Trajectory, applied: ControlSequence | None = None) -> float:
    """Integral of |u|^2: exact for a ZOH input, trapezoid over the samples otherwise."""
    if applied is not None:
        return applied.energy()
    if trajectory.n_samples < 2:
        return 0.0
    return float(trapezoid(np.sum(trajectory.u**2, axis=-1), trajectory.t))


def summarize(
    controller: str,
    trajectory: Trajectory,
    applied: ControlSequence | None = None,
    steps: list[StepDiagnostics] | None = None,
) -> ClosedLoopSummary:
    if trajectory.errors is None:
        raise ValueError("Trajectory has no error chain attached; call with_funnel first")
    steps = steps or []
    ratios = trajectory.errors.ratios
    # A ratio past a saturated index is NaN; report it as inf
    max_ratios = np.where(np.isnan(ratios), np.inf, ratios).max(axis=0)
    if applied is not None:
        max_input = float(np.linalg.norm(applied.values, axis=-1).max())
    else:
        max_input = float(np.linalg.norm(trajectory.u, axis=-1).max())
    return ClosedLoopSummary(
        controller=controller,
        t_start=float(trajectory.t[0]),
        t_end=trajectory.t_end,
        max_ratios=tuple(float(v) for v in max_ratios),
        max_input_norm=max_input,
        input_energy=input_energy(trajectory, applied),
        steps=len(steps),
        total_iterations=sum(s.iterations for s in steps),
        total_restarts=sum(s.restarts for s in steps),
        iterations_per_step=[s.iterations for s in steps],
    )
