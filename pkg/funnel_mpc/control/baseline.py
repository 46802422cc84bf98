"""Funnel controller u = -k_r gamma(x)^{-1} e_r.

A pure state feedback that keeps every auxiliary error inside its funnel. It is the
comparison controller for FMPC and, sampled on the control grid, the restart point
that gives the OCP solver a feasible candidate.
"""

from __future__ import annotations

from dataclasses import dataclass

from loguru import logger
import numpy as np
from numpy.typing import ArrayLike
from tqdm import tqdm

from funnel_mpc.config import (
    DEFAULT_CONTROL_DT,
    DEFAULT_INTEGRATOR_TOL,
    DEFAULT_SAMPLES_PER_INTERVAL,
)
from funnel_mpc.control.closed_loop import ClosedLoopResult, summarize
from funnel_mpc.errors import SaturatedChain, StepSizeUnderflow
from funnel_mpc.funnel.boundary import FunnelTrajectory
from funnel_mpc.funnel.error_chain import StageCostConfig, chain
from funnel_mpc.funnel.reference import ReferenceSignal
from funnel_mpc.simulation.integrator import (
    ControlSequence,
    IntegratorStats,
    Trajectory,
    integrate,
    integrate_segments,
)
from funnel_mpc.systems.plant import PlantModel

_CLIP_SHRINK = 1.0 - 4 * np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class FunnelControllerConfig:
    """Plant, funnel and reference for the funnel controller.

    `saturation` clips |u| for diagnostic comparisons with FMPC; None leaves the
    feedback untouched.
    """

    model: PlantModel
    funnel: FunnelTrajectory
    reference: ReferenceSignal
    saturation: float | None = None

    def __post_init__(self) -> None:
        if not self.model.has_normal_form:
            raise ValueError(f"Funnel controller needs normal-form data for '{self.model.name}'")
        if self.saturation is not None and not self.saturation > 0:
            raise ValueError(f"Saturation must be positive, got {self.saturation}")
        if self.reference.max_order < self.funnel.r - 1:
            raise ValueError(
                f"Reference '{self.reference.name}' provides {self.reference.max_order} "
                f"derivatives, the funnel needs {self.funnel.r - 1}"
            )


def clip_to_ball(u: np.ndarray, radius: float) -> np.ndarray:
    """Project each m-vector onto the Euclidean ball of the given radius.

    Clipped vectors land a few ulps inside the ball, so |u| <= radius holds exactly.
    """
    norms = np.linalg.norm(u, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > radius, radius / norms * _CLIP_SHRINK, 1.0)
    return u * scale


def feedback(cfg: FunnelControllerConfig, t: float, x: ArrayLike) -> np.ndarray:
    """Funnel feedback at (t, x); x may carry leading batch dimensions.

    Raises:
        SaturatedChain: Some |e_i| >= psi_i, where the feedback is undefined.
    """
    model = cfg.model
    x = model.check_state(x)
    state = chain(t, model.output_chain(x), cfg.funnel, cfg.reference)
    if np.any(state.saturated):
        raise SaturatedChain(t, int(np.max(state.saturated_index)))
    gamma = model.gamma(x)
    u = -state.k[..., -1, None] * np.linalg.solve(gamma, state.e[..., -1, :, None])[..., 0]
    if cfg.saturation is not None:
        u = clip_to_ball(u, cfg.saturation)
    return u


def sampled_feedback_controls(
    cfg: FunnelControllerConfig,
    x_hat: ArrayLike,
    t_hat: float,
    dt: float,
    n_steps: int,
    tol: float = DEFAULT_INTEGRATOR_TOL,
    samples_per_interval: int = DEFAULT_SAMPLES_PER_INTERVAL,
) -> ControlSequence:
    """Funnel feedback evaluated at the grid points and held over each interval.

    If the sampled loop saturates before the horizon ends, the remaining intervals
    are filled with zeros.
    """
    values = np.zeros((n_steps, cfg.model.m))
    x = np.asarray(x_hat, dtype=float)
    for k in range(n_steps):
        t_k = t_hat + k * dt
        try:
            values[k] = feedback(cfg, t_k, x)
        except SaturatedChain as exc:
            logger.debug(f"Sampled funnel feedback stopped at step {k}: {exc}")
            break
        piece = ControlSequence(t_k, dt, values[k : k + 1])
        x = integrate(cfg.model, x, piece, (t_k, t_k + dt), tol, samples_per_interval).x[-1]
    return ControlSequence(t_hat, dt, values)


def run_closed_loop(
    cfg: FunnelControllerConfig,
    x0: ArrayLike,
    span: tuple[float, float],
    sample_dt: float = DEFAULT_CONTROL_DT,
    tol: float = DEFAULT_INTEGRATOR_TOL,
    samples_per_interval: int = DEFAULT_SAMPLES_PER_INTERVAL,
    cost_cfg: StageCostConfig | None = None,
) -> ClosedLoopResult:
    """Simulate the funnel controller with the feedback inside the ODE right-hand side.

    Output samples are taken `samples_per_interval` times per `sample_dt`.
    """
    model = cfg.model
    t0, t1 = float(span[0]), float(span[1])
    if t1 < t0 or not sample_dt > 0:
        raise ValueError(f"Invalid span [{t0}, {t1}] or sample_dt {sample_dt}")
    cfg = FunnelControllerConfig(model, cfg.funnel.extended_to(t1), cfg.reference, cfg.saturation)
    cost_cfg = cost_cfg or StageCostConfig()
    x = model.check_state(x0)[None]
    feedback(cfg, t0, x)

    def rhs(t: float, xs: np.ndarray, _s: int) -> np.ndarray:
        # Trial stages outside the funnel get a NaN slope so the step is rejected
        try:
            return model.rhs(xs, feedback(cfg, t, xs))
        except SaturatedChain:
            return np.full_like(xs, np.nan)

    n_intervals = int(np.ceil((t1 - t0) / sample_dt - 1e-9))
    edges = t0 + sample_dt * np.arange(n_intervals + 1)
    edges[-1] = t1
    times, states, stats = [np.array([t0])], [x[None]], IntegratorStats()
    logger.info(f"Running funnel controller on [{t0:g}, {t1:g}] ({n_intervals} intervals)")
    for s in tqdm(range(n_intervals), desc="funnel-controller", leave=False):
        try:
            t, xs, seg_stats = integrate_segments(
                rhs, x, edges[s : s + 2], samples_per_interval, tol
            )
        except StepSizeUnderflow:
            state = chain(edges[s], model.output_chain(x), cfg.funnel, cfg.reference)
            raise SaturatedChain(float(edges[s]), max(int(np.max(state.saturated_index)), 1))
        times.append(t[1:])
        states.append(xs[1:])
        stats = stats + seg_stats
        x = xs[-1]

    t_all = np.concatenate(times)
    x_all = np.concatenate(states)[:, 0]
    u_all = np.vstack([feedback(cfg, t, xi[None])[0] for t, xi in zip(t_all, x_all)])
    trajectory = Trajectory(t_all, x_all, model.output_chain(x_all), u_all, stats)
    trajectory = trajectory.with_funnel(cfg.funnel, cfg.reference, cost_cfg)
    summary = summarize("funnel-controller", trajectory)
    logger.success(
        f"Funnel controller done: max |u| = {summary.max_input_norm:.4g}, "
        f"max |e_1|/psi_1 = {summary.max_error_ratio:.4f}"
    )
    return ClosedLoopResult("funnel-controller", trajectory, None, [], summary)
