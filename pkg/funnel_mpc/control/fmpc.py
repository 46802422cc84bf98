"""Receding-horizon Funnel MPC loop.

At every t_hat in {t0, t0 + delta, ...}: measure the state, solve the OCP on
[t_hat, t_hat + T] warm-started by the previous solution shifted by delta (zero
padded), apply the first delta of the optimal input, advance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from loguru import logger
import numpy as np
from numpy.typing import ArrayLike
from tqdm import tqdm

from funnel_mpc.config import DEFAULT_CONTROL_DT
from funnel_mpc.control.closed_loop import ClosedLoopResult, StepDiagnostics, summarize
from funnel_mpc.control.ocp import OcpSpec, SolverOptions, check_start, solve
from funnel_mpc.funnel.boundary import FunnelTrajectory
from funnel_mpc.funnel.error_chain import StageCostConfig
from funnel_mpc.funnel.reference import ReferenceSignal
from funnel_mpc.simulation.integrator import ControlSequence, Trajectory, integrate
from funnel_mpc.systems.plant import PlantModel

# Slack when checking that the run length is a multiple of delta
_STEP_SLACK = 1e-9


def _count_steps(t0: float, t_end: float, delta: float) -> int:
    ratio = (t_end - t0) / delta
    steps = round(ratio)
    if abs(ratio - steps) > _STEP_SLACK * max(1.0, ratio):
        raise ValueError(
            f"Run length t_end - t0 = {t_end - t0:g} is not a multiple of delta = {delta:g}"
        )
    return steps


@dataclass(frozen=True, eq=False)
class FmpcConfig:
    """Closed-loop settings; defaults are the mass-on-car benchmark values."""

    x0: np.ndarray
    t0: float = 0.0
    t_end: float = 10.0
    delta: float = DEFAULT_CONTROL_DT
    horizon: float = 0.6
    input_bound: float = 15.0
    eps: tuple[float, ...] = (0.94, 0.99)
    control_dt: float = DEFAULT_CONTROL_DT
    cost_cfg: StageCostConfig = field(default_factory=StageCostConfig)
    options: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self) -> None:
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        object.__setattr__(self, "eps", tuple(float(e) for e in self.eps))
        if not 0 < self.delta <= self.horizon:
            raise ValueError(f"Need 0 < delta <= T, got delta={self.delta}, T={self.horizon}")
        if self.t_end < self.t0:
            raise ValueError(f"t_end = {self.t_end} precedes t0 = {self.t0}")
        _count_steps(self.t0, self.t_end, self.delta)

    @property
    def n_steps(self) -> int:
        """Number of receding-horizon steps (t_end - t0) / delta."""
        return _count_steps(self.t0, self.t_end, self.delta)

    def ocp_spec(
        self,
        model: PlantModel,
        funnel: FunnelTrajectory,
        ref: ReferenceSignal,
        x_hat: ArrayLike,
        t_hat: float,
    ) -> OcpSpec:
        return OcpSpec(
            model,
            funnel,
            ref,
            x_hat,
            t_hat,
            self.horizon,
            self.delta,
            self.input_bound,
            self.eps,
            self.control_dt,
            self.cost_cfg,
            self.options,
        )


def run(
    cfg: FmpcConfig, model: PlantModel, funnel: FunnelTrajectory, ref: ReferenceSignal
) -> ClosedLoopResult:
    """Run the FMPC loop from cfg.x0 over [cfg.t0, cfg.t_end].

    Raises:
        InfeasibleStart: x0 is outside the eps-shrunken funnel set at t0.
        NoFeasiblePoint: An OCP had no feasible solution (carries the failing t_hat).
    """
    opts = cfg.options
    funnel = funnel.extended_to(cfg.t_end + cfg.horizon)
    x = model.check_state(cfg.x0)
    t_hat = float(cfg.t0)
    check_start(cfg.ocp_spec(model, funnel, ref, x, t_hat))

    n_steps = cfg.n_steps
    if n_steps == 0:
        t = np.array([t_hat])
        trajectory = Trajectory(
            t, x[None], model.output_chain(x[None]), np.zeros((1, model.m))
        ).with_funnel(funnel, ref, cfg.cost_cfg)
        return ClosedLoopResult("fmpc", trajectory, None, [], summarize("fmpc", trajectory))

    logger.info(
        f"Running FMPC on [{cfg.t0:g}, {cfg.t_end:g}]: {n_steps} steps, T={cfg.horizon:g}, "
        f"delta={cfg.delta:g}, M={cfg.input_bound:g}"
    )
    trajectory: Trajectory | None = None
    pieces: list[ControlSequence] = []
    steps: list[StepDiagnostics] = []
    warm: ControlSequence | None = None
    for _ in tqdm(range(n_steps), desc="fmpc", leave=False):
        spec = cfg.ocp_spec(model, funnel, ref, x, t_hat)
        solution = solve(spec, warm)
        piece = solution.u_star.head(spec.shift_steps)
        segment = integrate(
            model, x, piece, (t_hat, piece.t_end), opts.integrator_tol, opts.samples_per_interval
        )
        trajectory = segment if trajectory is None else trajectory.concatenate(segment)
        pieces.append(piece)
        steps.append(
            StepDiagnostics(
                t_hat=t_hat,
                cost=solution.cost,
                terminal_margins=tuple(float(v) for v in solution.terminal_margins),
                iterations=solution.stats.iterations,
                restarts=solution.stats.restarts,
                gradient_norm=solution.stats.gradient_norm,
                used_warm_start=solution.stats.used_warm_start,
            )
        )
        logger.debug(
            f"t_hat={t_hat:.4f} cost={solution.cost:.6g} iterations={solution.stats.iterations} "
            f"min margin={float(np.min(solution.terminal_margins)):.3g}"
        )
        warm = solution.u_star.shifted(spec.shift_steps)
        x = segment.x[-1]
        t_hat = piece.t_end

    applied = ControlSequence.concatenate(pieces)
    trajectory = trajectory.with_funnel(funnel, ref, cfg.cost_cfg)
    summary = summarize("fmpc", trajectory, applied, steps)
    logger.success(
        f"FMPC done: {summary.steps} steps, max |u| = {summary.max_input_norm:.4g}, "
        f"max |e_1|/psi_1 = {summary.max_error_ratio:.4f}, restarts = {summary.total_restarts}"
    )
    return ClosedLoopResult("fmpc", trajectory, applied, steps, summary)
