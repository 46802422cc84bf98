"""Finite-horizon optimal control problem solved at every FMPC step.

Minimise the integrated funnel stage cost over zero-order-hold inputs on
[t_hat, t_hat + T] subject to |u(t)| <= M and the terminal condition
|e_i(t_hat + delta)| <= eps_i psi_i(t_hat + delta), i = 1..r.

The problem is transcribed by direct single shooting over the ZOH values and solved
with projected BFGS and Armijo backtracking. The barrier cost is +inf outside the
funnel, so the line search never accepts such points. The terminal condition
enters as a quadratic penalty with increasing weights and is re-checked exactly on
a fresh integration afterwards.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field
from functools import cached_property
import math

from loguru import logger
import numpy as np
from scipy.integrate import trapezoid

from funnel_mpc.config import (
    DEFAULT_CONTROL_DT,
    DEFAULT_INTEGRATOR_TOL,
    DEFAULT_SAMPLES_PER_INTERVAL,
)
from funnel_mpc.control.baseline import (
    FunnelControllerConfig,
    clip_to_ball,
    sampled_feedback_controls,
)
from funnel_mpc.errors import CoverageError, InfeasibleStart, NoFeasiblePoint, StepSizeUnderflow
from funnel_mpc.funnel.boundary import FunnelTrajectory
from funnel_mpc.funnel.error_chain import StageCostConfig, chain, chain_from_arrays
from funnel_mpc.funnel.reference import ReferenceSignal
from funnel_mpc.simulation.integrator import (
    ControlSequence,
    integrate,
    integrate_batch,
    subgrid,
)
from funnel_mpc.systems.plant import PlantModel

_ARMIJO_C = 1e-4
_MAX_BACKTRACKS = 40
# Relative cost decrease below which an accepted step counts as converged
_COST_STALL = 1e-12
# Slack allowed on the grid alignment of delta and T
_GRID_SLACK = 1e-9


@dataclass(frozen=True)
class SolverOptions:
    """Numerical settings of the OCP solver."""

    penalty_weights: tuple[float, ...] = (1e2, 1e4, 1e6)
    max_iterations: int = 500
    gradient_tol: float = 1e-8
    terminal_tol: float = 1e-9
    fd_step: float = 1e-6
    terminal_backoff: float = 1e-4
    integrator_tol: float = DEFAULT_INTEGRATOR_TOL
    samples_per_interval: int = DEFAULT_SAMPLES_PER_INTERVAL

    def __post_init__(self) -> None:
        weights = tuple(float(w) for w in self.penalty_weights)
        object.__setattr__(self, "penalty_weights", weights)
        if not weights or any(not w > 0 for w in weights):
            raise ValueError(f"penalty_weights must be positive, got {weights}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be at least 1, got {self.max_iterations}")
        for name in ("gradient_tol", "terminal_tol", "fd_step", "integrator_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.terminal_backoff >= 0:
            raise ValueError(f"terminal_backoff must be non-negative, got {self.terminal_backoff}")
        if self.samples_per_interval < 1:
            raise ValueError(
                f"samples_per_interval must be at least 1, got {self.samples_per_interval}"
            )


def _grid_steps(value: float, dt: float, name: str) -> int:
    steps = round(value / dt)
    if steps < 1 or abs(steps * dt - value) > _GRID_SLACK * max(1.0, abs(value)):
        raise ValueError(f"{name} = {value} is not a positive multiple of control_dt = {dt}")
    return steps


@dataclass(frozen=True, eq=False)
class OcpSpec:
    """One OCP instance: plant, funnel, reference, measured state and horizon data."""

    model: PlantModel
    funnel: FunnelTrajectory
    reference: ReferenceSignal
    x_hat: np.ndarray
    t_hat: float
    horizon: float
    delta: float
    input_bound: float
    eps: tuple[float, ...]
    control_dt: float = DEFAULT_CONTROL_DT
    cost_cfg: StageCostConfig = field(default_factory=StageCostConfig)
    options: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self) -> None:
        object.__setattr__(self, "x_hat", self.model.check_state(self.x_hat).copy())
        object.__setattr__(self, "eps", tuple(float(e) for e in self.eps))
        for name in ("t_hat", "horizon", "delta", "input_bound", "control_dt"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if len(self.eps) != self.funnel.r or any(not 0 < e < 1 for e in self.eps):
            raise ValueError(f"eps must hold {self.funnel.r} values in (0, 1), got {self.eps}")
        if not self.input_bound >= 0:
            raise ValueError(f"Input bound M must be non-negative, got {self.input_bound}")
        if not 0 < self.delta <= self.horizon * (1 + _GRID_SLACK):
            raise ValueError(f"Need 0 < delta <= T, got delta={self.delta}, T={self.horizon}")
        if self.t_hat < 0:
            raise ValueError(f"t_hat must be non-negative, got {self.t_hat}")
        _grid_steps(self.horizon, self.control_dt, "T")
        _grid_steps(self.delta, self.control_dt, "delta")
        if self.reference.m != self.model.m:
            raise ValueError(
                f"Reference has {self.reference.m} channels, plant has {self.model.m}"
            )
        object.__setattr__(self, "funnel", self.funnel.extended_to(self.t_hat + self.horizon))

    @property
    def n_steps(self) -> int:
        """Number of ZOH decision values N = T / control_dt."""
        return _grid_steps(self.horizon, self.control_dt, "T")

    @property
    def shift_steps(self) -> int:
        return _grid_steps(self.delta, self.control_dt, "delta")

    @property
    def n_decisions(self) -> int:
        return self.n_steps * self.model.m

    @cached_property
    def grid(self) -> ControlSequence:
        return ControlSequence.constant(
            self.t_hat, self.control_dt, self.n_steps, np.zeros(self.model.m)
        )

    @cached_property
    def sample_times(self) -> np.ndarray:
        return subgrid(self.grid.breakpoints, self.options.samples_per_interval)

    @cached_property
    def psi_grid(self) -> np.ndarray:
        return self.funnel.psi(self.sample_times)

    @cached_property
    def reference_grid(self) -> np.ndarray:
        return self.reference.chain(self.sample_times, self.funnel.r)

    @property
    def terminal_index(self) -> int:
        """Sample index of t_hat + delta."""
        return self.shift_steps * self.options.samples_per_interval

    @cached_property
    def terminal_target(self) -> np.ndarray:
        """Backed-off fractions the penalty aims for (the exact check uses eps)."""
        eps = np.asarray(self.eps)
        return np.maximum(eps - self.options.terminal_backoff, 0.5 * eps)

    def project(self, z: np.ndarray) -> np.ndarray:
        """Project a decision vector (or batch of them) onto |u_k| <= M."""
        shape = z.shape
        values = z.reshape(shape[:-1] + (self.n_steps, self.model.m))
        return clip_to_ball(values, self.input_bound).reshape(shape)

    def aligned_values(self, u: ControlSequence) -> np.ndarray:
        """Values of `u` on this spec's grid; missing tail intervals are zero."""
        same_dt = math.isclose(u.dt, self.control_dt)
        if not (same_dt and math.isclose(u.t_start, self.t_hat, abs_tol=1e-9)):
            raise CoverageError(
                f"Control on grid (t_start={u.t_start:.6g}, dt={u.dt:.6g}) does not match "
                f"the OCP grid (t_hat={self.t_hat:.6g}, dt={self.control_dt:.6g})"
            )
        values = np.zeros((self.n_steps, self.model.m))
        n = min(u.n_steps, self.n_steps)
        values[:n] = u.values[:n]
        return values


@dataclass
class SolverStats:
    iterations: int = 0
    restarts: int = 0
    gradient_norm: float = math.nan
    used_warm_start: bool = False
    start: str = ""


@dataclass
class OcpSolution:
    """Feasible minimiser of the discretised OCP."""

    u_star: ControlSequence
    cost: float
    terminal_margins: np.ndarray
    stats: SolverStats


@dataclass(frozen=True)
class SolutionCheck:
    """Result of re-integrating a candidate and evaluating the constraints."""

    cost: float
    terminal_margins: np.ndarray
    inside_funnel: bool
    input_ok: bool

    def feasible(self, tol: float) -> bool:
        return (
            self.inside_funnel
            and self.input_ok
            and math.isfinite(self.cost)
            and bool(np.all(self.terminal_margins >= -tol))
        )


def _evaluate(spec: OcpSpec, controls: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Costs (B,) and terminal error norms (B, r) for a batch of inputs (B, N, m)."""
    opts = spec.options
    batch = controls.shape[0]
    try:
        t, x, _ = integrate_batch(
            spec.model,
            spec.x_hat,
            controls,
            spec.grid,
            (spec.t_hat, spec.grid.t_end),
            opts.integrator_tol,
            opts.samples_per_interval,
        )
    except StepSizeUnderflow:
        if batch == 1:
            return np.array([math.inf]), np.full((1, spec.funnel.r), math.nan)
        # One member blowing up stalls the shared step size; retry members alone
        parts = [_evaluate(spec, controls[b : b + 1]) for b in range(batch)]
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])

    r, m = spec.funnel.r, spec.model.m
    zeta = spec.model.output_chain(x)
    zeta = zeta.reshape(zeta.shape[:-1] + (r, m))
    state = chain_from_arrays(
        t[:, None], zeta, spec.reference_grid[:, None], spec.psi_grid[:, None]
    )
    with np.errstate(invalid="ignore"):
        running = trapezoid(np.sum(state.k, axis=-1) - r, t, axis=0)
    inputs = spec.cost_cfg.lambda_u * np.sum(controls**2, axis=(1, 2)) * spec.control_dt
    bad = np.any(state.saturated, axis=0) | ~np.isfinite(running)
    costs = np.where(bad, math.inf, running + inputs)
    return costs, state.error_norms[spec.terminal_index]


def _penalised(spec: OcpSpec, z: np.ndarray, weight: float) -> np.ndarray:
    """Cost plus weighted squared violation of the backed-off terminal condition."""
    controls = z.reshape(z.shape[0], spec.n_steps, spec.model.m)
    costs, norms = _evaluate(spec, controls)
    bound = spec.terminal_target * spec.psi_grid[spec.terminal_index]
    with np.errstate(invalid="ignore"):
        violation = np.sum(np.maximum(norms - bound, 0.0) ** 2, axis=-1)
    return np.where(np.isfinite(costs), costs + weight * violation, math.inf)


def _gradient(spec: OcpSpec, z: np.ndarray, weight: float) -> np.ndarray:
    """Forward differences in one batched integration, backward where forward hits +inf."""
    step = spec.options.fd_step * np.maximum(1.0, np.abs(z))
    perturb = np.diag(step)
    values = _penalised(spec, np.vstack([z, z + perturb]), weight)
    grad = (values[1:] - values[0]) / step
    blocked = ~np.isfinite(values[1:])
    if blocked.any():
        back = _penalised(spec, np.vstack([z, z - perturb[blocked]]), weight)
        grad[blocked] = (back[0] - back[1:]) / step[blocked]
    grad[~np.isfinite(grad)] = 0.0
    return grad


@dataclass
class _StageResult:
    z: np.ndarray
    value: float
    iterations: int
    gradient_norm: float


def _minimize(spec: OcpSpec, z0: np.ndarray, weight: float) -> _StageResult:
    """Projected BFGS with Armijo backtracking along the projection arc."""
    opts = spec.options
    dim = z0.size
    z = spec.project(z0)
    f = float(_penalised(spec, z[None], weight)[0])
    if not math.isfinite(f):
        return _StageResult(z, math.inf, 0, math.nan)

    eye = np.eye(dim)
    h_inv = eye.copy()
    g = _gradient(spec, z, weight)
    gradient_norm = math.inf
    iterations = 0
    steepest = True
    while iterations < opts.max_iterations:
        iterations += 1
        gradient_norm = float(np.max(np.abs(z - spec.project(z - g))))
        if gradient_norm <= opts.gradient_tol:
            break
        direction = -h_inv @ g
        if not g @ direction < 0:
            h_inv, direction, steepest = eye.copy(), -g, True

        alpha, accepted = 1.0, False
        for _ in range(_MAX_BACKTRACKS):
            trial = spec.project(z + alpha * direction)
            decrease = float(g @ (trial - z))
            if decrease < 0:
                f_trial = float(_penalised(spec, trial[None], weight)[0])
                if f_trial <= f + _ARMIJO_C * decrease:
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            if steepest:
                break
            h_inv, steepest = eye.copy(), True
            continue

        s = trial - z
        g_new = _gradient(spec, trial, weight)
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            rho = 1.0 / sy
            left = eye - rho * np.outer(s, y)
            h_inv = left @ h_inv @ left.T + rho * np.outer(s, s)
            steepest = False
        stalled = f - f_trial <= _COST_STALL * max(1.0, abs(f))
        z, f, g = trial, f_trial, g_new
        if stalled:
            break
    return _StageResult(z, f, iterations, gradient_norm)


def verify_solution(spec: OcpSpec, u: ControlSequence) -> SolutionCheck:
    """Re-integrate `u` on its own and evaluate cost, funnel and terminal conditions."""
    opts = spec.options
    values = spec.aligned_values(u)
    sequence = ControlSequence(spec.t_hat, spec.control_dt, values)
    trajectory = integrate(
        spec.model,
        spec.x_hat,
        sequence,
        (spec.t_hat, sequence.t_end),
        opts.integrator_tol,
        opts.samples_per_interval,
    ).with_funnel(spec.funnel, spec.reference, spec.cost_cfg)
    errors = trajectory.errors
    inside = not bool(np.any(errors.saturated))
    j = spec.terminal_index
    margins = np.asarray(spec.eps) * errors.psi[j] - errors.error_norms[j]
    input_ok = bool(np.all(np.linalg.norm(values, axis=-1) <= spec.input_bound * (1 + 1e-12)))
    cost = math.inf
    if inside:
        running = trapezoid(np.sum(errors.k, axis=-1) - spec.funnel.r, trajectory.t)
        cost = float(running + spec.cost_cfg.lambda_u * sequence.energy())
    return SolutionCheck(cost, np.nan_to_num(margins, nan=-math.inf), inside, input_ok)


def total_cost(spec: OcpSpec, u: ControlSequence) -> float:
    """Integrated stage cost of `u` over [t_hat, t_hat + T]; +inf outside the funnel."""
    if u.n_steps < spec.n_steps:
        raise CoverageError(
            f"Control covers {u.n_steps} intervals, the horizon needs {spec.n_steps}"
        )
    costs, _ = _evaluate(spec, spec.aligned_values(u)[None])
    return float(costs[0])


def check_start(spec: OcpSpec) -> np.ndarray:
    """Margins eps_i psi_i(t_hat) - |e_i(t_hat)| of the measured state.

    Raises:
        InfeasibleStart: The state is outside the eps-shrunken funnel set.
    """
    state = chain(spec.t_hat, spec.model.output_chain(spec.x_hat), spec.funnel, spec.reference)
    margins = np.asarray(spec.eps) * state.psi - state.error_norms
    if state.saturated or np.any(~(margins >= -spec.options.terminal_tol)):
        raise InfeasibleStart(
            f"State at t_hat={spec.t_hat:.6g} violates |e_i| <= eps_i psi_i "
            f"(margins {np.round(margins, 6).tolist()})"
        )
    return margins


def _start_points(
    spec: OcpSpec, warm_start: ControlSequence | None
) -> list[tuple[str, Callable[[], np.ndarray]]]:
    starts: list[tuple[str, Callable[[], np.ndarray]]] = []
    if warm_start is not None:
        starts.append(("warm start", lambda: spec.aligned_values(warm_start)))
    starts.append(("zero", lambda: np.zeros((spec.n_steps, spec.model.m))))
    if spec.model.has_normal_form and spec.input_bound > 0:

        def funnel_feedback() -> np.ndarray:
            cfg = FunnelControllerConfig(
                spec.model, spec.funnel, spec.reference, saturation=spec.input_bound
            )
            return sampled_feedback_controls(
                cfg,
                spec.x_hat,
                spec.t_hat,
                spec.control_dt,
                spec.n_steps,
                spec.options.integrator_tol,
                spec.options.samples_per_interval,
            ).values

        starts.append(("funnel controller", funnel_feedback))
    return starts


def _solve_from(spec: OcpSpec, z0: np.ndarray) -> tuple[np.ndarray, int, float] | None:
    """Run the penalty schedule from z0; None if no stage ends exactly feasible."""
    z, iterations, gradient_norm = z0, 0, math.nan
    for weight in spec.options.penalty_weights:
        stage = _minimize(spec, z, weight)
        iterations += stage.iterations
        if not math.isfinite(stage.value):
            return None
        z, gradient_norm = stage.z, stage.gradient_norm
        candidate = ControlSequence(spec.t_hat, spec.control_dt, z.reshape(spec.n_steps, -1))
        if verify_solution(spec, candidate).feasible(spec.options.terminal_tol):
            return z, iterations, gradient_norm
        logger.debug(f"Terminal condition not met at penalty weight {weight:g}")
    return None


def solve(spec: OcpSpec, warm_start: ControlSequence | None = None) -> OcpSolution:
    """Compute a feasible local minimiser of the discretised OCP.

    Starts from the warm start (if any), then restarts from the zero input and the
    sampled funnel-controller input. A feasible warm start that is at least as cheap
    as the optimiser's result is returned instead of it.

    Raises:
        InfeasibleStart: x_hat violates the eps-shrunken funnel condition.
        NoFeasiblePoint: No start produced a finite-cost, terminal-feasible input.
    """
    check_start(spec)
    tol = spec.options.terminal_tol
    found = None
    starts = _start_points(spec, warm_start)
    for restarts, (name, make_start) in enumerate(starts):
        z0 = make_start().reshape(-1)
        found = _solve_from(spec, z0)
        if found is not None:
            break
        logger.warning(f"OCP at t_hat={spec.t_hat:.4g}: no feasible point from the {name} input")
    if found is None:
        raise NoFeasiblePoint(f"OCP infeasible after {len(starts)} starts", spec.t_hat)

    z, iterations, gradient_norm = found
    values = spec.project(z).reshape(spec.n_steps, spec.model.m)
    u_star = ControlSequence(spec.t_hat, spec.control_dt, values)
    check = verify_solution(spec, u_star)
    stats = SolverStats(iterations, restarts, gradient_norm, start=name)

    if warm_start is not None:
        warm_values = spec.project(spec.aligned_values(warm_start).reshape(-1))
        warm = ControlSequence(
            spec.t_hat, spec.control_dt, warm_values.reshape(spec.n_steps, spec.model.m)
        )
        warm_check = verify_solution(spec, warm)
        if warm_check.feasible(tol) and warm_check.cost <= check.cost:
            u_star, check = warm, warm_check
            stats.used_warm_start = True
    return OcpSolution(u_star, check.cost, check.terminal_margins, stats)

