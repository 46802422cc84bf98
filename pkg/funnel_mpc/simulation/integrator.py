"""Adaptive Runge-Kutta integration under piecewise-constant inputs.

The right-hand side of a plant driven by a zero-order-hold input jumps at every
control breakpoint, so integration restarts at each breakpoint and never steps
across one. Within a control interval a Dormand-Prince 5(4) pair with PI step-size
control advances the state and lands exactly on a uniform sub-grid of
`samples_per_interval` points; those points are the dense output.

Batches of control sequences sharing an initial state are integrated in one pass
with common step sizes (the error norm is the worst over the batch).
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field
import math

import numpy as np
from numpy.typing import ArrayLike

from funnel_mpc.config import DEFAULT_INTEGRATOR_TOL, DEFAULT_SAMPLES_PER_INTERVAL
from funnel_mpc.errors import CoverageError, StepSizeUnderflow
from funnel_mpc.funnel.boundary import FunnelTrajectory
from funnel_mpc.funnel.error_chain import (
    ErrorChainState,
    StageCostConfig,
    chain,
    stage_cost,
)
from funnel_mpc.funnel.reference import ReferenceSignal
from funnel_mpc.systems.plant import PlantModel

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
# Difference between the 5th and the embedded 4th order weights
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])

# PI step-size controller
_SAFETY = 0.9
_PI_ALPHA = 0.7 / 5
_PI_BETA = 0.4 / 5
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
# Relative step size below which the integration is declared blown up
_MIN_RELATIVE_STEP = 1e-12
# Relative slack when comparing times to control breakpoints
_TIME_SLACK = 1e-12


def dopri5_step(
    fun: Callable[[float, np.ndarray], np.ndarray],
    t: float,
    x: np.ndarray,
    h: float,
    k1: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One Dormand-Prince step from (t, x) with step h.

    Args:
        fun: Right-hand side f(t, x), vectorised over leading dimensions of x.
        t: Current time.
        x: Current state(s).
        h: Step size.
        k1: f(t, x) if already known (first-same-as-last reuse).

    Returns:
        (x_new, error_estimate, f(t + h, x_new)).
    """
    stages = [fun(t, x) if k1 is None else k1]
    for i in range(1, 7):
        increment = sum(a * k for a, k in zip(_A[i], stages) if a != 0.0)
        stages.append(fun(t + _C[i] * h, x + h * increment))
    x_new = x + h * sum(b * k for b, k in zip(_A[6], stages[:6]) if b != 0.0)
    # stage 7 is evaluated at x_new: the 5th order weights equal the last row of A
    error = h * sum(e * k for e, k in zip(_E, stages) if e != 0.0)
    return x_new, error, stages[6]


@dataclass
class IntegratorStats:
    accepted: int = 0
    rejected: int = 0
    evaluations: int = 0

    def __add__(self, other: IntegratorStats) -> IntegratorStats:
        return IntegratorStats(
            self.accepted + other.accepted,
            self.rejected + other.rejected,
            self.evaluations + other.evaluations,
        )

    def as_dict(self) -> dict[str, int]:
        return {
            "accepted": self.accepted,
            "rejected": self.rejected,
            "evaluations": self.evaluations,
        }


@dataclass(frozen=True, eq=False)
class ControlSequence:
    """Zero-order-hold input: values[k] is applied on [t_start + k dt, t_start + (k+1) dt)."""

    t_start: float
    dt: float
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1:
            raise ValueError(f"Control values must have shape (N >= 1, m), got {values.shape}")
        if not self.dt > 0:
            raise ValueError(f"Control step dt must be positive, got {self.dt}")
        object.__setattr__(self, "t_start", float(self.t_start))
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(
        cls, t_start: float, dt: float, n_steps: int, value: ArrayLike
    ) -> ControlSequence:
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(t_start, dt, np.tile(value, (n_steps, 1)))

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def t_end(self) -> float:
        return self.t_start + self.n_steps * self.dt

    @property
    def breakpoints(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n_steps + 1)

    def covers(self, t0: float, t1: float) -> bool:
        slack = _TIME_SLACK * max(1.0, abs(self.t_end))
        return self.t_start - slack <= t0 <= t1 <= self.t_end + slack

    def index_at(self, t: ArrayLike) -> np.ndarray:
        """Interval index of each time; t_end maps to the last interval."""
        t = np.asarray(t, dtype=float)
        if not self.covers(float(np.min(t)), float(np.max(t))):
            raise CoverageError(
                f"Times in [{np.min(t):.6g}, {np.max(t):.6g}] outside control coverage "
                f"[{self.t_start:.6g}, {self.t_end:.6g}]"
            )
        index = np.floor((t - self.t_start) / self.dt + _TIME_SLACK).astype(int)
        return np.clip(index, 0, self.n_steps - 1)

    def value_at(self, t: ArrayLike) -> np.ndarray:
        """Input at time(s) t, shape `t.shape + (m,)`."""
        return self.values[self.index_at(t)]

    def head(self, n: int) -> ControlSequence:
        """The first n intervals."""
        return ControlSequence(self.t_start, self.dt, self.values[:n])

    def shifted(self, n: int) -> ControlSequence:
        """Drop the first n intervals, pad with zeros at the end, keep the length."""
        padded = np.vstack([self.values[n:], np.zeros((min(n, self.n_steps), self.m))])
        return ControlSequence(self.t_start + n * self.dt, self.dt, padded)

    def energy(self) -> float:
        """Exact integral of |u|^2 over the covered span."""
        return float(np.sum(self.values**2) * self.dt)

    @staticmethod
    def concatenate(pieces: list[ControlSequence]) -> ControlSequence:
        if not pieces:
            raise ValueError("Cannot concatenate an empty list of control sequences")
        dt = pieces[0].dt
        for before, after in zip(pieces, pieces[1:]):
            if after.dt != dt or not math.isclose(before.t_end, after.t_start, abs_tol=1e-9):
                raise ValueError("Control pieces must share dt and be contiguous")
        return ControlSequence(pieces[0].t_start, dt, np.vstack([p.values for p in pieces]))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled closed- or open-loop response.

    Shapes: t (S,), x (S, n), zeta (S, r*m), u (S, m). The input is right-continuous,
    so u[j] is the value applied just after t[j] (the last sample holds the final value).
    errors and stage_cost are filled in by `with_funnel`.
    """

    t: np.ndarray
    x: np.ndarray
    zeta: np.ndarray
    u: np.ndarray
    stats: IntegratorStats = field(default_factory=IntegratorStats)
    errors: ErrorChainState | None = None
    stage_cost: np.ndarray | None = None

    @property
    def n_samples(self) -> int:
        return self.t.size

    @property
    def m(self) -> int:
        return self.u.shape[-1]

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    def with_funnel(
        self, funnel: FunnelTrajectory, ref: ReferenceSignal, cost_cfg: StageCostConfig
    ) -> Trajectory:
        """Attach the error chain and stage cost of every sample."""
        errors = chain(self.t, self.zeta, funnel, ref)
        cost = np.atleast_1d(stage_cost(errors, self.u, cost_cfg))
        return Trajectory(self.t, self.x, self.zeta, self.u, self.stats, errors, cost)

    def concatenate(self, other: Trajectory) -> Trajectory:
        """Join `other` starting where this trajectory ends (the shared sample is kept once)."""
        if self.t[-1] != other.t[0]:
            raise ValueError(
                f"Trajectories are not contiguous: {self.t[-1]!r} != {other.t[0]!r}"
            )
        return Trajectory(
            np.concatenate([self.t[:-1], other.t]),
            np.concatenate([self.x[:-1], other.x]),
            np.concatenate([self.zeta[:-1], other.zeta]),
            np.concatenate([self.u[:-1], other.u]),
            self.stats + other.stats,
        )


def _error_norm(error: np.ndarray, x: np.ndarray, x_new: np.ndarray, tol: float) -> float:
    scale = tol + tol * np.maximum(np.abs(x), np.abs(x_new))
    per_member = np.sqrt(np.mean((error / scale) ** 2, axis=-1))
    norm = float(np.max(per_member))
    return norm if math.isfinite(norm) and np.all(np.isfinite(x_new)) else math.inf


def subgrid(edges: np.ndarray, samples_per_interval: int) -> np.ndarray:
    """Output times: every edge plus q - 1 equally spaced points inside each segment."""
    q = samples_per_interval
    edges = np.asarray(edges, dtype=float)
    inner = edges[:-1, None] + np.diff(edges)[:, None] * (np.arange(1, q + 1) / q)
    inner[:, -1] = edges[1:]
    return np.concatenate([edges[:1], inner.reshape(-1)])


def integrate_segments(
    fun: Callable[[float, np.ndarray, int], np.ndarray],
    x0: np.ndarray,
    edges: np.ndarray,
    samples_per_interval: int,
    tol: float,
) -> tuple[np.ndarray, np.ndarray, IntegratorStats]:
    """Integrate segment by segment, restarting the step sequence at every edge.

    Args:
        fun: Right-hand side f(t, x, segment_index).
        x0: Initial state(s), shape (..., n).
        edges: Increasing segment boundaries, shape (S + 1,).
        samples_per_interval: Uniform output points per segment (q).
        tol: Absolute and relative local error tolerance.

    Returns:
        (t, x, stats) with t of shape (S q + 1,) and x of shape (S q + 1, ..., n).
    """
    q = samples_per_interval
    n_segments = edges.size - 1
    times = subgrid(edges, q)
    states = np.empty(times.shape + x0.shape)
    states[0] = x0
    stats = IntegratorStats()

    x = x0
    previous_norm = 1e-4
    for s in range(n_segments):
        a, b = edges[s], edges[s + 1]
        t = a
        h = (b - a) / q
        min_step = _MIN_RELATIVE_STEP * max(1.0, abs(b))
        k1 = fun(t, x, s)
        stats.evaluations += 1

        for j in range(1, q + 1):
            target = times[s * q + j]
            while t < target:
                remaining = target - t
                clipped = h >= remaining * (1 - _TIME_SLACK)
                step = remaining if clipped else h
                x_new, error, k7 = dopri5_step(lambda tt, xx: fun(tt, xx, s), t, x, step, k1)
                stats.evaluations += 6
                norm = _error_norm(error, x, x_new, tol)
                if norm <= 1.0:
                    factor = _MAX_FACTOR
                    if norm > 0:
                        factor = _SAFETY * norm ** (-_PI_ALPHA) * previous_norm**_PI_BETA
                        factor = min(_MAX_FACTOR, max(_MIN_FACTOR, factor))
                    h = max(h, step * factor) if clipped else step * factor
                    previous_norm = max(norm, 1e-4)
                    t = target if clipped else t + step
                    x, k1 = x_new, k7
                    stats.accepted += 1
                else:
                    shrink = _SAFETY * norm ** (-1 / 5) if math.isfinite(norm) else _MIN_FACTOR
                    h = step * max(_MIN_FACTOR, shrink)
                    stats.rejected += 1
                    if h < min_step:
                        raise StepSizeUnderflow(
                            f"Step size {h:.3g} underflow at t={t:.6g}; the solution is likely "
                            "blowing up"
                        )
            states[s * q + j] = x
    return times, states, stats


def _segment_edges(u: ControlSequence, t0: float, t1: float) -> np.ndarray:
    if not u.covers(t0, t1):
        raise CoverageError(
            f"Span [{t0:.6g}, {t1:.6g}] not covered by control on "
            f"[{u.t_start:.6g}, {u.t_end:.6g}]"
        )
    slack = _TIME_SLACK * max(1.0, abs(t1))
    breaks = u.breakpoints
    inner = breaks[(breaks > t0 + slack) & (breaks < t1 - slack)]
    return np.concatenate([[t0], inner, [t1]])


def _checked_span(span: tuple[float, float], tol: float, q: int) -> tuple[float, float]:
    t0, t1 = float(span[0]), float(span[1])
    if t1 < t0:
        raise ValueError(f"Integration span must be increasing, got [{t0}, {t1}]")
    if not tol > 0:
        raise ValueError(f"Integrator tolerance must be positive, got {tol}")
    if q < 1:
        raise ValueError(f"samples_per_interval must be at least 1, got {q}")
    return t0, t1


def integrate_batch(
    model: PlantModel,
    x0: ArrayLike,
    controls: np.ndarray,
    u: ControlSequence,
    span: tuple[float, float],
    tol: float = DEFAULT_INTEGRATOR_TOL,
    samples_per_interval: int = DEFAULT_SAMPLES_PER_INTERVAL,
) -> tuple[np.ndarray, np.ndarray, IntegratorStats]:
    """Integrate a batch of ZOH inputs on the grid of `u` from a common initial state.

    Args:
        model: Plant to integrate.
        x0: Shared initial state, shape (n,).
        controls: Input values for every batch member, shape (B, N, m), on the grid
            (t_start, dt) of `u`.
        u: Control sequence defining the grid (its own values are ignored).
        span: Integration interval [t0, t1] inside the coverage of `u`.
        tol: Local error tolerance.
        samples_per_interval: Output points per control interval.

    Returns:
        (t, x, stats) with x of shape (S, B, n).
    """
    t0, t1 = _checked_span(span, tol, samples_per_interval)
    controls = np.asarray(controls, dtype=float)
    x0 = model.check_state(x0)
    batch = controls.shape[0]
    if controls.shape[1:] != u.values.shape:
        raise ValueError(f"Batch controls {controls.shape} do not match grid {u.values.shape}")
    start = np.broadcast_to(x0, (batch, model.n)).copy()
    if t1 == t0:
        return np.array([t0]), start[None], IntegratorStats()

    edges = _segment_edges(u, t0, t1)
    seg_index = u.index_at(0.5 * (edges[:-1] + edges[1:]))
    seg_inputs = controls[:, seg_index]

    def rhs(_t: float, x: np.ndarray, s: int) -> np.ndarray:
        return model.rhs(x, seg_inputs[:, s])

    return integrate_segments(rhs, start, edges, samples_per_interval, tol)


def integrate(
    model: PlantModel,
    x0: ArrayLike,
    u: ControlSequence,
    span: tuple[float, float],
    tol: float = DEFAULT_INTEGRATOR_TOL,
    samples_per_interval: int = DEFAULT_SAMPLES_PER_INTERVAL,
) -> Trajectory:
    """Response of `model` from x0 under the ZOH input u on span [t0, t1]."""
    t0, t1 = _checked_span(span, tol, samples_per_interval)
    model.check_state(x0)
    if u.m != model.m:
        raise ValueError(f"Control has {u.m} channels, plant '{model.name}' has {model.m}")
    t, x, stats = integrate_batch(
        model, x0, u.values[None], u, (t0, t1), tol, samples_per_interval
    )
    x = x[:, 0]
    if t.size == 1:
        inputs = u.value_at(t)
    else:
        q = samples_per_interval
        seg_values = u.value_at(0.5 * (t[:-1:q] + t[q::q]))
        inputs = np.vstack([np.repeat(seg_values, q, axis=0), seg_values[-1:]])
    return Trajectory(t, x, model.output_chain(x), inputs, stats)
