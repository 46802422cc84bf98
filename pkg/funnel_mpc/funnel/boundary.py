"""Performance funnel boundaries psi_1..psi_r.

The funnels solve a triangular linear ODE cascade

    psi_i' = -alpha_i psi_i + beta_i + p_i (psi_{i+1} - beta_{i+1}/alpha_{i+1}),  i < r
    psi_r' = -alpha_r psi_r + beta_r

Internally the cascade is integrated in deviation coordinates
phi_i = psi_i - beta_i/alpha_i, where it reads phi' = A phi with A upper bidiagonal.
This keeps the relative error control meaningful as psi_i approaches its floor.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

from loguru import logger
import numpy as np
from numpy.typing import ArrayLike
from scipy.integrate import OdeSolution, solve_ivp

from funnel_mpc.errors import IntegrationFailure, OutOfHorizon, ParamViolation

FUNNEL_RTOL = 1e-10
FUNNEL_ATOL = 1e-10
DEFAULT_CHUNK_LENGTH = 10.0

# Relative slack when comparing a query time to the solved horizon
_HORIZON_SLACK = 1e-12

# Strict parameter inequalities must hold by more than a few ulps
_STRICT_ULPS = 4


def _strictly_greater(a: float, b: float) -> bool:
    return a - b > _STRICT_ULPS * np.finfo(float).eps * max(1.0, abs(b))


@dataclass(frozen=True)
class FunnelParams:
    """Design parameters of the funnel cascade (not validated on construction)."""

    r: int
    alpha: tuple[float, ...]
    beta: tuple[float, ...]
    p: tuple[float, ...]
    psi0: tuple[float, ...]

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "p", "psi0"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))

    @property
    def floor(self) -> np.ndarray:
        """Asymptotic values beta_i/alpha_i, which every psi_i stays strictly above."""
        return np.asarray(self.beta) / np.asarray(self.alpha)

    @property
    def cascade_matrix(self) -> np.ndarray:
        """Matrix A of the deviation dynamics phi' = A phi."""
        a = np.diag(-np.asarray(self.alpha))
        if self.r > 1:
            a += np.diag(np.asarray(self.p), k=1)
        return a


def validate_params(candidate: FunnelParams) -> FunnelParams:
    """Return `candidate` unchanged if every admissibility inequality holds.

    Checks, in order: alpha_1 > ... > alpha_r > 0, p_i > 1, beta_i > 0 and
    psi0_i > beta_i/alpha_i. Indices in the raised ParamViolation are 1-based;
    index 0 flags a structural problem (r or vector lengths).
    """
    r = candidate.r
    if not isinstance(r, int) or isinstance(r, bool) or r < 1:
        raise ParamViolation(0, f"r must be a positive integer, got {r!r}")

    expected = {"alpha": r, "beta": r, "p": r - 1, "psi0": r}
    for name, length in expected.items():
        actual = len(getattr(candidate, name))
        if actual != length:
            raise ParamViolation(0, f"{name} must have length {length}, got {actual}")

    alpha, beta, p, psi0 = candidate.alpha, candidate.beta, candidate.p, candidate.psi0
    for i in range(r - 1):
        if not _strictly_greater(alpha[i], alpha[i + 1]):
            raise ParamViolation(i + 1, f"alpha_{i + 1} > alpha_{i + 2} fails")
    if not alpha[-1] > 0:
        raise ParamViolation(r, f"alpha_{r} > 0 fails")
    for i in range(r - 1):
        if not p[i] > 1:
            raise ParamViolation(i + 1, f"p_{i + 1} > 1 fails")
    for i in range(r):
        if not (beta[i] > 0 and math.isfinite(beta[i])):
            raise ParamViolation(i + 1, f"beta_{i + 1} > 0 fails")
    for i in range(r):
        floor = beta[i] / alpha[i]
        if not _strictly_greater(psi0[i], floor):
            raise ParamViolation(
                i + 1, f"psi0_{i + 1} > beta_{i + 1}/alpha_{i + 1} = {floor:.6g} fails"
            )
    return candidate


def _solve_chunk(
    params: FunnelParams, phi_start: np.ndarray, t_from: float, t_to: float
) -> OdeSolution:
    a = params.cascade_matrix
    sol = solve_ivp(
        lambda _t, phi: a @ phi,
        (t_from, t_to),
        phi_start,
        method="DOP853",
        rtol=FUNNEL_RTOL,
        atol=FUNNEL_ATOL,
        dense_output=True,
    )
    if not sol.success:
        raise IntegrationFailure(
            f"Funnel cascade integration failed on [{t_from}, {t_to}]: {sol.message}"
        )
    logger.debug(f"Solved funnel chunk [{t_from:g}, {t_to:g}] in {sol.t.size - 1} steps")
    return sol.sol


@dataclass(frozen=True)
class FunnelTrajectory:
    """Dense solution of the funnel cascade on [0, horizon].

    Immutable: extending the solved range returns a new trajectory that shares the
    already-solved chunks.
    """

    params: FunnelParams
    horizon: float
    chunk_starts: tuple[float, ...]
    chunks: tuple[OdeSolution, ...]

    @property
    def r(self) -> int:
        return self.params.r

    def _phi(self, t: np.ndarray) -> np.ndarray:
        flat = t.reshape(-1)
        out = np.empty((flat.size, self.r))
        idx = np.searchsorted(self.chunk_starts, flat, side="right") - 1
        idx = np.clip(idx, 0, len(self.chunks) - 1)
        for chunk in np.unique(idx):
            mask = idx == chunk
            out[mask] = np.atleast_2d(self.chunks[chunk](flat[mask])).T.reshape(-1, self.r)
        return out.reshape(t.shape + (self.r,))

    def _checked_times(self, t: ArrayLike) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if t.size and (t.min() < 0 or t.max() > self.horizon * (1 + _HORIZON_SLACK)):
            raise OutOfHorizon(
                f"Funnel evaluated at t in [{t.min():.6g}, {t.max():.6g}] "
                f"but only solved on [0, {self.horizon:.6g}]"
            )
        return t

    def psi(self, t: ArrayLike) -> np.ndarray:
        """Funnel values, shape `t.shape + (r,)`."""
        t = self._checked_times(t)
        return self._phi(t) + self.params.floor

    def psi_dot(self, t: ArrayLike) -> np.ndarray:
        """Funnel derivatives from the cascade right-hand side, shape `t.shape + (r,)`."""
        t = self._checked_times(t)
        return self._phi(t) @ self.params.cascade_matrix.T

    def evaluate(self, t: ArrayLike) -> tuple[np.ndarray, np.ndarray]:
        """Return (psi(t), psi_dot(t)), each of shape `t.shape + (r,)`."""
        t = self._checked_times(t)
        phi = self._phi(t)
        return phi + self.params.floor, phi @ self.params.cascade_matrix.T

    def extended_to(
        self, horizon: float, chunk_length: float = DEFAULT_CHUNK_LENGTH
    ) -> FunnelTrajectory:
        """Return a trajectory solved at least up to `horizon`."""
        if horizon <= self.horizon:
            return self
        starts = list(self.chunk_starts)
        chunks = list(self.chunks)
        t_from = self.horizon
        phi = np.asarray(chunks[-1](t_from), dtype=float)
        while t_from < horizon:
            t_to = min(t_from + chunk_length, horizon)
            chunks.append(_solve_chunk(self.params, phi, t_from, t_to))
            starts.append(t_from)
            phi = np.asarray(chunks[-1](t_to), dtype=float)
            t_from = t_to
        return FunnelTrajectory(self.params, float(horizon), tuple(starts), tuple(chunks))


def solve_funnel(
    params: FunnelParams, horizon: float, chunk_length: float = DEFAULT_CHUNK_LENGTH
) -> FunnelTrajectory:
    """Solve the funnel cascade on [0, horizon] in chunks of `chunk_length`."""
    validate_params(params)
    if not horizon > 0:
        raise ValueError(f"Funnel horizon must be positive, got {horizon}")

    phi0 = np.asarray(params.psi0) - params.floor
    first_to = min(chunk_length, horizon)
    trajectory = FunnelTrajectory(
        params, first_to, (0.0,), (_solve_chunk(params, phi0, 0.0, first_to),)
    )
    return trajectory.extended_to(horizon, chunk_length)


def analytic_cascade(params: FunnelParams, t: ArrayLike) -> np.ndarray:
    """Closed-form funnel values for r = 1 or r = 2, shape `t.shape + (r,)`.

    For r = 2 the first funnel follows from variation of constants:
        phi_1(t) = phi_1(0) e^{-a1 t} + p_1 phi_2(0) (e^{-a2 t} - e^{-a1 t}) / (a1 - a2)
    """
    t = np.asarray(t, dtype=float)
    floor = params.floor
    phi0 = np.asarray(params.psi0) - floor
    if params.r == 1:
        return (phi0[0] * np.exp(-params.alpha[0] * t) + floor[0])[..., None]
    if params.r == 2:
        a1, a2 = params.alpha
        decay1, decay2 = np.exp(-a1 * t), np.exp(-a2 * t)
        phi2 = phi0[1] * decay2
        phi1 = phi0[0] * decay1 + params.p[0] * phi0[1] * (decay2 - decay1) / (a1 - a2)
        return np.stack([phi1 + floor[0], phi2 + floor[1]], axis=-1)
    raise ValueError(f"Analytic cascade is only available for r <= 2, got r={params.r}")
