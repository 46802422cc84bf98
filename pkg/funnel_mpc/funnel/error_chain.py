"""Auxiliary error chain, funnel stage cost and the output-derivative bound.

The auxiliary errors mix higher output derivatives with funnel-weighted lower errors:

    e_1 = zeta_1 - y_ref
    e_{i+1} = zeta_{i+1} - y_ref^{(i)} + k_i e_i,   k_i = 1 / (1 - |e_i|^2 / psi_i^2)

All functions broadcast over leading dimensions (time samples, batch members), so
the same code serves a single instant and a whole predicted trajectory.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
import math

import numpy as np
from numpy.typing import ArrayLike

from funnel_mpc.funnel.boundary import FunnelTrajectory
from funnel_mpc.funnel.reference import ReferenceSignal


@dataclass(frozen=True)
class StageCostConfig:
    """Weight of the quadratic input penalty in the stage cost."""

    lambda_u: float = 0.01

    def __post_init__(self) -> None:
        if not self.lambda_u >= 0:
            raise ValueError(f"lambda_u must be non-negative, got {self.lambda_u}")


@dataclass(frozen=True)
class ErrorChainState:
    """Auxiliary errors and gains at one or many time instants.

    Shapes: e is (..., r, m); k, ratios and psi are (..., r). Entries past the first
    saturated index (ratio >= 1) are NaN: the recursion cannot be trusted there.
    """

    t: np.ndarray
    e: np.ndarray
    k: np.ndarray
    ratios: np.ndarray
    psi: np.ndarray

    @property
    def r(self) -> int:
        return self.k.shape[-1]

    @property
    def saturated(self) -> np.ndarray | bool:
        """True where some ratio is >= 1 (or undefined because of an earlier one)."""
        flag = np.any(~(self.ratios < 1), axis=-1)
        return bool(flag) if np.ndim(flag) == 0 else flag

    @property
    def saturated_index(self) -> np.ndarray | int:
        """1-based index of the first saturated error, 0 when the chain is inside."""
        bad = ~(self.ratios < 1)
        index = np.where(bad.any(axis=-1), bad.argmax(axis=-1) + 1, 0)
        return int(index) if np.ndim(index) == 0 else index

    @property
    def error_norms(self) -> np.ndarray:
        return np.linalg.norm(self.e, axis=-1)


def chain_from_arrays(
    t: ArrayLike, zeta: np.ndarray, ref_chain: np.ndarray, psi: np.ndarray
) -> ErrorChainState:
    """Run the error recursion on precomputed funnel and reference values.

    Args:
        t: Time stamps matching the leading dimensions.
        zeta: Output chain, shape (..., r, m).
        ref_chain: Reference derivatives y_ref^{(0..r-1)}, shape (..., r, m).
        psi: Funnel values, shape (..., r).
    """
    r, m = ref_chain.shape[-2:]
    zeta = np.asarray(zeta, dtype=float)
    lead = np.broadcast_shapes(zeta.shape[:-2], ref_chain.shape[:-2], psi.shape[:-1])

    e = np.empty(lead + (r, m))
    k = np.empty(lead + (r,))
    ratios = np.empty(lead + (r,))
    with np.errstate(divide="ignore", invalid="ignore"):
        e_i = zeta[..., 0, :] - ref_chain[..., 0, :]
        for i in range(r):
            if i > 0:
                e_i = zeta[..., i, :] - ref_chain[..., i, :] + k[..., i - 1, None] * e_i
            ratio = np.sum(e_i * e_i, axis=-1) / psi[..., i] ** 2
            e[..., i, :] = e_i
            ratios[..., i] = ratio
            k[..., i] = np.where(ratio < 1, 1.0 / (1.0 - ratio), np.nan)
    psi = np.broadcast_to(psi, lead + (r,))
    return ErrorChainState(np.asarray(t, dtype=float), e, k, ratios, psi)


def chain(
    t: ArrayLike, zeta: ArrayLike, funnel: FunnelTrajectory, ref: ReferenceSignal
) -> ErrorChainState:
    """Auxiliary errors e_1..e_r and gains k_1..k_r for output chain(s) `zeta` at `t`.

    `zeta` has shape (..., r*m) with leading dimensions matching `t`.
    """
    r, m = funnel.r, ref.m
    zeta = np.asarray(zeta, dtype=float)
    zeta = zeta.reshape(zeta.shape[:-1] + (r, m))
    return chain_from_arrays(t, zeta, ref.chain(t, r), funnel.psi(t))


def stage_cost(
    state: ErrorChainState, u: ArrayLike, cfg: StageCostConfig
) -> np.ndarray | float:
    """Funnel stage cost sum_i k_i - r + lambda_u |u|^2, +inf once any |e_i| >= psi_i."""
    u = np.asarray(u, dtype=float)
    input_term = cfg.lambda_u * np.sum(u * u, axis=-1)
    with np.errstate(invalid="ignore"):
        finite = np.sum(state.k, axis=-1) - state.r + input_term
    cost = np.where(state.saturated, math.inf, finite)
    return float(cost) if np.ndim(cost) == 0 else cost


def feasibility_margins(state: ErrorChainState, eps: Sequence[float]) -> np.ndarray:
    """Margins eps_i psi_i - |e_i|, shape (..., r); NaN past a saturated index."""
    return np.asarray(eps, dtype=float) * state.psi - state.error_norms


def derivative_bound(
    funnel: FunnelTrajectory, ref: ReferenceSignal, t0: float, eps: Sequence[float]
) -> float:
    """Bound Y on |y^{(i-1)}(t)|, i = 1..r, for trajectories that stay in the funnel.

    Y_i = psi_i(t0) + psi_{i-1}(t0) / (1 - eps_{i-1}^2) + sup|y_ref^{(i-1)}| with
    psi_0 = 0 and eps_0 = 0. `eps` holds eps_1..eps_{r-1}, each in (0, 1).
    """
    r = funnel.r
    if len(eps) != r - 1:
        raise ValueError(f"derivative_bound needs r-1 = {r - 1} eps values, got {len(eps)}")
    if any(not 0 < e < 1 for e in eps):
        raise ValueError(f"eps values must lie in (0, 1), got {list(eps)}")

    psi = funnel.psi(t0)
    bounds = []
    for i in range(r):
        lower = psi[i - 1] / (1 - eps[i - 1] ** 2) if i > 0 else 0.0
        bounds.append(psi[i] + lower + ref.bounds[i])
    return float(max(bounds))
