"""Reference signals and their derivatives.

A reference carries closed-form derivatives up to a fixed order together with
sup-norm bounds per order, so no numerical differentiation is ever needed.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass
import math

import numpy as np
from numpy.polynomial import polynomial as P
from numpy.typing import ArrayLike


@dataclass(frozen=True)
class ReferenceSignal:
    """A reference y_ref with derivatives y_ref^{(i)}, i = 0..max_order."""

    name: str
    m: int
    max_order: int
    bounds: tuple[float, ...]  # sup-norm of each derivative order, len max_order + 1
    derivative_fn: Callable[[np.ndarray, int], np.ndarray]

    @property
    def bound(self) -> float:
        """Common bound K with sup |y_ref^{(i)}| <= K for all orders."""
        return max(self.bounds)

    def __call__(self, t: ArrayLike, order: int = 0) -> np.ndarray:
        """Evaluate y_ref^{(order)}(t), shape `t.shape + (m,)`."""
        if not 0 <= order <= self.max_order:
            raise ValueError(
                f"Reference '{self.name}' provides derivatives up to order {self.max_order}, "
                f"requested {order}"
            )
        return self.derivative_fn(np.asarray(t, dtype=float), order)

    def chain(self, t: ArrayLike, r: int) -> np.ndarray:
        """Stack y_ref^{(0)}..y_ref^{(r-1)}, shape `t.shape + (r, m)`."""
        return np.stack([self(t, i) for i in range(r)], axis=-2)

    def __str__(self) -> str:
        return f"{self.name} (m={self.m})"


def cosine_reference(
    amplitude: float = 1.0, frequency: float = 1.0, phase: float = 0.0, max_order: int = 4
) -> ReferenceSignal:
    """y_ref(t) = amplitude * cos(frequency * t + phase), scalar output."""

    def derivative(t: np.ndarray, order: int) -> np.ndarray:
        # d^k/dt^k cos(wt + c) = w^k cos(wt + c + k pi/2)
        value = amplitude * frequency**order * np.cos(frequency * t + phase + order * math.pi / 2)
        return np.asarray(value)[..., None]

    bounds = tuple(abs(amplitude) * abs(frequency) ** k for k in range(max_order + 1))
    return ReferenceSignal("cosine", 1, max_order, bounds, derivative)


def constant_reference(value: Sequence[float] | float, max_order: int = 4) -> ReferenceSignal:
    """A constant reference; all derivatives vanish."""
    level = np.atleast_1d(np.asarray(value, dtype=float))

    def derivative(t: np.ndarray, order: int) -> np.ndarray:
        base = level if order == 0 else np.zeros_like(level)
        return np.broadcast_to(base, t.shape + level.shape).copy()

    bounds = (float(np.linalg.norm(level)),) + (0.0,) * max_order
    return ReferenceSignal("constant", level.size, max_order, bounds, derivative)


def polynomial_reference(coefficients: Sequence[float], max_order: int = 4) -> ReferenceSignal:
    """Scalar polynomial reference sum_k c_k t^k (increasing powers).

    Non-constant polynomials are unbounded on [0, inf), so their bounds are inf for
    every order whose derivative is not constant.
    """
    coefs = np.asarray(coefficients, dtype=float)

    def derivative(t: np.ndarray, order: int) -> np.ndarray:
        return np.asarray(P.polyval(t, P.polyder(coefs, order) if order else coefs))[..., None]

    bounds = []
    for k in range(max_order + 1):
        d = P.polytrim(P.polyder(coefs, k) if k else coefs)
        bounds.append(abs(float(d[0])) if d.size == 1 else math.inf)
    return ReferenceSignal("polynomial", 1, max_order, tuple(bounds), derivative)


REFERENCES: dict[str, Callable[..., ReferenceSignal]] = {
    "cosine": cosine_reference,
    "constant": constant_reference,
    "polynomial": polynomial_reference,
}


def reference_by_name(name: str, **params) -> ReferenceSignal:
    """Build a registered reference (e.g., 'cosine') from keyword parameters."""
    try:
        factory = REFERENCES[name]
    except KeyError:
        valid = sorted(REFERENCES)
        raise KeyError(f"Unknown reference '{name}'. Valid references: {valid}") from None
    return factory(**params)
