"""Control-affine plant interface and the linear plant family.

A plant is x' = f(x) + g(x) u, y = h(x) with relative degree r. Every function
accepts states with arbitrary leading dimensions (..., n), so whole trajectories and
batches of trajectories are evaluated in one call.
"""

from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np
from numpy.typing import ArrayLike

from funnel_mpc.errors import DimensionMismatch


class PlantModel(ABC):
    """Control-affine system with known relative degree.

    Subclasses set n, m, r and implement drift, input_map, output and output_chain.
    Plants that know their normal form also override gamma and p_drift, so that
    y^{(r)} = p_drift(x) + gamma(x) u.
    """

    name: str = "plant"
    n: int
    m: int
    r: int

    @abstractmethod
    def drift(self, x: np.ndarray) -> np.ndarray:
        """f(x), shape (..., n)."""

    @abstractmethod
    def input_map(self, x: np.ndarray) -> np.ndarray:
        """g(x), shape (..., n, m)."""

    @abstractmethod
    def output_chain(self, x: np.ndarray) -> np.ndarray:
        """chi(x) = (h, L_f h, ..., L_f^{r-1} h), shape (..., r*m)."""

    @property
    def has_normal_form(self) -> bool:
        return False

    def gamma(self, x: np.ndarray) -> np.ndarray:
        """High-frequency gain L_g L_f^{r-1} h, shape (..., m, m)."""
        raise NotImplementedError(f"Plant '{self.name}' does not provide normal-form data")

    def p_drift(self, x: np.ndarray) -> np.ndarray:
        """Drift of the r-th output derivative, shape (..., m)."""
        raise NotImplementedError(f"Plant '{self.name}' does not provide normal-form data")

    def check_state(self, x: ArrayLike) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.n:
            raise DimensionMismatch(
                f"Plant '{self.name}' expects states of size {self.n}, got shape {x.shape}"
            )
        return x

    def check_input(self, u: ArrayLike) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.ndim == 0 or u.shape[-1] != self.m:
            raise DimensionMismatch(
                f"Plant '{self.name}' expects inputs of size {self.m}, got shape {u.shape}"
            )
        return u

    def rhs(self, x: ArrayLike, u: ArrayLike) -> np.ndarray:
        """x' = f(x) + g(x) u."""
        x, u = self.check_state(x), self.check_input(u)
        return self.drift(x) + (self.input_map(x) @ u[..., None])[..., 0]

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r}, n={self.n}, m={self.m}, r={self.r})"


class LinearPlant(PlantModel):
    """x' = A x + B u, y = C x with relative degree r.

    The output chain is chi(x) = (C x, C A x, ..., C A^{r-1} x), the high-frequency
    gain is C A^{r-1} B and the normal-form drift is C A^r x. The relative degree is
    checked on construction.
    """

    def __init__(self, a: ArrayLike, b: ArrayLike, c: ArrayLike, r: int, name: str = "linear"):
        self.a = np.atleast_2d(np.asarray(a, dtype=float))
        self.b = np.atleast_2d(np.asarray(b, dtype=float))
        self.c = np.atleast_2d(np.asarray(c, dtype=float))
        self.name = name
        self.n = self.a.shape[0]
        self.m = self.b.shape[1]
        self.r = r
        if self.a.shape != (self.n, self.n) or self.b.shape[0] != self.n:
            raise DimensionMismatch(
                f"A must be n x n and B n x m, got {self.a.shape}, {self.b.shape}"
            )
        if self.c.shape != (self.m, self.n):
            raise DimensionMismatch(f"C must be m x n = {(self.m, self.n)}, got {self.c.shape}")

        powers = [np.eye(self.n)]
        for _ in range(r):
            powers.append(powers[-1] @ self.a)
        # Rows C A^i stacked, i = 0..r-1
        self._chain_matrix = np.vstack([self.c @ powers[i] for i in range(r)])
        self._drift_matrix = self.c @ powers[r]
        self._gamma = self.c @ powers[r - 1] @ self.b

        for i in range(r - 1):
            if not np.allclose(self.c @ powers[i] @ self.b, 0.0, atol=1e-12):
                raise ValueError(f"Plant '{name}' has relative degree {i + 1} < {r}")
        if abs(np.linalg.det(self._gamma)) < 1e-12:
            raise ValueError(
                f"Plant '{name}': C A^{r - 1} B is singular, relative degree is not {r}"
            )

    def drift(self, x: np.ndarray) -> np.ndarray:
        return x @ self.a.T

    def input_map(self, x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.b, np.shape(x)[:-1] + self.b.shape)

    def output_chain(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self._chain_matrix.T

    @property
    def has_normal_form(self) -> bool:
        return True

    def gamma(self, x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self._gamma, np.shape(x)[:-1] + self._gamma.shape)

    def p_drift(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self._drift_matrix.T

    def rhs(self, x: ArrayLike, u: ArrayLike) -> np.ndarray:
        x, u = self.check_state(x), self.check_input(u)
        return x @ self.a.T + u @ self.b.T
