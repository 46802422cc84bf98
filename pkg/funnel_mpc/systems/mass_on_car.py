"""Mass-on-car benchmark.

A car of mass m1 carries a ramp inclined at angle theta on which a second mass m2 is
coupled to the car by a spring (k) and a damper (d). The input is a force on the car,
the output is the horizontal position of the ramp mass:

    [m1 + m2        m2 cos(theta)] [z'']   [0          ]   [u]
    [m2 cos(theta)  m2           ] [s''] + [k s + d s' ] = [0]

    y = z + cos(theta) s

State ordering is (z, s, z', s'). The mass matrix is constant, so the system is
linear and its inverse is computed once.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from numpy.typing import ArrayLike

from funnel_mpc.errors import SingularMassMatrix
from funnel_mpc.systems.plant import LinearPlant

# Determinants at or below this are treated as singular
MASS_MATRIX_TOL = 1e-12


@dataclass(frozen=True)
class MassOnCarParams:
    """Physical parameters; defaults are the benchmark values."""

    m1: float = 4.0
    m2: float = 1.0
    k_spring: float = 2.0
    d_damp: float = 1.0
    theta: float = math.pi / 4

    def __post_init__(self) -> None:
        for name in ("m1", "m2", "k_spring", "d_damp"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"Mass-on-car parameter {name} must be positive, got {value}")

    @property
    def mass_matrix(self) -> np.ndarray:
        c = math.cos(self.theta)
        return np.array([[self.m1 + self.m2, self.m2 * c], [self.m2 * c, self.m2]])

    @property
    def determinant(self) -> float:
        return self.m2 * (self.m1 + self.m2 * math.sin(self.theta) ** 2)


def mass_on_car(params: MassOnCarParams | None = None) -> LinearPlant:
    """Build the mass-on-car plant (n=4, m=1, r=2)."""
    params = params or MassOnCarParams()
    det = params.determinant
    if not det > MASS_MATRIX_TOL:
        raise SingularMassMatrix(f"Mass matrix determinant {det:.3g} is not positive")
    m_inv = np.linalg.inv(params.mass_matrix)

    # Accelerations (z'', s'') = M^{-1} ((u, 0) - (0, k s + d s'))
    a = np.zeros((4, 4))
    a[0, 2] = a[1, 3] = 1.0
    a[2:, 1] = -m_inv[:, 1] * params.k_spring
    a[2:, 3] = -m_inv[:, 1] * params.d_damp
    b = np.zeros((4, 1))
    b[2:, 0] = m_inv[:, 0]
    c = np.array([[1.0, math.cos(params.theta), 0.0, 0.0]])
    return LinearPlant(a, b, c, r=2, name="mass-on-car")


def mechanical_energy(params: MassOnCarParams, x: ArrayLike) -> np.ndarray:
    """Kinetic plus spring energy, shape x.shape[:-1].

    With u = 0 its rate of change is -d s'^2, so it never increases.
    """
    x = np.asarray(x, dtype=float)
    velocity = x[..., 2:]
    kinetic = 0.5 * np.einsum("...i,ij,...j->...", velocity, params.mass_matrix, velocity)
    return kinetic + 0.5 * params.k_spring * x[..., 1] ** 2
