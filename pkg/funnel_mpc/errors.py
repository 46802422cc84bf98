"""Exception hierarchy for funnel_mpc.

Every failure the library raises on purpose derives from FunnelMPCError, so callers
(the CLI in particular) can tell modelling/feasibility problems apart from bugs.
"""

from __future__ import annotations


class FunnelMPCError(Exception):
    """Base class for all funnel_mpc errors."""


class ParamViolation(FunnelMPCError, ValueError):
    """A funnel design parameter violates one of the admissibility inequalities."""

    def __init__(self, index: int, rule: str):
        self.index = index
        self.rule = rule
        super().__init__(f"Funnel parameter violation at index {index}: {rule}")


class IntegrationFailure(FunnelMPCError, RuntimeError):
    """The funnel ODE solver could not meet its tolerance."""


class OutOfHorizon(FunnelMPCError, ValueError):
    """A funnel trajectory was evaluated outside its solved time range."""


class DimensionMismatch(FunnelMPCError, ValueError):
    """Array shapes do not match the plant dimensions."""


class SingularMassMatrix(FunnelMPCError, ValueError):
    """The mass matrix of a mechanical benchmark is (numerically) singular."""


class StepSizeUnderflow(FunnelMPCError, RuntimeError):
    """The adaptive step size collapsed, usually because the solution blew up."""


class CoverageError(FunnelMPCError, ValueError):
    """An integration span is not covered by the supplied control sequence."""


class InfeasibleStart(FunnelMPCError):
    """The measured state does not lie in the epsilon-shrunken funnel set."""


class NoFeasiblePoint(FunnelMPCError):
    """The OCP solver found no finite-cost, terminal-feasible control."""

    def __init__(self, message: str, t_hat: float | None = None):
        self.t_hat = t_hat
        super().__init__(message if t_hat is None else f"{message} (t_hat={t_hat:.6g})")


class SaturatedChain(FunnelMPCError):
    """An auxiliary error reached its funnel boundary where the feedback is undefined."""

    def __init__(self, t: float, index: int):
        self.t = t
        self.index = index
        super().__init__(f"Error chain saturated at t={t:.6g}: |e_{index}| >= psi_{index}")


class ScenarioError(FunnelMPCError, ValueError):
    """A scenario document is missing, malformed, or has invalid values."""


class TraceFormatError(FunnelMPCError, ValueError):
    """A trace table cannot be read or fails its schema."""
