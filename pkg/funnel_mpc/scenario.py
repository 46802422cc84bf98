"""Scenario documents: everything a run needs, with the mass-on-car benchmark as default.

A scenario is a YAML (or JSON) mapping with the sections plant, funnel, reference,
fmpc, solver, baseline, integrator and output. Omitted keys take their defaults;
unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
import math
from pathlib import Path
from typing import Any

from loguru import logger
import yaml

from funnel_mpc.config import DEFAULT_CONTROL_DT, REPORTS_DIR
from funnel_mpc.control.baseline import FunnelControllerConfig
from funnel_mpc.control.fmpc import FmpcConfig
from funnel_mpc.control.ocp import SolverOptions
from funnel_mpc.errors import ScenarioError
from funnel_mpc.funnel.boundary import (
    FunnelParams,
    FunnelTrajectory,
    solve_funnel,
    validate_params,
)
from funnel_mpc.funnel.error_chain import StageCostConfig
from funnel_mpc.funnel.reference import ReferenceSignal, reference_by_name
from funnel_mpc.systems.plant import PlantModel
from funnel_mpc.systems.registry import plant_by_name


@dataclass(frozen=True)
class PlantSection:
    name: str = "mass-on-car"
    params: dict[str, float] = field(default_factory=dict)
    x0: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class FunnelSection:
    alpha: tuple[float, ...] = (1.5, 1.35)
    beta: tuple[float, ...] = (0.15, 0.675)
    p: tuple[float, ...] = (1.1,)
    psi0: tuple[float, ...] = (4.1, 2.0)


@dataclass(frozen=True)
class ReferenceSection:
    name: str = "cosine"
    params: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class FmpcSection:
    t0: float = 0.0
    t_end: float = 10.0
    delta: float = DEFAULT_CONTROL_DT
    horizon: float = 0.6
    input_bound: float = 15.0
    eps: tuple[float, ...] = (0.94, 0.99)
    control_dt: float = DEFAULT_CONTROL_DT
    lambda_u: float = 0.01


@dataclass(frozen=True)
class SolverSection:
    penalty_weights: tuple[float, ...] = (1e2, 1e4, 1e6)
    max_iterations: int = 500
    gradient_tol: float = 1e-8
    terminal_tol: float = 1e-9
    fd_step: float = 1e-6
    terminal_backoff: float = 1e-4


@dataclass(frozen=True)
class BaselineSection:
    sample_dt: float = DEFAULT_CONTROL_DT
    saturation: float | None = None


@dataclass(frozen=True)
class IntegratorSection:
    tol: float = 1e-8
    samples_per_interval: int = 4


@dataclass(frozen=True)
class OutputSection:
    dir: str | None = None


@dataclass(frozen=True)
class Scenario:
    plant: PlantSection = field(default_factory=PlantSection)
    funnel: FunnelSection = field(default_factory=FunnelSection)
    reference: ReferenceSection = field(default_factory=ReferenceSection)
    fmpc: FmpcSection = field(default_factory=FmpcSection)
    solver: SolverSection = field(default_factory=SolverSection)
    baseline: BaselineSection = field(default_factory=BaselineSection)
    integrator: IntegratorSection = field(default_factory=IntegratorSection)
    output: OutputSection = field(default_factory=OutputSection)

    @property
    def output_dir(self) -> Path:
        return Path(self.output.dir) if self.output.dir else REPORTS_DIR

    def funnel_params(self) -> FunnelParams:
        f = self.funnel
        return validate_params(FunnelParams(len(f.alpha), f.alpha, f.beta, f.p, f.psi0))

    def build_plant(self) -> PlantModel:
        try:
            return plant_by_name(self.plant.name, **self.plant.params)
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"Invalid plant section: {exc}") from exc

    def build_reference(self) -> ReferenceSignal:
        try:
            return reference_by_name(self.reference.name, **self.reference.params)
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"Invalid reference section: {exc}") from exc

    def build_funnel(self, horizon: float | None = None) -> FunnelTrajectory:
        """Funnel solved up to t_end + T (or `horizon`)."""
        horizon = horizon or max(self.fmpc.t_end + self.fmpc.horizon, self.fmpc.horizon)
        return solve_funnel(self.funnel_params(), horizon)

    def stage_cost(self) -> StageCostConfig:
        return StageCostConfig(self.fmpc.lambda_u)

    def solver_options(self) -> SolverOptions:
        s = self.solver
        return SolverOptions(
            penalty_weights=s.penalty_weights,
            max_iterations=s.max_iterations,
            gradient_tol=s.gradient_tol,
            terminal_tol=s.terminal_tol,
            fd_step=s.fd_step,
            terminal_backoff=s.terminal_backoff,
            integrator_tol=self.integrator.tol,
            samples_per_interval=self.integrator.samples_per_interval,
        )

    def fmpc_config(self, t_end: float | None = None) -> FmpcConfig:
        f = self.fmpc
        return FmpcConfig(
            x0=self.plant.x0,
            t0=f.t0,
            t_end=f.t_end if t_end is None else t_end,
            delta=f.delta,
            horizon=f.horizon,
            input_bound=f.input_bound,
            eps=f.eps,
            control_dt=f.control_dt,
            cost_cfg=self.stage_cost(),
            options=self.solver_options(),
        )

    def baseline_config(
        self, model: PlantModel, funnel: FunnelTrajectory, ref: ReferenceSignal
    ) -> FunnelControllerConfig:
        return FunnelControllerConfig(model, funnel, ref, self.baseline.saturation)

    def validate(self) -> Scenario:
        """Build every module-level config once so invalid values surface early.

        Funnel parameter violations propagate as ParamViolation; everything else is
        reported as ScenarioError.
        """
        params = self.funnel_params()
        model = self.build_plant()
        ref = self.build_reference()
        try:
            self.fmpc_config()
            self.baseline_config(model, solve_funnel(params, 1.0), ref)
        except ValueError as exc:
            raise ScenarioError(f"Invalid scenario: {exc}") from exc
        if len(self.plant.x0) != model.n:
            raise ScenarioError(
                f"plant.x0 has {len(self.plant.x0)} entries, plant needs {model.n}"
            )
        if len(self.fmpc.eps) != params.r:
            raise ScenarioError(f"fmpc.eps needs {params.r} values, got {len(self.fmpc.eps)}")
        if model.r != params.r:
            raise ScenarioError(
                f"Funnel has {params.r} levels, plant '{model.name}' has relative degree {model.r}"
            )
        if ref.m != model.m or ref.max_order < params.r:
            raise ScenarioError(
                f"Reference '{ref.name}' (m={ref.m}, order {ref.max_order}) does not fit a "
                f"plant with m={model.m} and relative degree {params.r}"
            )
        if not self.baseline.sample_dt > 0:
            raise ScenarioError("baseline.sample_dt must be positive")
        return self


_SECTION_TYPES = {
    "plant": PlantSection,
    "funnel": FunnelSection,
    "reference": ReferenceSection,
    "fmpc": FmpcSection,
    "solver": SolverSection,
    "baseline": BaselineSection,
    "integrator": IntegratorSection,
    "output": OutputSection,
}


def _coerce(value: Any, default: Any, key: str) -> Any:
    if isinstance(default, tuple):
        if not isinstance(value, list | tuple):
            raise ScenarioError(f"'{key}' must be a list, got {value!r}")
        return tuple(float(v) for v in value)
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ScenarioError(f"'{key}' must be a mapping, got {value!r}")
        return dict(value)
    if isinstance(default, bool) or isinstance(value, bool):
        raise ScenarioError(f"'{key}' has an unexpected boolean value")
    if isinstance(default, int):
        if isinstance(value, float) and not value.is_integer():
            raise ScenarioError(f"'{key}' must be an integer, got {value!r}")
        return int(value)
    if isinstance(default, float) or (default is None and isinstance(value, int | float)):
        value = float(value)
        if math.isnan(value):
            raise ScenarioError(f"'{key}' is NaN")
        return value
    return value


def _section(name: str, data: Any) -> Any:
    cls = _SECTION_TYPES[name]
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ScenarioError(f"Section '{name}' must be a mapping, got {type(data).__name__}")
    defaults = cls()
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ScenarioError(
            f"Unknown keys in section '{name}': {unknown}. Valid keys: {sorted(known)}"
        )
    values = {}
    for key, value in data.items():
        default = getattr(defaults, key)
        try:
            values[key] = None if value is None else _coerce(value, default, f"{name}.{key}")
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(f"Invalid value for '{name}.{key}': {value!r}") from exc
    return cls(**values)


def scenario_from_dict(data: dict[str, Any]) -> Scenario:
    """Parse a scenario mapping; raises ScenarioError on unknown keys or bad values."""
    if not isinstance(data, dict):
        raise ScenarioError(f"Scenario must be a mapping, got {type(data).__name__}")
    unknown = sorted(set(data) - set(_SECTION_TYPES))
    if unknown:
        raise ScenarioError(
            f"Unknown scenario sections: {unknown}. Valid: {sorted(_SECTION_TYPES)}"
        )
    return Scenario(**{name: _section(name, data.get(name)) for name in _SECTION_TYPES})


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, list | tuple):
        return [_plain(v) for v in value]
    return value


def scenario_to_dict(scenario: Scenario) -> dict[str, Any]:
    """Plain mapping (lists, no tuples) that parses back to an equal scenario."""
    return _plain(asdict(scenario))


PRESETS: dict[str, dict[str, Any]] = {
    "mass-on-car": {},
}


def _merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_scenario(path: Path | None = None, preset: str | None = None) -> Scenario:
    """Load a scenario from a preset, a YAML/JSON file, or a file on top of a preset."""
    if preset is None and path is None:
        preset = "mass-on-car"
    data: dict[str, Any] = {}
    if preset is not None:
        try:
            data = PRESETS[preset]
        except KeyError:
            valid = sorted(PRESETS)
            raise ScenarioError(f"Unknown preset '{preset}'. Valid presets: {valid}") from None
    if path is not None:
        try:
            with open(path) as f:
                document = yaml.safe_load(f)
        except OSError as exc:
            raise ScenarioError(f"Cannot read scenario {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ScenarioError(f"Malformed scenario {path}: {exc}") from exc
        if document is None:
            document = {}
        if not isinstance(document, dict):
            raise ScenarioError(f"Scenario {path} must contain a mapping")
        data = _merge(data, document)
        logger.info(f"Loaded scenario from {path}")
    return scenario_from_dict(data).validate()


def save_scenario(scenario: Scenario, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        yaml.safe_dump(scenario_to_dict(scenario), f, sort_keys=False)
    return path
