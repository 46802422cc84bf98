"""Command-line entry point: run FMPC and the funnel controller, export and verify traces.

Exit codes: 0 success, 2 feasibility violation, 3 configuration or parse error.
"""

from __future__ import annotations

from datetime import datetime
from functools import wraps
import json
from pathlib import Path
from typing import Annotated

from loguru import logger
import numpy as np
import typer

from funnel_mpc.analysis.verification import (
    FeasibilityReport,
    check_recursive_feasibility,
    check_samples,
    compare_summaries,
)
from funnel_mpc.control import baseline, fmpc
from funnel_mpc.control.closed_loop import ClosedLoopResult
from funnel_mpc.data.trace import read_trace, trace_arrays, trace_frame, write_summary, write_trace
from funnel_mpc.errors import (
    CoverageError,
    DimensionMismatch,
    InfeasibleStart,
    NoFeasiblePoint,
    ParamViolation,
    SaturatedChain,
    ScenarioError,
    SingularMassMatrix,
    TraceFormatError,
)
from funnel_mpc.scenario import Scenario, load_scenario, scenario_to_dict

EXIT_INFEASIBLE = 2
EXIT_CONFIG = 3

FEASIBILITY_ERRORS = (InfeasibleStart, NoFeasiblePoint, SaturatedChain)
CONFIG_ERRORS = (
    ScenarioError,
    ParamViolation,
    TraceFormatError,
    DimensionMismatch,
    SingularMassMatrix,
    CoverageError,
)
CONTROLLERS = ("fmpc", "funnel-controller")

app = typer.Typer(help=__doc__, no_args_is_help=True, pretty_exceptions_enable=False)

ConfigOption = Annotated[
    Path | None, typer.Option("--config", help="Scenario file (YAML or JSON)")
]
PresetOption = Annotated[
    str | None, typer.Option("--preset", help="Built-in scenario, e.g. mass-on-car")
]
OutOption = Annotated[
    Path | None, typer.Option("--out", help="Output directory (default: scenario output.dir)")
]
TEndOption = Annotated[float | None, typer.Option("--t-end", help="Override fmpc.t_end")]


def _exit_codes(command):
    """Translate library failures into the documented exit codes."""

    @wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except FEASIBILITY_ERRORS as exc:
            typer.secho(f"Feasibility failure: {exc}", err=True, fg=typer.colors.RED)
            raise typer.Exit(EXIT_INFEASIBLE) from exc
        except CONFIG_ERRORS as exc:
            typer.secho(f"Configuration error: {exc}", err=True, fg=typer.colors.RED)
            raise typer.Exit(EXIT_CONFIG) from exc

    return wrapper


def _scenario(config: Path | None, preset: str | None, t_end: float | None) -> Scenario:
    scenario = load_scenario(config, preset)
    if t_end is not None:
        try:
            scenario.fmpc_config(t_end=t_end)
        except ValueError as exc:
            raise ScenarioError(f"Invalid --t-end {t_end}: {exc}") from exc
    return scenario


def _run_fmpc(scenario: Scenario, t_end: float | None) -> tuple[ClosedLoopResult, dict]:
    cfg = scenario.fmpc_config(t_end=t_end)
    model, ref = scenario.build_plant(), scenario.build_reference()
    funnel = scenario.build_funnel(cfg.t_end + cfg.horizon)
    result = fmpc.run(cfg, model, funnel, ref)
    report = check_recursive_feasibility(result, funnel, ref, cfg.eps, cfg.input_bound)
    return result, {"trace": trace_frame(result.trajectory, ref), "report": report}


def _run_baseline(scenario: Scenario, t_end: float | None) -> tuple[ClosedLoopResult, dict]:
    t0 = scenario.fmpc.t0
    t1 = scenario.fmpc.t_end if t_end is None else t_end
    model, ref = scenario.build_plant(), scenario.build_reference()
    funnel = scenario.build_funnel(max(t1, t0) + scenario.fmpc.horizon)
    cfg = scenario.baseline_config(model, funnel, ref)
    result = baseline.run_closed_loop(
        cfg,
        scenario.plant.x0,
        (t0, t1),
        sample_dt=scenario.baseline.sample_dt,
        tol=scenario.integrator.tol,
        samples_per_interval=scenario.integrator.samples_per_interval,
        cost_cfg=scenario.stage_cost(),
    )
    report = check_recursive_feasibility(
        result, funnel, ref, scenario.fmpc.eps, scenario.baseline.saturation
    )
    return result, {"trace": trace_frame(result.trajectory, ref), "report": report}


def _export(out: Path, name: str, run: dict) -> dict:
    path = write_trace(run["trace"], out / f"{name.replace('-', '_')}_trace.csv")
    report: FeasibilityReport = run["report"]
    return {"trace": str(path), "feasibility": report.as_dict()}


def _finish(reports: list[FeasibilityReport]) -> None:
    if all(report.ok for report in reports):
        return
    typer.secho("Feasibility violation in closed-loop run", err=True, fg=typer.colors.RED)
    raise typer.Exit(EXIT_INFEASIBLE)


@app.command("fmpc")
@_exit_codes
def fmpc_command(
    config: ConfigOption = None,
    preset: PresetOption = None,
    out: OutOption = None,
    t_end: TEndOption = None,
):
    """Run the receding-horizon Funnel MPC loop."""
    start_time = datetime.now()
    scenario = _scenario(config, preset, t_end)
    out = out or scenario.output_dir
    result, run = _run_fmpc(scenario, t_end)
    summary = {
        "scenario": scenario_to_dict(scenario),
        "fmpc": {**result.summary.as_dict(), **_export(out, "fmpc", run)},
    }
    write_summary(out / "fmpc_summary.json", summary, start_time)
    _finish([run["report"]])


@app.command("funnel-controller")
@_exit_codes
def funnel_controller_command(
    config: ConfigOption = None,
    preset: PresetOption = None,
    out: OutOption = None,
    t_end: TEndOption = None,
):
    """Run the funnel-controller baseline."""
    start_time = datetime.now()
    scenario = _scenario(config, preset, t_end)
    out = out or scenario.output_dir
    result, run = _run_baseline(scenario, t_end)
    summary = {
        "scenario": scenario_to_dict(scenario),
        "funnel_controller": {
            **result.summary.as_dict(),
            **_export(out, "funnel-controller", run),
        },
    }
    write_summary(out / "funnel_controller_summary.json", summary, start_time)
    _finish([run["report"]])


@app.command("compare")
@_exit_codes
def compare_command(
    config: ConfigOption = None,
    preset: PresetOption = None,
    out: OutOption = None,
    t_end: TEndOption = None,
):
    """Run both controllers on the same scenario and compare them."""
    start_time = datetime.now()
    scenario = _scenario(config, preset, t_end)
    out = out or scenario.output_dir
    fmpc_result, fmpc_run = _run_fmpc(scenario, t_end)
    base_result, base_run = _run_baseline(scenario, t_end)
    comparison = compare_summaries(fmpc_result.summary, base_result.summary)
    comparison["fmpc"].update(_export(out, "fmpc", fmpc_run))
    comparison["funnel_controller"].update(_export(out, "funnel-controller", base_run))
    write_summary(
        out / "compare_summary.json",
        {"scenario": scenario_to_dict(scenario), **comparison},
        start_time,
    )
    logger.info(
        f"Input energy: FMPC {fmpc_result.summary.input_energy:.4g}, "
        f"funnel controller {base_result.summary.input_energy:.4g}"
    )
    _finish([fmpc_run["report"], base_run["report"]])


def _grid_times(scenario: Scenario, t: np.ndarray) -> np.ndarray:
    delta = scenario.fmpc.delta
    n = int(np.floor((t[-1] - t[0]) / delta + 1e-9))
    return t[0] + delta * np.arange(n + 1)


@app.command("verify")
@_exit_codes
def verify_command(
    trace: Annotated[Path, typer.Argument(help="CSV trace written by a run")],
    config: ConfigOption = None,
    preset: PresetOption = None,
    controller: Annotated[
        str, typer.Option("--controller", help="Controller that produced the trace")
    ] = "fmpc",
):
    """Recompute the error chain of a trace and check it against the funnel.

    FMPC traces must stay in the eps-shrunken funnel at every receding-horizon time and
    respect the input bound; funnel-controller traces only the strict funnel bound.
    """
    if controller not in CONTROLLERS:
        raise ScenarioError(f"Unknown controller '{controller}'. Valid: {list(CONTROLLERS)}")
    scenario = load_scenario(config, preset)
    df = read_trace(trace)
    t, zeta, u = trace_arrays(df)
    if t.size == 0:
        raise TraceFormatError(f"Trace {trace} has no rows")
    ref = scenario.build_reference()
    funnel = scenario.build_funnel(float(t[-1]) + scenario.fmpc.horizon)
    if controller == "fmpc":
        report = check_samples(
            t,
            zeta,
            funnel,
            ref,
            eps=scenario.fmpc.eps,
            grid_times=_grid_times(scenario, t),
            u=u,
            input_bound=scenario.fmpc.input_bound,
        )
    else:
        report = check_samples(
            t, zeta, funnel, ref, u=u, input_bound=scenario.baseline.saturation
        )
    typer.echo(json.dumps(report.as_dict(), indent=2))
    if not report.ok:
        raise typer.Exit(EXIT_INFEASIBLE)
    logger.success(f"Trace {trace} verified: {report.checked_samples} samples")


if __name__ == "__main__":
    app()
