"""Sweep the input weight lambda_u of the stage cost and record its effect on FMPC runs."""

from dataclasses import replace
from datetime import datetime
import json
from pathlib import Path

from loguru import logger
import pandas as pd
from tqdm import tqdm
import yaml

from funnel_mpc.analysis.verification import check_recursive_feasibility
from funnel_mpc.config import PARAMS_DIR, PROJ_ROOT
from funnel_mpc.control import fmpc
from funnel_mpc.schemas import InputWeightSweepSchema
from funnel_mpc.scenario import load_scenario


def load_config(config_path: Path) -> dict:
    """Load sweep configuration from YAML file."""
    with open(config_path, "r") as f:
        return yaml.safe_load(f)


def run_weight(scenario, lambda_u: float, t_end: float) -> dict:
    """Run FMPC on [t0, t_end] with the given input weight."""
    scenario = replace(scenario, fmpc=replace(scenario.fmpc, lambda_u=lambda_u))
    cfg = scenario.fmpc_config(t_end=t_end)
    model, ref = scenario.build_plant(), scenario.build_reference()
    funnel = scenario.build_funnel(cfg.t_end + cfg.horizon)
    result = fmpc.run(cfg, model, funnel, ref)
    report = check_recursive_feasibility(result, funnel, ref, cfg.eps, cfg.input_bound)
    summary = result.summary
    return {
        "lambda_u": lambda_u,
        "cost": sum(step.cost for step in result.steps),
        "input_energy": summary.input_energy,
        "max_input_norm": summary.max_input_norm,
        "iterations": summary.total_iterations,
        "feasible": report.ok,
        "max_ratios": list(summary.max_ratios),
    }


def main():
    """Input-weight sweep pipeline."""
    config = load_config(PARAMS_DIR / "sweep_input_weight.yaml")
    scenario = load_scenario(PROJ_ROOT / config["scenario"])
    weights = [float(w) for w in config["lambda_u"]]
    t_end = float(config["t_end"])
    output_dir = PROJ_ROOT / config["output_dir"]
    output_dir.mkdir(parents=True, exist_ok=True)

    logger.info(f"Sweeping lambda_u over {weights} on [{scenario.fmpc.t0}, {t_end}]")
    start_time = datetime.now()
    rows = []
    for weight in tqdm(weights, desc="lambda_u"):
        row = run_weight(scenario, weight, t_end)
        rows.append(row)
        logger.info(
            f"lambda_u={weight:g}: energy {row['input_energy']:.4g}, "
            f"max |u| {row['max_input_norm']:.4g}, {row['iterations']} iterations"
        )

    df = pd.DataFrame(rows)[list(InputWeightSweepSchema.to_schema().columns)]
    InputWeightSweepSchema.validate(df)
    results_file = output_dir / "sweep_input_weight.csv"
    df.to_csv(results_file, index=False)

    duration = (datetime.now() - start_time).total_seconds()
    summary = {
        "timestamp": start_time.isoformat(),
        "duration_seconds": duration,
        "t_end": t_end,
        "runs": rows,
        "all_feasible": all(row["feasible"] for row in rows),
    }
    # Metrics file lives next to the outputs directory to avoid DVC output conflicts
    log_file = output_dir.parent / "sweep_input_weight_log.json"
    with open(log_file, "w") as f:
        json.dump(summary, f, indent=2)

    logger.success("Input-weight sweep complete!")
    logger.info(f"Results saved to: {results_file}")
    logger.info(f"Duration: {duration:.2f} seconds")
    if not summary["all_feasible"]:
        logger.warning("At least one run violated its feasibility checks")


if __name__ == "__main__":
    main()
