"""CSV traces of closed-loop runs and JSON run summaries."""

from __future__ import annotations

from datetime import datetime
import json
from pathlib import Path
import re

from loguru import logger
import numpy as np
import pandas as pd
import pandera.pandas as pa

from funnel_mpc.errors import TraceFormatError
from funnel_mpc.funnel.reference import ReferenceSignal
from funnel_mpc.schemas import components, trace_columns, trace_schema
from funnel_mpc.simulation.integrator import Trajectory

# 17 significant digits round-trip every double exactly
FLOAT_FORMAT = "%.17g"


def trace_frame(trajectory: Trajectory, ref: ReferenceSignal) -> pd.DataFrame:
    """One row per sample with output chain, reference, errors, funnels, input and cost."""
    if trajectory.errors is None:
        raise ValueError("Trajectory has no error chain attached; call with_funnel first")
    errors = trajectory.errors
    r, m = errors.r, trajectory.m
    blocks = trajectory.zeta.reshape(trajectory.n_samples, r, m)

    data: dict[str, np.ndarray] = {"t": trajectory.t}
    data.update(zip(components("y", m), blocks[:, 0].T))
    data.update(zip(components("y_ref", m), ref(trajectory.t).T))
    for i in range(1, r):
        data.update(zip(components(f"y_d{i}", m), blocks[:, i].T))
    for i in range(r):
        data.update(zip(components(f"e_{i + 1}", m), errors.e[:, i].T))
    for i in range(r):
        data[f"psi_{i + 1}"] = errors.psi[:, i]
    for i in range(r):
        data[f"ratio_{i + 1}"] = errors.ratios[:, i]
    for j in range(m):
        data[f"u_{j + 1}"] = trajectory.u[:, j]
    data["stage_cost"] = trajectory.stage_cost
    return pd.DataFrame(data, columns=trace_columns(r, m))


def trace_shape(columns: list[str]) -> tuple[int, int]:
    """Infer (r, m) from trace column names."""
    r = sum(1 for c in columns if re.fullmatch(r"psi_\d+", c))
    m = sum(1 for c in columns if re.fullmatch(r"u_\d+", c))
    if r < 1 or m < 1:
        raise TraceFormatError(f"Cannot infer relative degree and width from columns {columns}")
    return r, m


def write_trace(df: pd.DataFrame, path: Path) -> Path:
    r, m = trace_shape(list(df.columns))
    trace_schema(r, m).validate(df)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Wrote trace with {len(df)} rows to {path}")
    return path


def read_trace(path: Path) -> pd.DataFrame:
    """Read and validate a trace written by `write_trace`."""
    try:
        df = pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise TraceFormatError(f"Cannot read trace {path}: {exc}") from exc
    r, m = trace_shape(list(df.columns))
    try:
        return trace_schema(r, m).validate(df)
    except (pa.errors.SchemaError, pa.errors.SchemaErrors) as exc:
        raise TraceFormatError(f"Trace {path} fails its schema: {exc}") from exc


def trace_arrays(df: pd.DataFrame) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(t, zeta, u) rebuilt from a trace; zeta has shape (S, r*m)."""
    r, m = trace_shape(list(df.columns))
    blocks = [components("y", m)] + [components(f"y_d{i}", m) for i in range(1, r)]
    zeta = np.hstack([df[cols].to_numpy(dtype=float) for cols in blocks])
    u = df[[f"u_{j}" for j in range(1, m + 1)]].to_numpy(dtype=float)
    return df["t"].to_numpy(dtype=float), zeta, u


def write_summary(path: Path, summary: dict, start_time: datetime) -> Path:
    """Write a JSON run summary stamped with start time and duration."""
    payload = {
        "timestamp": start_time.isoformat(),
        "duration_seconds": (datetime.now() - start_time).total_seconds(),
        **summary,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, default=_json_default)
    logger.info(f"Summary saved to: {path}")
    return path


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")
