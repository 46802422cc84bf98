from __future__ import annotations

import pandera.pandas as pa


def components(name: str, m: int) -> list[str]:
    """Column names of an m-vector quantity: `name` for m = 1, else name_1..name_m."""
    return [name] if m == 1 else [f"{name}_{j}" for j in range(1, m + 1)]


def trace_columns(r: int, m: int) -> list[str]:
    """Ordered trace columns for relative degree r and m outputs."""
    columns = ["t", *components("y", m), *components("y_ref", m)]
    for i in range(1, r):
        columns += components(f"y_d{i}", m)
    for i in range(1, r + 1):
        columns += components(f"e_{i}", m)
    columns += [f"psi_{i}" for i in range(1, r + 1)]
    columns += [f"ratio_{i}" for i in range(1, r + 1)]
    columns += [f"u_{j}" for j in range(1, m + 1)]
    columns.append("stage_cost")
    return columns


def _strictly_increasing(series) -> bool:
    return bool((series.diff().dropna() > 0).all())


def trace_schema(r: int, m: int) -> pa.DataFrameSchema:
    """Schema of a closed-loop trace; errors past a saturated index may be NaN."""
    columns = {}
    for name in trace_columns(r, m):
        if name == "t":
            column = pa.Column(float, pa.Check(_strictly_increasing, element_wise=False))
        elif name.startswith("psi_"):
            column = pa.Column(float, pa.Check.gt(0))
        elif name.startswith("ratio_"):
            column = pa.Column(float, pa.Check.ge(0), nullable=True)
        elif name.startswith("e_") or name == "stage_cost":
            column = pa.Column(float, nullable=True)
        else:
            column = pa.Column(float)
        columns[name] = column
    return pa.DataFrameSchema(columns, strict=True, ordered=True, coerce=True)


class InputWeightSweepSchema(pa.DataFrameModel):
    lambda_u: float = pa.Field(ge=0)
    cost: float = pa.Field()
    input_energy: float = pa.Field(ge=0)
    max_input_norm: float = pa.Field(ge=0)
    iterations: int = pa.Field(ge=0)
    feasible: bool = pa.Field()

    class Config:
        strict = True
