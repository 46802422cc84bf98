"""Tests for funnel_mpc.data.trace and funnel_mpc.schemas."""

from datetime import datetime
import json

import numpy as np
import pandas as pd
import pytest

from funnel_mpc.control.baseline import FunnelControllerConfig, run_closed_loop
from funnel_mpc.data.trace import (
    read_trace,
    trace_arrays,
    trace_frame,
    trace_shape,
    write_summary,
    write_trace,
)
from funnel_mpc.errors import TraceFormatError
from funnel_mpc.schemas import components, trace_columns, trace_schema
from funnel_mpc.simulation.integrator import Trajectory


@pytest.fixture(scope="module")
def trajectory(plant, benchmark_funnel, cosine_ref):
    cfg = FunnelControllerConfig(plant, benchmark_funnel, cosine_ref)
    return run_closed_loop(cfg, np.zeros(4), (0.0, 0.2)).trajectory


@pytest.fixture
def frame(trajectory, cosine_ref):
    return trace_frame(trajectory, cosine_ref)


class TestColumns:
    def test_scalar_output(self):
        assert trace_columns(2, 1) == [
            "t", "y", "y_ref", "y_d1", "e_1", "e_2", "psi_1", "psi_2",
            "ratio_1", "ratio_2", "u_1", "stage_cost",
        ]

    def test_vector_output(self):
        assert components("y", 2) == ["y_1", "y_2"]
        columns = trace_columns(1, 2)
        assert columns[:5] == ["t", "y_1", "y_2", "y_ref_1", "y_ref_2"]
        assert trace_shape(columns) == (1, 2)


class TestTraceFrame:
    def test_contents(self, frame, trajectory, cosine_ref):
        assert list(frame.columns) == trace_columns(2, 1)
        assert len(frame) == trajectory.n_samples
        np.testing.assert_allclose(frame["y_ref"], np.cos(trajectory.t))
        np.testing.assert_allclose(frame["e_1"], frame["y"] - frame["y_ref"])
        np.testing.assert_allclose(frame["ratio_1"], (frame["e_1"] / frame["psi_1"]) ** 2)
        np.testing.assert_allclose(frame["u_1"], trajectory.u[:, 0])

    def test_requires_error_chain(self, trajectory, cosine_ref):
        bare = Trajectory(trajectory.t, trajectory.x, trajectory.zeta, trajectory.u)
        with pytest.raises(ValueError):
            trace_frame(bare, cosine_ref)

    def test_schema_accepts(self, frame):
        trace_schema(2, 1).validate(frame)


class TestReadWrite:
    def test_exact_round_trip(self, frame, tmp_path):
        path = write_trace(frame, tmp_path / "trace.csv")
        loaded = read_trace(path)
        pd.testing.assert_frame_equal(loaded, frame, check_exact=True)

    def test_arrays(self, frame, trajectory, tmp_path):
        t, zeta, u = trace_arrays(read_trace(write_trace(frame, tmp_path / "trace.csv")))
        np.testing.assert_array_equal(t, trajectory.t)
        np.testing.assert_array_equal(zeta, trajectory.zeta)
        np.testing.assert_array_equal(u, trajectory.u)

    def test_missing_file(self, tmp_path):
        with pytest.raises(TraceFormatError):
            read_trace(tmp_path / "missing.csv")

    def test_missing_column(self, frame, tmp_path):
        path = tmp_path / "trace.csv"
        frame.drop(columns=["stage_cost"]).to_csv(path, index=False)
        with pytest.raises(TraceFormatError):
            read_trace(path)

    def test_non_positive_funnel(self, frame, tmp_path):
        path = tmp_path / "trace.csv"
        broken = frame.copy()
        broken.loc[3, "psi_2"] = -1.0
        broken.to_csv(path, index=False)
        with pytest.raises(TraceFormatError):
            read_trace(path)

    def test_time_must_increase(self, frame, tmp_path):
        path = tmp_path / "trace.csv"
        broken = frame.copy()
        broken.loc[2, "t"] = broken.loc[1, "t"]
        broken.to_csv(path, index=False)
        with pytest.raises(TraceFormatError):
            read_trace(path)

    def test_no_recognisable_columns(self, tmp_path):
        path = tmp_path / "other.csv"
        pd.DataFrame({"a": [1.0]}).to_csv(path, index=False)
        with pytest.raises(TraceFormatError):
            read_trace(path)


class TestWriteSummary:
    def test_fields(self, tmp_path):
        start = datetime.now()
        path = write_summary(
            tmp_path / "out" / "summary.json", {"max": np.float64(1.5), "v": np.arange(2)}, start
        )
        data = json.loads(path.read_text())
        assert data["timestamp"] == start.isoformat()
        assert data["duration_seconds"] >= 0
        assert data["max"] == 1.5
        assert data["v"] == [0, 1]
