"""
Trace CSV schema: a header row, then one row per step k = 0..K with

    k, t, x1..xn, [xhat1..xhatn], u | u1..up, y | y1..ym, [ref1..refn]

t = k / fs in seconds. Signals a scenario does not produce are left out as
whole columns. Inputs exist for k < K only; the final row carries 0 (no
move is applied at the last step). Floats are written with 17 significant
digits so a re-read reproduces the arrays exactly.
"""

import logging
from pathlib import Path

import numpy as np
import pandas as pd

from config import config
from services.errors import ConfigurationError
from services.feedback import ClosedLoopTrace
from services.frac_core import Trajectory

logger = logging.getLogger(__name__)


def _names(prefix: str, count: int, collapse: bool = False) -> list:
    if collapse and count == 1:
        return [prefix]
    return [f"{prefix}{i}" for i in range(1, count + 1)]


def _padded_inputs(inputs: np.ndarray) -> np.ndarray:
    return np.vstack([inputs, np.zeros((1, inputs.shape[1]))])


def build_frame(
    states: np.ndarray,
    inputs: np.ndarray,
    outputs: np.ndarray,
    sample_rate: float,
    estimates: np.ndarray | None = None,
    references: np.ndarray | None = None,
) -> pd.DataFrame:
    rows = states.shape[0]
    columns = {"k": np.arange(rows), "t": np.arange(rows) / sample_rate}
    blocks = [(_names("x", states.shape[1]), states)]
    if estimates is not None:
        blocks.append((_names("xhat", estimates.shape[1]), estimates))
    blocks.append((_names("u", inputs.shape[1], collapse=True), _padded_inputs(inputs)))
    blocks.append((_names("y", outputs.shape[1], collapse=True), outputs))
    if references is not None:
        blocks.append((_names("ref", references.shape[1]), references[:rows]))
    for names, values in blocks:
        for index, name in enumerate(names):
            columns[name] = values[:, index]
    return pd.DataFrame(columns)


def trajectory_frame(trajectory: Trajectory, model, sample_rate: float) -> pd.DataFrame:
    outputs = trajectory.outputs
    if outputs is None:
        outputs = trajectory.states @ model.C.T
    return build_frame(trajectory.states, trajectory.inputs, outputs, sample_rate)


def closed_loop_frame(trace: ClosedLoopTrace, sample_rate: float) -> pd.DataFrame:
    return build_frame(
        trace.states,
        trace.inputs,
        trace.outputs,
        sample_rate,
        estimates=trace.estimates,
        references=trace.references,
    )


def write_trace(frame: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=config.TRACE_FLOAT_FORMAT, lineterminator="\n")
    logger.info("Trace with %d rows written to %s", len(frame), path)
    return path


def read_trace(path: Path) -> pd.DataFrame:
    """Reads a trace CSV, rejecting files that do not follow the schema."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ConfigurationError(f"malformed trace CSV: {exc}", str(path)) from exc
    missing = [name for name in ("k", "t") if name not in frame.columns]
    if missing or not any(name.startswith("x") and name[1:].isdigit() for name in frame.columns):
        raise ConfigurationError(f"trace CSV lacks columns {missing or ['x1']}", str(path))
    return frame


def _block(frame: pd.DataFrame, prefix: str) -> np.ndarray | None:
    names = [c for c in frame.columns if c == prefix or (c.startswith(prefix) and c[len(prefix):].isdigit())]
    if not names:
        return None
    names.sort(key=lambda c: int(c[len(prefix):] or 1))
    return frame[names].to_numpy(dtype=float)


def trajectory_from_frame(frame: pd.DataFrame) -> Trajectory:
    """Inverse of trajectory_frame."""
    states = _block(frame, "x")
    inputs = _block(frame, "u")
    outputs = _block(frame, "y")
    return Trajectory(states=states, inputs=inputs[:-1], outputs=outputs)


def closed_loop_from_frame(frame: pd.DataFrame) -> ClosedLoopTrace:
    """Inverse of closed_loop_frame."""
    states = _block(frame, "x")
    estimates = _block(frame, "xhat")
    return ClosedLoopTrace(
        states=states,
        estimates=estimates,
        errors=states - estimates,
        inputs=_block(frame, "u")[:-1],
        outputs=_block(frame, "y"),
        references=_block(frame, "ref"),
    )


logger.debug("services/trace_io.py module loaded.")
