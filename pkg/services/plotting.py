"""Renders a trace CSV as a time plot. Output is byte-identical across runs."""

import logging
import threading
from pathlib import Path

import matplotlib
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure

from config import config
from services.errors import ConfigurationError
from services.trace_io import read_trace

logger = logging.getLogger(__name__)

# fixed salt keeps the generated SVG element ids stable; set once, never per call
SVG_HASH_SALT = "fodsctl"
matplotlib.rcParams["svg.hashsalt"] = SVG_HASH_SALT
matplotlib.rcParams["svg.fonttype"] = "none"

# matplotlib is not thread-safe and sweeps render from worker threads
_render_lock = threading.Lock()


def default_channels(columns) -> list:
    """State and reference columns, in file order."""
    return [
        name
        for name in columns
        if (name.startswith("x") and name[1:].isdigit()) or name.startswith("ref")
    ]


def render_svg(csv_path: Path, channels=None, out_path: Path | None = None) -> Path:
    csv_path = Path(csv_path)
    frame = read_trace(csv_path)
    channels = list(channels) if channels else default_channels(frame.columns)
    unknown = [name for name in channels if name not in frame.columns]
    if unknown:
        raise ConfigurationError(
            f"unknown channels {unknown}, trace has {list(frame.columns)}", "output.channels"
        )
    out_path = Path(out_path) if out_path else csv_path.with_name(config.TRACE_SVG_NAME)

    time = frame["t"].to_numpy(dtype=float)
    with _render_lock:
        fig = Figure(figsize=(8, 4))
        FigureCanvasSVG(fig)
        ax = fig.add_subplot()
        for name in channels:
            style = "steps-post" if name.startswith("ref") else "default"
            ax.plot(time, frame[name].to_numpy(dtype=float), label=name, linewidth=1.0, drawstyle=style)
        ax.set_xlabel("time [s]")
        ax.set_ylabel("normalized amplitude")
        ax.grid(True, linewidth=0.3)
        if channels:
            ax.legend(loc="upper right")
        fig.savefig(out_path, format="svg", metadata={"Date": None})

    logger.info("Plot of %s written to %s", channels, out_path)
    return out_path


logger.debug("services/plotting.py module loaded.")
