import logging
import os
from pathlib import Path

from dotenv import load_dotenv
from rich import box

logger = logging.getLogger(__name__)
logger.debug("config/config.py module loaded. Initializing configuration parameters.")

# Define the absolute path to the project root directory
PROJECT_ROOT = Path(__file__).resolve().parent.parent
logger.debug("PROJECT_ROOT: %s", PROJECT_ROOT)

# Local overrides (output/log locations, console verbosity) come from .env
load_dotenv(dotenv_path=PROJECT_ROOT / ".env")

OUTPUT_DIR = Path(os.getenv("FODS_OUTPUT_DIR", PROJECT_ROOT / "runs"))
logger.debug("OUTPUT_DIR: %s", OUTPUT_DIR)
LOG_DIR = Path(os.getenv("FODS_LOG_DIR", PROJECT_ROOT / "logs"))
CONSOLE_LOG_LEVEL = os.getenv("FODS_CONSOLE_LOG_LEVEL", "WARNING").upper()
LEDGER_PATH = Path(os.getenv("FODS_LEDGER_PATH", OUTPUT_DIR / "sweep_ledger.db"))
logger.debug("LEDGER_PATH: %s", LEDGER_PATH)

BOX_STYLE = box.ROUNDED

# --- model validity ---
ALPHA_RANGE = (0.0, 2.0)  # open interval
STRICT_ALPHA = True

# --- experiment defaults (paper reproduction) ---
SAMPLE_RATE = 160.0  # Hz, P=8 steps <-> 50 ms
PREDICTION_HORIZON = 8
CONTROL_HORIZON = 4
MVAR_ORDER = 16
REGULARIZATION = 1e-6
REFERENCE_FREQUENCY = 8.0  # Hz
REFERENCE_AMPLITUDE = 1.0
OBSERVER_TARGET_RADIUS = 0.5
FEEDBACK_TARGET_RADIUS = 0.5
BLOCK_ORDER = 10
SEPARATION_TOLERANCE = 1e-8
DEFAULT_HORIZON = 160
DEFAULT_SEED = 0
logger.debug(
    "MPC defaults: P=%d M=%d p=%d lambda=%g fs=%g",
    PREDICTION_HORIZON,
    CONTROL_HORIZON,
    MVAR_ORDER,
    REGULARIZATION,
    SAMPLE_RATE,
)

# 17 significant digits round-trips every float64
TRACE_FLOAT_FORMAT = "%.17g"

# standard file names for the scenario artifacts
COEFFICIENTS_FILE_NAME = "coefficients.csv"
TRACE_FILE_NAME = "trace.csv"
TRACE_SVG_NAME = "trace.svg"
SEPARATION_REPORT_NAME = "separation_report.txt"
SEPARATION_CSV_NAME = "separation_report.csv"
CLOSED_LOOP_SUMMARY_NAME = "closedloop_summary.txt"
MPC_SUMMARY_NAME = "mpc_summary.txt"

SCENARIO_KINDS = [
    "coeffs",
    "simulate",
    "observe",
    "closedloop",
    "mpc",
    "verify-separation",
]
logger.debug("SCENARIO_KINDS defined: %s", SCENARIO_KINDS)
