"""
Named models. "paper" is the 4-channel EEG model identified from one second
of normalized scalp recordings; "scalar" is the one-state worked example.
"""

import logging

import numpy as np

from services.errors import ConfigurationError
from services.frac_core import SystemModel

logger = logging.getLogger(__name__)

# identified spatial coupling, printed to four decimals
PAPER_A = (
    (0.0350, 0.0526, -0.0034, -0.0391),
    (0.0296, -0.0496, 0.0646, 0.0610),
    (-0.0103, -0.0028, -0.0091, 0.0068),
    (-0.0291, 0.0143, -0.0008, 0.0394),
)
PAPER_ALPHA = (0.5945, 0.7176, 0.9603, 0.6279)
# stimulus perturbs all channels uniformly; only the first channel is measured
PAPER_B = ((1.0,), (1.0,), (1.0,), (1.0,))
PAPER_C = ((1.0, 0.0, 0.0, 0.0),)


def paper_model() -> SystemModel:
    return SystemModel(
        A=np.array(PAPER_A),
        B=np.array(PAPER_B),
        C=np.array(PAPER_C),
        alpha=np.array(PAPER_ALPHA),
    )


def scalar_model() -> SystemModel:
    """A = [0], α = [0.5], B = C = [1]."""
    return SystemModel(A=[[0.0]], B=[[1.0]], C=[[1.0]], alpha=[0.5])


PRESETS = {
    "paper": paper_model,
    "scalar": scalar_model,
}


def load_preset(name: str) -> SystemModel:
    builder = PRESETS.get(name)
    if builder is None:
        raise ConfigurationError(
            f"unknown preset '{name}', choose from {sorted(PRESETS)}", "model.preset"
        )
    logger.debug("Loading preset model '%s'.", name)
    return builder()


logger.debug("services/presets.py module loaded.")
