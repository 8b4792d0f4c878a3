import textwrap

import numpy as np
import pytest

from services.frac_core import SystemModel, build_coefficient_table
from services.presets import paper_model, scalar_model


@pytest.fixture
def paper():
    return paper_model()


@pytest.fixture
def scalar():
    return scalar_model()


@pytest.fixture
def paper_table(paper):
    return build_coefficient_table(paper, 200)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def random_model(rng):
    """Three states, two inputs, two outputs, orders inside (0, 1)."""
    return SystemModel(
        A=0.05 * rng.standard_normal((3, 3)),
        B=rng.standard_normal((3, 2)),
        C=rng.standard_normal((2, 3)),
        alpha=rng.uniform(0.3, 0.9, size=3),
    )


@pytest.fixture
def write_config(tmp_path):
    """Writes a dedented TOML experiment file and returns its path."""

    def _write(text: str, name: str = "experiment.toml"):
        path = tmp_path / name
        path.write_text(textwrap.dedent(text), encoding="utf-8")
        return path

    return _write
