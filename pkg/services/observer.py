"""
Luenberger-like state estimators for fractional-order systems.

The observer is a copy of the plant's full-memory dynamics plus an
innovation term:

    x̂[k+1] = Σ_j A_j x̂[k-j] + B u[k] + L (y[k] - ŷ[k])                  (single gain)
    x̂[k+1] = Σ_j A_j x̂[k-j] + B u[k] + Σ_j L_j (y[k-j] - ŷ[k-j])         (memory gains)

with ŷ[k] = C x̂[k]. The error e = x - x̂ then evolves autonomously,
independent of any input or feedback.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from config import config
from services import placement
from services.errors import ConfigurationError
from services.frac_core import (
    CoefficientTable,
    SystemModel,
    ensure_table,
    memory_sum,
    check_window,
    as_state,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ObserverGains:
    """Innovation gains L_0..L_J, shape (J+1, n, m); taps past J are zero."""

    gains: np.ndarray

    def __post_init__(self):
        gains = np.array(self.gains, dtype=float)
        if gains.ndim == 2:
            gains = gains[np.newaxis]
        if gains.ndim != 3 or gains.shape[0] == 0:
            raise ConfigurationError(f"expected a stack of n×m gains, got shape {gains.shape}", "observer.gains")
        if not np.all(np.isfinite(gains)):
            raise ConfigurationError("gains must be finite", "observer.gains")
        gains.setflags(write=False)
        object.__setattr__(self, "gains", gains)

    @classmethod
    def single(cls, L) -> "ObserverGains":
        return cls(np.atleast_2d(np.asarray(L, dtype=float)))

    @classmethod
    def zeros(cls, model: SystemModel) -> "ObserverGains":
        return cls(np.zeros((1, model.n_states, model.n_outputs)))

    @property
    def depth(self) -> int:
        return self.gains.shape[0]

    @property
    def leading(self) -> np.ndarray:
        return self.gains[0]

    def tap(self, j: int) -> np.ndarray:
        if j < self.depth:
            return self.gains[j]
        return np.zeros(self.gains.shape[1:])

    def check(self, model: SystemModel):
        expected = (model.n_states, model.n_outputs)
        if self.gains.shape[1:] != expected:
            raise ConfigurationError(
                f"gains are {self.gains.shape[1:]}, model needs {expected}", "observer.gains"
            )


@dataclass
class EstimateHistory:
    """Estimates x̂[0..k] and their predicted outputs ŷ[k] = C x̂[k]."""

    estimates: list = field(default_factory=list)
    predicted_outputs: list = field(default_factory=list)

    @classmethod
    def start(cls, model: SystemModel, xhat0) -> "EstimateHistory":
        history = cls()
        history.append(model, as_state(model, xhat0, "xhat0"))
        return history

    def append(self, model: SystemModel, estimate: np.ndarray):
        self.estimates.append(np.asarray(estimate, dtype=float))
        self.predicted_outputs.append(model.C @ self.estimates[-1])

    def __len__(self):
        return len(self.estimates)

    def as_array(self) -> np.ndarray:
        return np.vstack(self.estimates)

    def outputs_array(self) -> np.ndarray:
        return np.vstack(self.predicted_outputs)


@dataclass(frozen=True, eq=False)
class ErrorTrajectory:
    """Estimation errors e[0..K], shape (K+1, n)."""

    errors: np.ndarray

    @property
    def steps(self) -> int:
        return self.errors.shape[0] - 1


def _measurement(model: SystemModel, y) -> np.ndarray:
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != model.n_outputs:
        raise ConfigurationError(
            f"measurement has {y.shape[0]} entries, C produces {model.n_outputs}", "y"
        )
    return y


def _input(model: SystemModel, u) -> np.ndarray:
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.shape[0] != model.n_inputs:
        raise ConfigurationError(f"input has {u.shape[0]} entries, B takes {model.n_inputs}", "u")
    return u


def _copy_of_plant(model, est_history, u, table, memory_window):
    if len(est_history) == 0:
        raise ConfigurationError("estimate history is empty", "est_history")
    check_window(memory_window)
    history = est_history.as_array()
    table = ensure_table(model, table, history.shape[0] - 1)
    return memory_sum(table, history, memory_window) + model.B @ _input(model, u)


def observer_step(
    model: SystemModel,
    gains: ObserverGains,
    est_history: EstimateHistory,
    u,
    y,
    table: CoefficientTable | None = None,
    memory_window: int | None = None,
) -> np.ndarray:
    """x̂[k+1] from the single gain L = gains[0] and the current measurement y[k]."""
    gains.check(model)
    y = _measurement(model, y)
    prediction = _copy_of_plant(model, est_history, u, table, memory_window)
    innovation = y - est_history.predicted_outputs[-1]
    return prediction + gains.leading @ innovation


def observer_step_memory(
    model: SystemModel,
    gains: ObserverGains,
    est_history: EstimateHistory,
    input_history,
    output_history,
    table: CoefficientTable | None = None,
    memory_window: int | None = None,
) -> np.ndarray:
    """
    x̂[k+1] with innovations weighted over the output history.

    Gains beyond the supplied list count as zero, so a one-entry list
    reproduces observer_step exactly.
    """
    gains.check(model)
    k = len(est_history) - 1
    outputs = np.asarray(output_history, dtype=float).reshape(-1, model.n_outputs)
    inputs = np.asarray(input_history, dtype=float).reshape(-1, model.n_inputs)
    if outputs.shape[0] < k + 1:
        raise ConfigurationError(
            f"output history covers {outputs.shape[0]} steps, need {k + 1}", "output_history"
        )
    if inputs.shape[0] < k + 1:
        raise ConfigurationError(
            f"input history covers {inputs.shape[0]} steps, need {k + 1}", "input_history"
        )

    prediction = _copy_of_plant(model, est_history, inputs[k], table, memory_window)
    taps = min(gains.depth, k + 1)
    predicted = est_history.predicted_outputs
    innovation_sum = gains.leading @ (outputs[k] - predicted[k])
    for j in range(1, taps):
        innovation_sum = innovation_sum + gains.gains[j] @ (outputs[k - j] - predicted[k - j])
    return prediction + innovation_sum


def design_observer_gain(
    table: CoefficientTable,
    C,
    target_radius: float = config.OBSERVER_TARGET_RADIUS,
) -> np.ndarray:
    """
    L with ρ(A_0 - L C) ≤ target_radius, by placement on the transposed pair.

    Raises DesignError naming the unobservable modes left outside the radius.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    A0 = table.memory_matrix(0)
    if C.shape[1] != A0.shape[0]:
        raise ConfigurationError(f"C has {C.shape[1]} columns, A_0 is {A0.shape}", "C")
    transposed = placement.place_closed_loop(A0.T, C.T, target_radius, kind="undetectable")
    return -transposed.T


def error_trajectory(
    model: SystemModel,
    gains: ObserverGains,
    e0,
    steps: int,
    table: CoefficientTable | None = None,
    memory_window: int | None = None,
) -> ErrorTrajectory:
    """
    Autonomous error recursion e[k+1] = Σ_j A_j e[k-j] - Σ_j L_j C e[k-j].

    For a single gain this is e[k+1] = Σ_j A_j e[k-j] - L C e[k]; no input or
    feedback term appears.
    """
    if steps < 0:
        raise ConfigurationError(f"must be >= 0, got {steps}", "K")
    gains.check(model)
    check_window(memory_window)
    table = ensure_table(model, table, steps - 1)
    output_gains = gains.gains @ model.C  # L_j C

    errors = np.zeros((steps + 1, model.n_states))
    errors[0] = as_state(model, e0, "e0")
    for k in range(steps):
        history = errors[: k + 1]
        taps = min(gains.depth, k + 1)
        correction = np.einsum("jab,jb->a", output_gains[:taps], history[::-1][:taps])
        errors[k + 1] = memory_sum(table, history, memory_window) - correction
    return ErrorTrajectory(errors=errors)


def validate_observer_decay(
    model: SystemModel,
    gains: ObserverGains,
    steps: int,
    e0=None,
) -> bool:
    """
    Empirical stability check: the simulated error norm at K must end below
    its initial norm. Only structural separation is available analytically,
    so gains are accepted on this evidence.
    """
    if e0 is None:
        e0 = np.ones(model.n_states)
    trajectory = error_trajectory(model, gains, e0, steps)
    start = np.linalg.norm(trajectory.errors[0])
    end = np.linalg.norm(trajectory.errors[-1])
    decays = bool(end < start)
    if decays:
        logger.info("Observer error decays: |e[0]|=%.3g, |e[%d]|=%.3g", start, steps, end)
    else:
        logger.warning("Observer error does not decay: |e[0]|=%.3g, |e[%d]|=%.3g", start, steps, end)
    return decays


logger.debug("services/observer.py module loaded.")
