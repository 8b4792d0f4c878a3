"""
Receding-horizon tracking control on a finite-memory (MVAR) approximation
of the fractional-order plant.

The predictor keeps only p lags of the memory recursion,

    x[k+1] = Σ_{j=0}^{p-1} A_j x[k-j] + B u[k],

is lifted into x̄ = free + forced·ū over the prediction horizon P, and each
solve minimises Σ_{j=1}^{P} ‖x̂[k+j|k] - x_ref[k+j]‖² + λ‖ū‖² over M moves
(moves past M hold the last one). The first M moves are applied to the true
plant, then the problem is solved again from the observer's estimates.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from config import config
from services.errors import (
    ConfigurationError,
    DegenerateProblemError,
    NumericOverflowError,
)
from services.feedback import ClosedLoopTrace
from services.frac_core import (
    CoefficientTable,
    SystemModel,
    as_state,
    build_coefficient_table,
    check_window,
    memory_sum,
)
from services.observer import EstimateHistory, ObserverGains, observer_step_memory

logger = logging.getLogger(__name__)

GRADIENT_TOLERANCE = 1e-8


@dataclass(frozen=True, eq=False)
class MvarModel:
    """First p memory matrices of a FODS and its input map."""

    coeffs: np.ndarray
    input_map: np.ndarray

    @property
    def order(self) -> int:
        return self.coeffs.shape[0]

    @property
    def n_states(self) -> int:
        return self.coeffs.shape[1]

    @property
    def n_inputs(self) -> int:
        return self.input_map.shape[1]


@dataclass(frozen=True)
class MpcConfig:
    prediction_horizon: int = config.PREDICTION_HORIZON
    control_horizon: int = config.CONTROL_HORIZON
    mvar_order: int = config.MVAR_ORDER
    regularization: float = config.REGULARIZATION
    sample_rate: float = config.SAMPLE_RATE

    def __post_init__(self):
        if self.prediction_horizon < 1:
            raise ConfigurationError(f"must be >= 1, got {self.prediction_horizon}", "mpc.prediction_horizon")
        if self.control_horizon < 1:
            raise ConfigurationError(f"must be >= 1, got {self.control_horizon}", "mpc.control_horizon")
        if self.control_horizon > self.prediction_horizon:
            raise ConfigurationError(
                f"mpc.control_horizon (M={self.control_horizon}) exceeds "
                f"mpc.prediction_horizon (P={self.prediction_horizon})",
                "mpc.control_horizon",
            )
        if self.mvar_order < 1:
            raise ConfigurationError(f"must be >= 1, got {self.mvar_order}", "mpc.mvar_order")
        if not (self.regularization >= 0 and math.isfinite(self.regularization)):
            raise ConfigurationError(f"must be finite and >= 0, got {self.regularization}", "mpc.regularization")
        if not (self.sample_rate > 0 and math.isfinite(self.sample_rate)):
            raise ConfigurationError(f"must be positive, got {self.sample_rate}", "mpc.sample_rate")


@dataclass(frozen=True, eq=False)
class ReferenceSignal:
    """Reference states x_ref[0..K], shape (K+1, n)."""

    samples: np.ndarray

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[:, np.newaxis]
        if not np.all(np.isfinite(samples)):
            raise ConfigurationError("reference samples must be finite", "reference")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.shape[0]

    def window(self, k: int, length: int) -> np.ndarray:
        """x_ref[k+1..k+length]."""
        return self.samples[k + 1 : k + 1 + length]


@dataclass(frozen=True, eq=False)
class MpcSolution:
    step: int
    moves: np.ndarray
    cost: float
    zero_cost: float
    gradient_norm: float

    @property
    def certified(self) -> bool:
        optimal = self.gradient_norm <= GRADIENT_TOLERANCE * (1.0 + self.cost)
        improves = self.cost <= self.zero_cost + 1e-12 * (1.0 + self.zero_cost)
        return bool(optimal and improves)


def mvar_truncate(table: CoefficientTable, order: int, input_map=None) -> MvarModel:
    """Keeps A_0..A_{p-1}; the input map defaults to a zero column."""
    if order < 1:
        raise ConfigurationError(f"must be >= 1, got {order}", "mpc.mvar_order")
    if table.horizon < order - 1:
        raise ConfigurationError(
            f"order {order} needs coefficient horizon {order - 1}, table has {table.horizon}",
            "mpc.mvar_order",
        )
    n = table.memory_matrices.shape[1]
    B = np.zeros((n, 1)) if input_map is None else np.asarray(input_map, dtype=float).reshape(n, -1)
    coeffs = np.array(table.memory_matrices[:order])
    coeffs.setflags(write=False)
    return MvarModel(coeffs=coeffs, input_map=B)


def predict(mvar: MvarModel, history, inputs) -> np.ndarray:
    """
    Rolls the MVAR recursion len(inputs) steps past the newest history row,
    feeding predictions back as history. Rows of history are oldest first;
    a history shorter than p is taken as the whole past.
    """
    history = np.atleast_2d(np.asarray(history, dtype=float))
    if history.size == 0:
        raise ConfigurationError("history is empty", "history")
    if history.shape[1] != mvar.n_states:
        raise ConfigurationError(
            f"history rows have {history.shape[1]} entries, model has {mvar.n_states}", "history"
        )
    u = np.asarray(inputs, dtype=float).reshape(-1, mvar.n_inputs)
    horizon = u.shape[0]
    if horizon == 0:
        return np.zeros((0, mvar.n_states))

    window = history[-mvar.order :]
    states = np.vstack([window, np.zeros((horizon, mvar.n_states))])
    newest = window.shape[0] - 1
    for h in range(horizon):
        recent = states[newest + h :: -1][: mvar.order]
        depth = recent.shape[0]
        states[newest + h + 1] = (
            np.einsum("jab,jb->a", mvar.coeffs[:depth], recent) + mvar.input_map @ u[h]
        )
    return states[newest + 1 :]


def expand_moves(moves: np.ndarray, horizon: int) -> np.ndarray:
    """M moves stretched over the prediction horizon, holding the last one."""
    held = np.repeat(moves[-1:], horizon - moves.shape[0], axis=0)
    return np.vstack([moves, held])


def condense(mvar: MvarModel, history, mpc_config: MpcConfig):
    """
    free (P·n) and forced ((P·n)×(M·p)) with stacked prediction
    x̄ = free + forced·ū; ū stacks the M moves, component-major within a move.
    """
    P, M = mpc_config.prediction_horizon, mpc_config.control_horizon
    n, p = mvar.n_states, mvar.n_inputs
    free = predict(mvar, history, np.zeros((P, p))).ravel()

    forced = np.zeros((P * n, M * p))
    quiet = np.zeros((1, n))
    for move in range(M):
        for component in range(p):
            u = np.zeros((P, p))
            if move == M - 1:
                u[move:, component] = 1.0
            else:
                u[move, component] = 1.0
            forced[:, move * p + component] = predict(mvar, quiet, u).ravel()
    return free, forced


def solve_mpc_step(mvar: MvarModel, history, ref_window, mpc_config: MpcConfig, step: int = 0) -> MpcSolution:
    """
    argmin ‖free + forced·ū - ref‖² + λ‖ū‖² as a stacked least-squares
    problem, solved through a QR factorization.
    """
    P, M = mpc_config.prediction_horizon, mpc_config.control_horizon
    ref = np.asarray(ref_window, dtype=float).reshape(-1, mvar.n_states)
    if ref.shape[0] != P:
        raise ConfigurationError(f"reference window has {ref.shape[0]} samples, P={P}", "ref_window")

    free, forced = condense(mvar, history, mpc_config)
    target = ref.ravel() - free
    if not np.all(np.isfinite(target)):
        raise NumericOverflowError(step, "prediction")
    lam = mpc_config.regularization
    unknowns = forced.shape[1]
    if lam > 0:
        system = np.vstack([forced, math.sqrt(lam) * np.eye(unknowns)])
        rhs = np.concatenate([target, np.zeros(unknowns)])
    else:
        system, rhs = forced, target

    Q, R = linalg.qr(system, mode="economic")
    pivots = np.abs(np.diag(R))
    threshold = max(system.shape) * np.finfo(float).eps * max(pivots.max(initial=0.0), 1.0)
    if pivots.size < unknowns or np.any(pivots <= threshold):
        raise DegenerateProblemError(
            f"forced response has rank below {unknowns} at step {step}; set regularization > 0"
        )
    projected = Q.T @ rhs
    if not np.all(np.isfinite(projected)):
        raise NumericOverflowError(step, "move")
    stacked = linalg.solve_triangular(R, projected)

    residual = forced @ stacked - target
    cost = float(residual @ residual + lam * stacked @ stacked)
    gradient = 2.0 * (forced.T @ residual + lam * stacked)
    solution = MpcSolution(
        step=step,
        moves=stacked.reshape(M, mvar.n_inputs),
        cost=cost,
        zero_cost=float(target @ target),
        gradient_norm=float(np.linalg.norm(gradient)),
    )
    if not solution.certified:
        logger.warning(
            "MPC solve at step %d not certified: |grad|=%.3g, cost=%.6g, J(0)=%.6g",
            step,
            solution.gradient_norm,
            solution.cost,
            solution.zero_cost,
        )
    return solution


def square_wave_reference(
    frequency: float,
    sample_rate: float,
    amplitude: float,
    steps: int,
    channels: int,
) -> ReferenceSignal:
    """
    50%-duty rectangular wave: +amplitude for the first half of each period,
    -amplitude for the second, the same on every channel. The period is
    round(fs / frequency) samples.
    """
    if not (0 < frequency < sample_rate / 2):
        raise ConfigurationError(
            f"frequency {frequency} Hz must lie in (0, fs/2 = {sample_rate / 2})", "reference.frequency"
        )
    if steps < 0 or channels < 1:
        raise ConfigurationError(f"invalid shape ({steps}, {channels})", "reference")
    period = int(round(sample_rate / frequency))
    phase = np.arange(steps) % period
    wave = np.where(phase < period / 2, amplitude, -amplitude).astype(float)
    return ReferenceSignal(np.tile(wave[:, np.newaxis], (1, channels)))


def run_mpc_closed_loop(
    plant: SystemModel,
    mpc_config: MpcConfig,
    ogains: ObserverGains,
    ref: ReferenceSignal,
    steps: int,
    x0=None,
    xhat0=None,
    memory_window: int | None = None,
) -> ClosedLoopTrace:
    """
    Every M steps solves from the observer's last p estimates, applies the M
    moves to the full-memory plant and updates the observer from y = C x.
    """
    P, M, p = mpc_config.prediction_horizon, mpc_config.control_horizon, mpc_config.mvar_order
    if steps < 1:
        raise ConfigurationError(f"must be >= 1, got {steps}", "K")
    if len(ref) < steps + P:
        raise ConfigurationError(f"reference has {len(ref)} samples, needs {steps + P}", "reference")
    if ref.samples.shape[1] != plant.n_states:
        raise ConfigurationError(
            f"reference has {ref.samples.shape[1]} channels, plant has {plant.n_states}", "reference"
        )
    ogains.check(plant)
    check_window(memory_window)

    n = plant.n_states
    table = build_coefficient_table(plant, max(steps, p - 1))
    mvar = mvar_truncate(table, p, plant.B)

    states = np.zeros((steps + 1, n))
    inputs = np.zeros((steps, plant.n_inputs))
    outputs = np.zeros((steps + 1, plant.n_outputs))
    states[0] = np.zeros(n) if x0 is None else as_state(plant, x0, "x0")
    estimates = EstimateHistory.start(plant, np.zeros(n) if xhat0 is None else xhat0)

    solutions = []
    moves = None
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            outputs[k] = plant.C @ states[k]
            if k % M == 0:
                history = estimates.as_array()[-p:]
                solution = solve_mpc_step(mvar, history, ref.window(k, P), mpc_config, step=k)
                solutions.append(solution)
                moves = solution.moves
            inputs[k] = moves[k % M]

            states[k + 1] = memory_sum(table, states[: k + 1], memory_window) + plant.B @ inputs[k]
            if not np.all(np.isfinite(states[k + 1])):
                logger.error("MPC closed loop diverged at step %d.", k + 1)
                raise NumericOverflowError(k + 1)
            estimate = observer_step_memory(
                plant, ogains, estimates, inputs[: k + 1], outputs[: k + 1], table, memory_window
            )
            if not np.all(np.isfinite(estimate)):
                logger.error("MPC observer diverged at step %d.", k + 1)
                raise NumericOverflowError(k + 1, "estimate")
            estimates.append(plant, estimate)
    outputs[steps] = plant.C @ states[steps]

    estimated = estimates.as_array()
    logger.info("MPC run finished: %d steps, %d solves.", steps, len(solutions))
    return ClosedLoopTrace(
        states=states,
        estimates=estimated,
        errors=states - estimated,
        inputs=inputs,
        outputs=outputs,
        references=ref.samples[: steps + 1],
        solutions=tuple(solutions),
    )


def tracking_rms(trace: ClosedLoopTrace) -> tuple:
    """Full-state and per-channel RMS of x[k] - x_ref[k] over k = 1..K."""
    if trace.references is None:
        raise ConfigurationError("trace has no reference", "trace")
    deviation = trace.states[1:] - trace.references[1:]
    overall = float(np.sqrt(np.mean(np.sum(deviation**2, axis=1))))
    per_channel = np.sqrt(np.mean(deviation**2, axis=0))
    return overall, per_channel


logger.debug("services/mpc.py module loaded.")
