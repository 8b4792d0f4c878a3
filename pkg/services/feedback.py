"""
Memory state feedback, coupled plant/observer simulation and the finite
block-Toeplitz check of the separation structure.

With u[k] = Σ_j F_j x̂[k-j] the plant and the estimation error obey

    x[k+1] = Σ_j (A_j + B F_j) x[k-j] - Σ_j B F_j e[k-j]
    e[k+1] = Σ_j A_j e[k-j] - L C e[k]

Stacking N steps of both gives the block upper-triangular matrix
[[J1, J2], [0, J3]], whose spectrum is the union of the controller block J1
and the observer block J3.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from config import config
from services import placement
from services.errors import ConfigurationError, NumericError, NumericOverflowError
from services.frac_core import (
    CoefficientTable,
    SystemModel,
    as_state,
    build_coefficient_table,
    check_window,
    ensure_table,
    memory_sum,
)
from services.observer import (
    EstimateHistory,
    ObserverGains,
    error_trajectory,
    observer_step_memory,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FeedbackGains:
    """Feedback taps F_0..F_J, shape (J+1, p, n); taps past J are zero."""

    gains: np.ndarray

    def __post_init__(self):
        gains = np.array(self.gains, dtype=float)
        if gains.ndim == 2:
            gains = gains[np.newaxis]
        if gains.ndim != 3 or gains.shape[0] == 0:
            raise ConfigurationError(f"expected a stack of p×n gains, got shape {gains.shape}", "feedback.gains")
        if not np.all(np.isfinite(gains)):
            raise ConfigurationError("gains must be finite", "feedback.gains")
        gains.setflags(write=False)
        object.__setattr__(self, "gains", gains)

    @classmethod
    def single(cls, F) -> "FeedbackGains":
        return cls(np.atleast_2d(np.asarray(F, dtype=float)))

    @classmethod
    def zeros(cls, model: SystemModel) -> "FeedbackGains":
        return cls(np.zeros((1, model.n_inputs, model.n_states)))

    @property
    def depth(self) -> int:
        return self.gains.shape[0]

    def tap(self, j: int) -> np.ndarray:
        if j < self.depth:
            return self.gains[j]
        return np.zeros(self.gains.shape[1:])

    def check(self, model: SystemModel):
        expected = (model.n_inputs, model.n_states)
        if self.gains.shape[1:] != expected:
            raise ConfigurationError(
                f"gains are {self.gains.shape[1:]}, model needs {expected}", "feedback.gains"
            )


@dataclass(frozen=True, eq=False)
class ClosedLoopTrace:
    """
    Coupled plant/observer signals.

    states, estimates, errors and outputs have K+1 rows, inputs K rows.
    references and solutions are filled by receding-horizon runs only.
    """

    states: np.ndarray
    estimates: np.ndarray
    errors: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray
    references: np.ndarray | None = None
    solutions: tuple = field(default=(), repr=False)

    @property
    def steps(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True, eq=False)
class TruncationBlocks:
    """N-block truncations of J1, J2, J3 and the assembled 2Nn×2Nn matrix."""

    j1: np.ndarray
    j2: np.ndarray
    j3: np.ndarray
    assembled: np.ndarray
    block_order: int


@dataclass(frozen=True, eq=False)
class SeparationReport:
    block_order: int
    n_states: int
    full_spectrum: np.ndarray
    union_spectrum: np.ndarray
    max_mismatch: float
    tolerance: float
    controller_radius: float
    observer_radius: float
    trace_residual: float

    @property
    def passed(self) -> bool:
        return bool(self.max_mismatch <= self.tolerance)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {
                    "N": self.block_order,
                    "n": self.n_states,
                    "eigenvalues": self.full_spectrum.shape[0],
                    "max_mismatch": self.max_mismatch,
                    "tolerance": self.tolerance,
                    "passed": self.passed,
                    "rho_j1_diagonal": self.controller_radius,
                    "rho_j3_diagonal": self.observer_radius,
                    "trace_residual": self.trace_residual,
                }
            ]
        )

    def to_text(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        fmt = config.TRACE_FLOAT_FORMAT
        lines = [
            f"separation check: {status}",
            f"block order N: {self.block_order}",
            f"state dimension n: {self.n_states}",
            f"eigenvalues compared: {self.full_spectrum.shape[0]}",
            f"max pairing mismatch: {fmt % self.max_mismatch}",
            f"tolerance: {fmt % self.tolerance}",
            f"spectral radius of J1 diagonal block (A_0 + B F_0): {fmt % self.controller_radius}",
            f"spectral radius of J3 diagonal block (A_0 - L C): {fmt % self.observer_radius}",
            f"trace-level error residual vs autonomous recursion: {fmt % self.trace_residual}",
        ]
        return "\n".join(lines) + "\n"


def feedback_input(gains: FeedbackGains, est_history: EstimateHistory) -> np.ndarray:
    """u[k] = Σ_{j=0}^{k} F_j x̂[k-j], zero taps past the gain list."""
    if len(est_history) == 0:
        raise ConfigurationError("estimate history is empty", "est_history")
    taps = min(gains.depth, len(est_history))
    recent = est_history.estimates[::-1][:taps]
    u = gains.gains[0] @ recent[0]
    for j in range(1, taps):
        u = u + gains.gains[j] @ recent[j]
    return u


def design_feedback_gain(
    table: CoefficientTable,
    B,
    target_radius: float = config.FEEDBACK_TARGET_RADIUS,
) -> np.ndarray:
    """F_0 with ρ(A_0 + B F_0) ≤ target_radius; later taps stay zero."""
    A0 = table.memory_matrix(0)
    B = np.asarray(B, dtype=float).reshape(A0.shape[0], -1)
    return placement.place_closed_loop(A0, B, target_radius, kind="unstabilizable")


def closed_loop_simulate(
    model: SystemModel,
    fgains: FeedbackGains,
    ogains: ObserverGains,
    x0,
    xhat0,
    steps: int,
    table: CoefficientTable | None = None,
    memory_window: int | None = None,
) -> ClosedLoopTrace:
    """
    Plant driven by memory feedback on the estimates, observer driven by the
    measured outputs y = C x.
    """
    if steps < 1:
        raise ConfigurationError(f"must be >= 1, got {steps}", "K")
    fgains.check(model)
    ogains.check(model)
    check_window(memory_window)
    table = ensure_table(model, table, steps)

    states = np.zeros((steps + 1, model.n_states))
    inputs = np.zeros((steps, model.n_inputs))
    outputs = np.zeros((steps + 1, model.n_outputs))
    states[0] = as_state(model, x0, "x0")
    estimates = EstimateHistory.start(model, xhat0)

    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            outputs[k] = model.C @ states[k]
            inputs[k] = feedback_input(fgains, estimates)
            states[k + 1] = memory_sum(table, states[: k + 1], memory_window) + model.B @ inputs[k]
            if not np.all(np.isfinite(states[k + 1])):
                logger.error("Closed loop diverged at step %d.", k + 1)
                raise NumericOverflowError(k + 1)
            estimate = observer_step_memory(
                model, ogains, estimates, inputs[: k + 1], outputs[: k + 1], table, memory_window
            )
            if not np.all(np.isfinite(estimate)):
                raise NumericOverflowError(k + 1, "estimate")
            estimates.append(model, estimate)
    outputs[steps] = model.C @ states[steps]

    estimated = estimates.as_array()
    logger.debug("Closed loop simulated for %d steps.", steps)
    return ClosedLoopTrace(
        states=states,
        estimates=estimated,
        errors=states - estimated,
        inputs=inputs,
        outputs=outputs,
    )


def plant_residual(trace: ClosedLoopTrace, model: SystemModel, fgains: FeedbackGains) -> float:
    """Max |x[k+1] - Σ(A_j + B F_j) x[k-j] + Σ B F_j e[k-j]| over the trace."""
    table = build_coefficient_table(model, trace.steps)
    worst = 0.0
    for k in range(trace.steps):
        states = trace.states[k::-1]
        errors = trace.errors[k::-1]
        predicted = np.zeros(model.n_states)
        for j in range(k + 1):
            BF = model.B @ fgains.tap(j)
            predicted += (table.memory_matrices[j] + BF) @ states[j] - BF @ errors[j]
        worst = max(worst, float(np.max(np.abs(trace.states[k + 1] - predicted))))
    return worst


def error_residual(trace: ClosedLoopTrace, model: SystemModel, ogains: ObserverGains) -> float:
    """Max deviation of the traced errors from the autonomous error recursion."""
    autonomous = error_trajectory(model, ogains, trace.errors[0], trace.steps)
    return float(np.max(np.abs(trace.errors - autonomous.errors)))


def _block_lower_toeplitz(column: list) -> np.ndarray:
    """Block lower-triangular Toeplitz matrix with the given first block column."""
    order = len(column)
    rows, cols = column[0].shape
    matrix = np.zeros((order * rows, order * cols))
    for i in range(order):
        for k in range(i + 1):
            matrix[i * rows : (i + 1) * rows, k * cols : (k + 1) * cols] = column[i - k]
    return matrix


def toeplitz_truncation(
    table: CoefficientTable,
    B,
    C,
    fgains: FeedbackGains,
    ogains: ObserverGains,
    block_order: int,
    memory_gains: bool = False,
) -> TruncationBlocks:
    """
    N-block truncations of J1 (A_d + B F_d), J2 (-B F_d) and J3.

    J3 carries A_0 - L C on the diagonal and A_d - L C below it, as the
    operator is printed; memory_gains switches the sub-diagonal to A_d - L_d C.
    """
    if block_order < 1:
        raise ConfigurationError(f"must be >= 1, got {block_order}", "separation.block_order")
    if table.horizon < block_order - 1:
        raise ConfigurationError(
            f"coefficient horizon {table.horizon} < block order - 1", "separation.block_order"
        )
    n = table.memory_matrices.shape[1]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    leading_l = ogains.tap(0)

    controller, coupling, estimator = [], [], []
    for d in range(block_order):
        A_d = table.memory_matrices[d]
        BF = B @ fgains.tap(d)
        controller.append(A_d + BF)
        coupling.append(-BF)
        L_d = ogains.tap(d) if (memory_gains or d == 0) else leading_l
        estimator.append(A_d - L_d @ C)

    j1 = _block_lower_toeplitz(controller)
    j2 = _block_lower_toeplitz(coupling)
    j3 = _block_lower_toeplitz(estimator)
    assembled = np.block([[j1, j2], [np.zeros_like(j3), j3]])
    logger.debug("Toeplitz truncation built: N=%d, size %d.", block_order, assembled.shape[0])
    return TruncationBlocks(j1=j1, j2=j2, j3=j3, assembled=assembled, block_order=block_order)


def _sorted(values: np.ndarray) -> np.ndarray:
    return values[np.lexsort((values.imag, values.real))]


def spectrum(M, structured: bool = True) -> np.ndarray:
    """
    Eigenvalues of M with algebraic multiplicity, sorted by (real, imag).

    With structured=True the matrix is first split into the irreducible
    diagonal blocks of its sparsity pattern (strongly connected components of
    its directed graph); the spectrum of a reducible matrix is the union of
    those blocks' spectra. Block-triangular truncations with repeated,
    defective diagonal blocks lose accuracy like ε^(1/N) in a dense
    eigensolve, and this split avoids that.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConfigurationError(f"matrix must be square, got {M.shape}", "M")
    if not np.all(np.isfinite(M)):
        raise NumericError("matrix has non-finite entries")
    if M.shape[0] == 0:
        return np.zeros(0, dtype=complex)

    try:
        if not structured:
            return _sorted(linalg.eigvals(M).astype(complex))
        count, labels = connected_components(
            csr_matrix(M != 0), directed=True, connection="strong"
        )
        parts = []
        for component in range(count):
            index = np.flatnonzero(labels == component)
            parts.append(linalg.eigvals(M[np.ix_(index, index)]))
    except linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver did not converge: {exc}") from exc
    return _sorted(np.concatenate(parts).astype(complex))


def spectral_mismatch(first: np.ndarray, second: np.ndarray) -> float:
    """
    Largest distance under greedy nearest-neighbour pairing of two multisets.

    Both sides are sorted by (real, imag) first; multisets of different size
    never match.
    """
    if first.shape[0] != second.shape[0]:
        return float("inf")
    remaining = list(_sorted(np.asarray(second, dtype=complex)))
    worst = 0.0
    for value in _sorted(np.asarray(first, dtype=complex)):
        distances = np.abs(np.asarray(remaining) - value)
        nearest = int(np.argmin(distances))
        worst = max(worst, float(distances[nearest]))
        remaining.pop(nearest)
    return worst


def verify_separation(
    model: SystemModel,
    fgains: FeedbackGains,
    ogains: ObserverGains,
    block_order: int = config.BLOCK_ORDER,
    tolerance: float = config.SEPARATION_TOLERANCE,
    x0=None,
    xhat0=None,
    memory_gains: bool = False,
) -> SeparationReport:
    """
    Compares spectrum(J) with spectrum(J1) ⊎ spectrum(J3) on an N-block
    truncation, and reports the trace-level error residual of a coupled run
    over N steps alongside.
    """
    fgains.check(model)
    ogains.check(model)
    table = build_coefficient_table(model, block_order)
    blocks = toeplitz_truncation(table, model.B, model.C, fgains, ogains, block_order, memory_gains)

    full = spectrum(blocks.assembled)
    union = _sorted(np.concatenate([spectrum(blocks.j1), spectrum(blocks.j3)]))
    mismatch = spectral_mismatch(full, union)

    n = model.n_states
    x0 = np.ones(n) if x0 is None else x0
    xhat0 = np.zeros(n) if xhat0 is None else xhat0
    trace = closed_loop_simulate(model, fgains, ogains, x0, xhat0, block_order, table)
    residual = error_residual(trace, model, ogains)

    report = SeparationReport(
        block_order=block_order,
        n_states=n,
        full_spectrum=full,
        union_spectrum=union,
        max_mismatch=mismatch,
        tolerance=tolerance,
        controller_radius=placement.spectral_radius(blocks.j1[:n, :n]),
        observer_radius=placement.spectral_radius(blocks.j3[:n, :n]),
        trace_residual=residual,
    )
    logger.info(
        "Separation check N=%d: mismatch %.3g (tol %.3g) -> %s",
        block_order,
        mismatch,
        tolerance,
        "pass" if report.passed else "fail",
    )
    return report


logger.debug("services/feedback.py module loaded.")
