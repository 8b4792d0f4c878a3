"""
Grünwald-Letnikov machinery for discrete-time fractional-order systems.

The model is

    Δ^α x[k+1] = A x[k] + B u[k],   y[k] = C x[k],

which after expanding the fractional difference becomes the full-memory
recursion

    x[k+1] = Σ_{j=0}^{k} A_j x[k-j] + B u[k],
    A_0 = A - D(α, 1),   A_j = -D(α, j+1) for j >= 1,

with D(α, j) = diag(ψ(α_1, j), ..., ψ(α_n, j)). Everything here is a pure
function over immutable value objects; a simulation keeps every state since
k = 0 because each step consumes the whole history.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from config import config
from services.errors import ConfigurationError, NumericOverflowError

logger = logging.getLogger(__name__)


def _as_matrix(value, name: str) -> np.ndarray:
    matrix = np.atleast_2d(np.array(value, dtype=float))
    if matrix.ndim != 2:
        raise ConfigurationError(f"expected a matrix, got shape {matrix.shape}", name)
    if not np.all(np.isfinite(matrix)):
        raise ConfigurationError("entries must be finite", name)
    return matrix


@dataclass(frozen=True, eq=False)
class FractionalOrders:
    """One fractional order per state channel, each inside an open interval."""

    alpha: np.ndarray
    valid_range: tuple = config.ALPHA_RANGE
    strict: bool = config.STRICT_ALPHA

    def __post_init__(self):
        alpha = np.atleast_1d(np.array(self.alpha, dtype=float))
        if alpha.ndim != 1:
            raise ConfigurationError("fractional orders must be a vector", "alpha")
        if not np.all(np.isfinite(alpha)):
            raise ConfigurationError("fractional orders must be finite", "alpha")
        low, high = self.valid_range
        outside = (alpha <= low) | (alpha >= high)
        if np.any(outside):
            message = f"orders {alpha[outside].tolist()} outside ({low}, {high})"
            if self.strict:
                raise ConfigurationError(message, "alpha")
            logger.warning("Accepting %s (strict validation off).", message)
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)

    def __len__(self):
        return self.alpha.shape[0]


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Matrices A (n×n), B (n×p), C (m×n) and the orders α of one FODS."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    alpha: FractionalOrders

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        C = _as_matrix(self.C, "C")
        alpha = self.alpha
        if not isinstance(alpha, FractionalOrders):
            alpha = FractionalOrders(alpha)

        n = A.shape[0]
        if A.shape != (n, n):
            raise ConfigurationError(f"A must be square, got {A.shape}", "A")
        if B.shape[0] != n:
            # a flat input vector is a single-input column
            if B.shape == (1, n):
                B = B.T
            else:
                raise ConfigurationError(f"B must have {n} rows, got {B.shape}", "B")
        if C.shape[1] != n:
            raise ConfigurationError(f"C must have {n} columns, got {C.shape}", "C")
        if len(alpha) != n:
            raise ConfigurationError(
                f"{len(alpha)} fractional orders for a {n}-state model", "alpha"
            )
        for matrix in (A, B, C):
            matrix.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "alpha", alpha)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    def with_measurement(self, C) -> "SystemModel":
        return SystemModel(self.A, self.B, C, self.alpha)


@dataclass(frozen=True, eq=False)
class CoefficientTable:
    """
    Precomputed Grünwald-Letnikov weights and memory matrices up to a horizon J.

    psi has shape (n, J+2): column j holds ψ(α_i, j), running one past J
    because A_J = -D(α, J+1). memory_matrices has shape (J+1, n, n).
    """

    psi: np.ndarray
    memory_matrices: np.ndarray
    horizon: int

    def memory_matrix(self, j: int) -> np.ndarray:
        return self.memory_matrices[j]

    def to_frame(self) -> pd.DataFrame:
        n, columns = self.psi.shape
        channel, lag = np.meshgrid(np.arange(1, n + 1), np.arange(columns), indexing="ij")
        return pd.DataFrame(
            {"channel": channel.ravel(), "j": lag.ravel(), "psi": self.psi.ravel()}
        )

    def to_csv(self, path: Path) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False, float_format=config.TRACE_FLOAT_FORMAT)
        logger.info("Coefficient table (J=%d) written to %s", self.horizon, path)
        return path


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States x[0..K], inputs u[0..K-1] and, when populated, outputs y[k] = C x[k]."""

    states: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray | None = None

    def __post_init__(self):
        if self.states.shape[0] != self.inputs.shape[0] + 1:
            raise ConfigurationError(
                f"{self.states.shape[0]} states for {self.inputs.shape[0]} inputs",
                "trajectory",
            )

    @property
    def steps(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True, eq=False)
class PropagatorSet:
    """G_0..G_K of the closed-form solution, shape (K+1, n, n)."""

    g: np.ndarray = field(repr=False)

    def __len__(self):
        return self.g.shape[0]

    def __getitem__(self, k):
        return self.g[k]


def gl_coefficients(alpha: float, horizon: int) -> np.ndarray:
    """
    ψ(α, 0..horizon) by the multiplicative recurrence
    ψ(α, j) = ψ(α, j-1)·(j-1-α)/j, ψ(α, 0) = 1.

    Γ quotients overflow around j ≈ 170 in double precision; the running
    product does not.
    """
    if horizon < 0:
        raise ConfigurationError(f"horizon must be >= 0, got {horizon}", "horizon")
    lags = np.arange(1, horizon + 1, dtype=float)
    factors = (lags - 1.0 - alpha) / lags
    return np.concatenate(([1.0], np.cumprod(factors)))


def gl_coefficient(alpha: float, j: int) -> float:
    """Single Grünwald-Letnikov weight ψ(α, j)."""
    if j < 0:
        raise ConfigurationError(f"lag must be >= 0, got {j}", "j")
    return float(gl_coefficients(alpha, j)[j])


def build_coefficient_table(model: SystemModel, horizon: int) -> CoefficientTable:
    """ψ for every channel and the memory matrices A_0..A_J."""
    if horizon < 0:
        raise ConfigurationError(f"horizon must be >= 0, got {horizon}", "horizon")
    alpha = model.alpha.alpha
    if alpha.shape[0] != model.n_states:
        raise ConfigurationError(
            f"{alpha.shape[0]} orders for a {model.n_states}-state model", "alpha"
        )

    psi = np.vstack([gl_coefficients(a, horizon + 1) for a in alpha])
    memory = np.zeros((horizon + 1, model.n_states, model.n_states))
    diagonal = np.arange(model.n_states)
    memory[:, diagonal, diagonal] = -psi[:, 1:].T
    memory[0] += model.A

    psi.setflags(write=False)
    memory.setflags(write=False)
    logger.debug("Built coefficient table: n=%d, J=%d", model.n_states, horizon)
    return CoefficientTable(psi=psi, memory_matrices=memory, horizon=horizon)


def ensure_table(model: SystemModel, table: CoefficientTable | None, horizon: int):
    """Returns table when it reaches horizon, otherwise a freshly built one."""
    if table is not None and table.horizon >= horizon:
        return table
    return build_coefficient_table(model, max(horizon, 0))


def memory_sum(table: CoefficientTable, history: np.ndarray, memory_window: int | None = None):
    """
    Σ_{j} A_j z[k-j] over the rows z[0..k] of history (oldest first).

    With a memory window W only the W most recent terms are kept.
    """
    depth = history.shape[0]
    if memory_window is not None:
        depth = min(depth, memory_window)
    if depth - 1 > table.horizon:
        raise ConfigurationError(
            f"coefficient table horizon {table.horizon} shorter than memory depth {depth}",
            "horizon",
        )
    recent = history[::-1][:depth]
    return np.einsum("jab,jb->a", table.memory_matrices[:depth], recent)


def check_window(memory_window):
    if memory_window is not None and memory_window < 1:
        raise ConfigurationError(f"must be >= 1, got {memory_window}", "memory_window")


def as_inputs(model: SystemModel, inputs) -> np.ndarray:
    u = np.asarray(inputs, dtype=float)
    if u.size == 0:
        return np.zeros((0, model.n_inputs))
    if u.ndim == 1:
        u = u.reshape(-1, model.n_inputs) if model.n_inputs > 1 else u.reshape(-1, 1)
    if u.shape[1] != model.n_inputs:
        raise ConfigurationError(
            f"inputs have {u.shape[1]} components, model expects {model.n_inputs}", "inputs"
        )
    if not np.all(np.isfinite(u)):
        raise ConfigurationError("inputs must be finite", "inputs")
    return u


def as_state(model: SystemModel, x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != model.n_states:
        raise ConfigurationError(f"expected {model.n_states} entries, got {x.shape[0]}", name)
    if not np.all(np.isfinite(x)):
        raise ConfigurationError("entries must be finite", name)
    return x


def simulate(
    model: SystemModel,
    x0,
    inputs,
    memory_window: int | None = None,
    table: CoefficientTable | None = None,
) -> Trajectory:
    """
    Runs x[k+1] = Σ_{j=0}^{k} A_j x[k-j] + B u[k] over every input.

    Raises NumericOverflowError with the step index if a state becomes
    non-finite.
    """
    check_window(memory_window)
    u = as_inputs(model, inputs)
    steps = u.shape[0]
    table = ensure_table(model, table, steps - 1)

    states = np.zeros((steps + 1, model.n_states))
    states[0] = as_state(model, x0, "x0")
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            states[k + 1] = memory_sum(table, states[: k + 1], memory_window) + model.B @ u[k]
            if not np.all(np.isfinite(states[k + 1])):
                logger.error("Simulation diverged at step %d.", k + 1)
                raise NumericOverflowError(k + 1)

    outputs = states @ model.C.T
    logger.debug("Simulated %d steps of a %d-state model.", steps, model.n_states)
    return Trajectory(states=states, inputs=u, outputs=outputs)


def propagators(model: SystemModel, steps: int, table: CoefficientTable | None = None) -> PropagatorSet:
    """G_0 = I, G_k = Σ_{j=0}^{k-1} A_j G_{k-1-j}."""
    if steps < 0:
        raise ConfigurationError(f"must be >= 0, got {steps}", "K")
    table = ensure_table(model, table, steps - 1)
    n = model.n_states
    g = np.zeros((steps + 1, n, n))
    g[0] = np.eye(n)
    for k in range(1, steps + 1):
        g[k] = np.einsum("jab,jbc->ac", table.memory_matrices[:k], g[k - 1 :: -1][:k])
    g.setflags(write=False)
    return PropagatorSet(g=g)


def closed_form_state(
    model: SystemModel,
    x0,
    inputs,
    k: int,
    props: PropagatorSet | None = None,
) -> np.ndarray:
    """x[k] = G_k x[0] + Σ_{j=0}^{k-1} G_{k-1-j} B u[j]."""
    u = as_inputs(model, inputs)
    if k < 0 or k > u.shape[0]:
        raise ConfigurationError(f"step {k} outside 0..{u.shape[0]}", "k")
    x0 = as_state(model, x0, "x0")
    if props is None or len(props) <= k:
        props = propagators(model, k)

    state = props[k] @ x0
    if k > 0:
        forced = props.g[k - 1 :: -1][:k] @ model.B  # G_{k-1-j} B for j = 0..k-1
        state = state + np.einsum("jab,jb->a", forced, u[:k])
    return state


logger.debug("services/frac_core.py module loaded.")
