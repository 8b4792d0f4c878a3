"""
Spectral-radius gain design for a leading memory matrix.

Both the observer gain (on the transposed pair) and the feedback gain are
obtained here. The pair is split into its controllable and uncontrollable
parts; uncontrollable modes must already sit inside the target radius, the
controllable part is either solved deadbeat (full-rank input map) or moved
by scipy's pole placement.
"""

import logging

import numpy as np
from scipy import linalg
from scipy.signal import place_poles

from services.errors import ConfigurationError, DesignError

logger = logging.getLogger(__name__)

RADIUS_SLACK = 1e-9
# placed poles sit at this fraction of the target radius
POLE_MARGIN = 0.9


def spectral_radius(matrix: np.ndarray) -> float:
    if matrix.size == 0:
        return 0.0
    return float(np.max(np.abs(linalg.eigvals(matrix))))


def _controllable_split(A: np.ndarray, B: np.ndarray):
    """Orthonormal bases of the controllable subspace and its complement."""
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    reachable = np.hstack(blocks)
    if not np.any(reachable):
        return np.zeros((n, 0)), np.eye(n)
    basis = linalg.orth(reachable)
    complement = linalg.null_space(basis.T)
    return basis, complement


def _target_poles(Ac: np.ndarray, target_radius: float) -> np.ndarray:
    """Open-loop poles contracted radially until they fit inside the target."""
    open_loop = linalg.eigvals(Ac)
    radius = float(np.max(np.abs(open_loop)))
    scale = POLE_MARGIN * target_radius / radius
    poles = open_loop * scale
    # keep conjugate pairs exact and real poles real
    poles = np.where(np.abs(poles.imag) < 1e-14, poles.real, poles)
    return poles


def place_closed_loop(A, B, target_radius: float, kind: str = "unstabilizable") -> np.ndarray:
    """
    Returns G (p×n) with ρ(A + B G) ≤ target_radius.

    kind names the failure in the DesignError message ("undetectable" when
    called on a transposed observer pair).
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n = A.shape[0]
    if B.ndim == 1:
        B = B.reshape(n, -1)
    if not np.isfinite(target_radius) or target_radius < 0:
        raise ConfigurationError(f"must be a finite non-negative radius, got {target_radius}", "target_radius")

    # Full-rank input map: cancel A outright
    if np.linalg.matrix_rank(B) == n:
        gain = -np.linalg.lstsq(B, A, rcond=None)[0]
        logger.debug("Deadbeat design with full-rank input map.")
        return _checked(A, B, gain, target_radius, kind)

    basis, complement = _controllable_split(A, B)
    if complement.shape[1]:
        Au = complement.T @ A @ complement
        stuck = linalg.eigvals(Au)
        offending = stuck[np.abs(stuck) > target_radius + RADIUS_SLACK]
        if offending.size:
            raise DesignError(
                f"{kind} pair: modes outside radius {target_radius} cannot be moved",
                offending,
            )

    gain = np.zeros((B.shape[1], n))
    rank = basis.shape[1]
    if rank == 0:
        return _checked(A, B, gain, target_radius, kind)

    Ac = basis.T @ A @ basis
    Bc = basis.T @ B
    if np.linalg.matrix_rank(Bc) == rank:
        reduced = -np.linalg.lstsq(Bc, Ac, rcond=None)[0]
    elif spectral_radius(Ac) <= POLE_MARGIN * target_radius:
        reduced = np.zeros((B.shape[1], rank))
    else:
        if target_radius == 0:
            raise DesignError(f"deadbeat placement needs a full-rank input map, rank is {np.linalg.matrix_rank(Bc)}")
        reduced = -_place(Ac, Bc, target_radius)
    gain = reduced @ basis.T
    return _checked(A, B, gain, target_radius, kind)


def _place(Ac: np.ndarray, Bc: np.ndarray, target_radius: float) -> np.ndarray:
    poles = _target_poles(Ac, target_radius)
    try:
        return place_poles(Ac, Bc, poles).gain_matrix
    except ValueError as exc:
        # coincident contracted poles exceed the input rank; spread them instead
        logger.debug("Contracted poles rejected (%s); using spread real poles.", exc)
    spread = target_radius * np.linspace(0.5, POLE_MARGIN, Ac.shape[0])
    try:
        return place_poles(Ac, Bc, spread).gain_matrix
    except ValueError as exc:
        raise DesignError(f"pole placement failed: {exc}") from exc


def _checked(A, B, gain, target_radius, kind):
    closed = A + B @ gain
    radius = spectral_radius(closed)
    if radius > target_radius + RADIUS_SLACK:
        raise DesignError(
            f"{kind} design reached radius {radius:.6g}, target {target_radius}",
            linalg.eigvals(closed),
        )
    logger.info("Gain design reached spectral radius %.6g (target %.6g).", radius, target_radius)
    return gain


logger.debug("services/placement.py module loaded.")
