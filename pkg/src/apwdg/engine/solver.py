"""Dense generalized Hermitian eigensolver H x = lambda M x.

M is Cholesky-factored (M = L L^H), the problem is reduced to the standard
Hermitian matrix L^{-1} H L^{-H}, solved with LAPACK for the lowest nev pairs
and back-transformed. Eigenvectors come out M-orthonormal; each is rotated so
its largest-magnitude coefficient is real and positive.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Protocol

import numpy as np
import scipy.linalg

from apwdg.core.errors import ConvergenceFailure, MassNotPositiveDefinite, OutOfRange, ZeroVector
from apwdg.core.logging import get_logger

logger = get_logger(__name__)

# Condition number of M above which the basis is treated as linearly dependent
MAX_MASS_CONDITION = 1e12


class HasOperators(Protocol):
    H: np.ndarray
    M: np.ndarray


@dataclass(frozen=True)
class EigenSolution:
    """Lowest eigenpairs of one discretization.

    Attributes:
        eigenvalues: Ascending eigenvalues (hartree)
        eigenvectors: M-orthonormal columns, shape (dim, nev)
        residual_norms: ||H x - lambda M x||_2 per pair
        condition_estimate: Condition number of M
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residual_norms: np.ndarray
    condition_estimate: float

    @property
    def nev(self) -> int:
        return int(self.eigenvalues.size)


def _fix_phase(vectors: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-magnitude entry is real positive."""
    pivots = np.argmax(np.abs(vectors), axis=0)
    values = vectors[pivots, np.arange(vectors.shape[1])]
    phases = np.where(np.abs(values) > 0.0, values / np.abs(values), 1.0)
    return vectors / phases[None, :]


def factor_mass(M: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky factor of M and its condition number.

    Raises:
        MassNotPositiveDefinite: If the factorization fails or M is too ill-conditioned
    """
    try:
        spectrum = scipy.linalg.eigvalsh(M)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise ConvergenceFailure(f"Eigenvalues of the overlap matrix did not converge: {e}") from e
    smallest = float(spectrum[0])
    condition = float(spectrum[-1] / smallest) if smallest > 0.0 else float("inf")

    try:
        lower = scipy.linalg.cholesky(M, lower=True)
    except np.linalg.LinAlgError as e:
        raise MassNotPositiveDefinite(
            f"Overlap matrix is not positive definite (smallest eigenvalue {smallest:.3e}). "
            "Restricted plane waves are nearly linearly dependent. Fix: lower basis.K.",
            smallest_pivot=smallest,
            condition_estimate=condition,
        ) from e

    if condition > MAX_MASS_CONDITION:
        raise MassNotPositiveDefinite(
            f"Overlap matrix condition number {condition:.3e} exceeds {MAX_MASS_CONDITION:.0e}. "
            "Fix: lower basis.K or basis.N.",
            smallest_pivot=float(np.min(np.abs(np.diag(lower)))) ** 2,
            condition_estimate=condition,
        )
    return lower, condition


def solve_lowest(ops: HasOperators, nev: int) -> EigenSolution:
    """Lowest nev eigenpairs of H x = lambda M x.

    Args:
        ops: Anything with Hermitian H and positive-definite M
        nev: Number of eigenpairs (<= dimension)

    Raises:
        MassNotPositiveDefinite: If M cannot be factored
        ConvergenceFailure: If the dense eigensolver fails
    """
    H = np.asarray(ops.H)
    M = np.asarray(ops.M)
    dim = H.shape[0]
    if not 1 <= nev <= dim:
        raise OutOfRange(f"Requested nev={nev} eigenpairs, dimension is {dim}.")

    started = time.perf_counter()
    lower, condition = factor_mass(M)
    left = scipy.linalg.solve_triangular(lower, H, lower=True)
    reduced = scipy.linalg.solve_triangular(lower, left.conj().T, lower=True)
    reduced = 0.5 * (reduced + reduced.conj().T)

    try:
        eigenvalues, standard = scipy.linalg.eigh(reduced, subset_by_index=[0, nev - 1])
    except (np.linalg.LinAlgError, ValueError) as e:
        raise ConvergenceFailure(f"Dense Hermitian eigensolver failed for dim={dim}: {e}") from e

    vectors = scipy.linalg.solve_triangular(lower.conj().T, standard, lower=False)
    vectors = _fix_phase(vectors)
    residuals = np.linalg.norm(H @ vectors - (M @ vectors) * eigenvalues[None, :], axis=0)

    logger.info(
        "eigenproblem_solved",
        dim=dim,
        nev=nev,
        lowest=float(eigenvalues[0]),
        max_residual=float(np.max(residuals)),
        mass_condition=condition,
        duration_ms=round((time.perf_counter() - started) * 1000, 1),
    )
    return EigenSolution(
        eigenvalues=eigenvalues,
        eigenvectors=vectors,
        residual_norms=residuals,
        condition_estimate=condition,
    )


def rayleigh_quotient(ops: HasOperators, vector: np.ndarray) -> float:
    """(v^H H v) / (v^H M v), real by Hermitian symmetrization.

    Raises:
        ZeroVector: If v^H M v vanishes
    """
    v = np.asarray(vector, dtype=complex).reshape(-1)
    norm = np.vdot(v, ops.M @ v).real
    if norm <= 0.0 or not np.any(v):
        raise ZeroVector("Rayleigh quotient of a zero vector is undefined.")
    Hv = 0.5 * (ops.H @ v + ops.H.conj().T @ v)
    return float(np.vdot(v, Hv).real / norm)
