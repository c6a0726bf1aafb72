"""Discrete inverse estimate on a sphere surface.

The trace space on the surface of one sphere is spanned by the inner traces
chi_n(R) Y_lm (l <= L) and the plane-wave traces, which by the scattering
identity have harmonic coefficients

    |Omega|^{-1/2} e^{ik.R_j} 4*pi i^l j_l(|k| R) conj(Y_lm(k_hat)),   l <= L_cut.

In the orthonormal harmonic representation the surface stiffness
-Laplace_S2 + 1 is diag(l(l+1) + 1). The trace space is resolved through the
mass Gram of the unit-norm generators: modes whose mass falls below
MASS_TOLERANCE carry no measurable trace and are dropped. The largest
eigenvalue of the stiffness on the remaining space measures how fast the
inverse-estimate constant grows with the discretization parameter.

L_cut grows with the plane-wave cutoff until j_{L_cut}(k_max R) is below
TAIL_TOLERANCE, so raising it further leaves the table unchanged.

Usage:
    lam, table = surface_inverse_estimate(cell, site, BasisParams(K=6, N=6, L=6))
    slope = fit_loglog_slope(table)
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from apwdg.basis import BasisParams
from apwdg.core.errors import OutOfRange, RankDeficientTraceSpace, TruncationWarning
from apwdg.core.logging import get_logger
from apwdg.geometry import AtomicSite, UnitCell, lattice_integers
from apwdg.specialfn import (
    bessel_tail_degree,
    direction_angles,
    lm_index,
    sph_bessel,
    sph_harm_table,
)

logger = get_logger(__name__)

# Smallest L_cut is L + L_CUT_HEADROOM
L_CUT_HEADROOM = 12
# Mass-Gram eigenvalue below which a trace mode is null (generators have unit norm)
MASS_TOLERANCE = 1e-10
# Largest admissible |j_{L_cut}(k_max R)|
TAIL_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ScalingRow:
    """One row of the surface-estimate table."""

    radius: float
    varrho: int
    K: int
    N: int
    L: int
    lambda_max: float
    rank: int
    dropped: int
    l_cut: int


def _stiffness_diagonal(l_cut: int) -> np.ndarray:
    return np.asarray(
        [l * (l + 1) + 1.0 for l in range(l_cut + 1) for _ in range(2 * l + 1)], dtype=float
    )


def _max_wavenumber(cell: UnitCell, K: int) -> float:
    n = lattice_integers(K).astype(float)
    return float(cell.reciprocal_unit * np.max(np.linalg.norm(n, axis=1)))


def default_l_cut(cell: UnitCell, site: AtomicSite, params: BasisParams) -> int:
    """Harmonic truncation resolving every plane-wave trace of params.

    At least L + L_CUT_HEADROOM, raised until |j_l(k_max R)| < TAIL_TOLERANCE.
    """
    x = _max_wavenumber(cell, params.K) * site.radius
    return bessel_tail_degree(x, TAIL_TOLERANCE, floor=params.L + L_CUT_HEADROOM)


def trace_generators(
    cell: UnitCell,
    site: AtomicSite,
    params: BasisParams,
    l_cut: int,
    include_planewaves: bool = True,
) -> np.ndarray:
    """Harmonic coefficients of all trace-space generators, one row per generator."""
    n_lm = (l_cut + 1) ** 2
    radial_at_surface = params.radial_family(site.radius).evaluate(np.asarray([site.radius]))[0]
    rows = []
    if np.any(np.abs(radial_at_surface) > 0.0):
        # Every chi_n(R) Y_lm is a multiple of Y_lm, so the inner span is {Y_lm : l <= L}
        inner = np.zeros(((params.L + 1) ** 2, n_lm), dtype=complex)
        inner[:, : (params.L + 1) ** 2] = np.eye((params.L + 1) ** 2)
        rows.append(inner)

    if include_planewaves:
        n = lattice_integers(params.K)
        k = cell.reciprocal_unit * n.astype(float)
        norms, theta, phi = direction_angles(k)
        ylm = sph_harm_table(l_cut, theta, phi)  # (n_lm, P)
        phase = np.exp(1j * (k @ site.position)) / math.sqrt(cell.volume)
        pw = np.empty((n.shape[0], n_lm), dtype=complex)
        for l in range(l_cut + 1):
            jl, _ = sph_bessel(l, norms * site.radius)
            block = slice(lm_index(l, -l), lm_index(l, l) + 1)
            pw[:, block] = (4.0 * math.pi * (1j**l) * (phase * jl))[:, None] * np.conj(
                ylm[block]
            ).T
        # Unit-norm generators make MASS_TOLERANCE an absolute threshold
        norms_pw = np.linalg.norm(pw, axis=1)
        pw = pw / np.where(norms_pw > 0.0, norms_pw, 1.0)[:, None]
        rows.append(pw)

        tail, _ = sph_bessel(l_cut, np.asarray([float(np.max(norms)) * site.radius]))
        if abs(float(tail[0])) > TAIL_TOLERANCE:
            message = (
                f"Surface representation truncated at L_cut={l_cut} leaves "
                f"|j_L_cut(k_max R)| = {abs(float(tail[0])):.3e} > {TAIL_TOLERANCE:.0e}. "
                "Fix: raise inverse_estimate.l_cut or leave it unset."
            )
            logger.warning("surface_truncation_tail", l_cut=l_cut, tail=abs(float(tail[0])))
            warnings.warn(message, TruncationWarning, stacklevel=2)

    if not rows:
        return np.zeros((0, n_lm), dtype=complex)
    return np.vstack(rows)


def _lambda_max(generators: np.ndarray, stiffness: np.ndarray) -> tuple[float, int, int]:
    """Largest restricted eigenvalue, rank and number of dropped generator modes."""
    if generators.shape[0] == 0:
        raise RankDeficientTraceSpace("Trace space is empty: no generators survived.")
    # G^H G shares its nonzero spectrum with the generator mass matrix G G^H
    gram = generators.conj().T @ generators
    weights, vectors = scipy.linalg.eigh(0.5 * (gram + gram.conj().T))
    keep = weights > MASS_TOLERANCE
    rank = int(np.count_nonzero(keep))
    if rank == 0:
        raise RankDeficientTraceSpace(
            f"Trace space mass Gram has no modes above {MASS_TOLERANCE:.0e}."
        )
    dropped = int(generators.shape[0] - rank)
    basis = vectors[:, keep]  # (n_lm, rank), orthonormal
    reduced = basis.conj().T @ (stiffness[:, None] * basis)
    eigenvalues = scipy.linalg.eigvalsh(0.5 * (reduced + reduced.conj().T))
    return float(eigenvalues[-1]), rank, dropped


def surface_inverse_estimate(
    cell: UnitCell,
    site: AtomicSite,
    params: BasisParams,
    l_cut: int | None = None,
    include_planewaves: bool = True,
) -> tuple[float, list[ScalingRow]]:
    """Largest surface eigenvalue for params and the table over varrho' = 1..varrho.

    Row varrho' uses K' = min(K, varrho'), N' = min(N, varrho'), L' = min(L, varrho'),
    so the spaces are nested and the last row is params itself.

    Args:
        cell: Unit cell
        site: Sphere the surface belongs to
        params: Basis parameters
        l_cut: Harmonic truncation (>= L + 12, default from default_l_cut)
        include_planewaves: False restricts to the inner traces only

    Raises:
        OutOfRange: If l_cut < L + 12
        RankDeficientTraceSpace: If the trace space is empty
    """
    if l_cut is None:
        l_cut = default_l_cut(cell, site, params)
    elif l_cut < params.L + L_CUT_HEADROOM:
        raise OutOfRange(
            f"l_cut={l_cut} is below L + {L_CUT_HEADROOM} = {params.L + L_CUT_HEADROOM}."
        )
    stiffness = _stiffness_diagonal(l_cut)
    table: list[ScalingRow] = []
    for varrho in range(1, params.varrho + 1):
        K = max(1, min(params.K, varrho))
        row_params = BasisParams(
            K=K,
            N=min(params.N, varrho),
            L=min(params.L, varrho),
            radial_kind=params.radial_kind,
            slater_eta=params.slater_eta,
        )
        generators = trace_generators(cell, site, row_params, l_cut, include_planewaves)
        lam, rank, dropped = _lambda_max(generators, stiffness)
        if dropped:
            logger.debug("trace_space_rank_deficient", varrho=varrho, rank=rank, dropped=dropped)
        table.append(
            ScalingRow(
                radius=site.radius,
                varrho=varrho,
                K=row_params.K,
                N=row_params.N,
                L=row_params.L,
                lambda_max=lam,
                rank=rank,
                dropped=dropped,
                l_cut=l_cut,
            )
        )
    logger.info(
        "surface_estimate_finished",
        radius=site.radius,
        varrho=params.varrho,
        l_cut=l_cut,
        lambda_max=table[-1].lambda_max,
    )
    return table[-1].lambda_max, table


def fit_loglog_slope(table: list[ScalingRow], min_varrho: int = 2) -> float:
    """Least-squares slope of log(lambda_max) against log(varrho)."""
    rows = [row for row in table if row.varrho >= min_varrho]
    if len(rows) < 2:
        raise OutOfRange("Slope fit needs at least two rows with varrho >= min_varrho.")
    x = np.log([row.varrho for row in rows])
    y = np.log([row.lambda_max for row in rows])
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def inverse_estimate_scan(
    cell: UnitCell,
    center: tuple[float, float, float],
    radii: list[float],
    params: BasisParams,
    l_cut: int | None = None,
) -> dict[float, tuple[list[ScalingRow], float]]:
    """Tables and fitted slopes for several sphere radii."""
    results: dict[float, tuple[list[ScalingRow], float]] = {}
    for radius in radii:
        site = AtomicSite(center=center, radius=radius)
        _, table = surface_inverse_estimate(cell, site, params, l_cut)
        slope = fit_loglog_slope(table) if len(table) > 2 else float("nan")
        results[radius] = (table, slope)
        logger.info("surface_slope_fitted", radius=radius, slope=slope)
    return results
