"""Error metrics between a trial discretization and a reference solution.

When the reference basis contains the trial basis (same sites, radial family
and cell, larger or equal K, N, L), trial coefficients are embedded into the
reference basis and every error is an exact quadratic form of the reference
matrices:

    L2^2 = e^H M e,  H1^2 = 2 e^H A_lap e,  jump^2 = e^H J e,
    DG^2 = H1^2 + L2^2 + sigma * jump^2

Otherwise (radius sweeps, plane-wave baselines) both sides are written as
piecewise expansions, plane waves outside their spheres and harmonics
inside, and the same four errors come from exact Grams of the two
expansions (see piecewise_error).

Eigenpairs are matched by maximal overlap (Hungarian assignment), and each
trial function is compared against its normalized projection onto the
matched reference eigenspace, which fixes phase and degenerate rotations.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from apwdg.basis import MixedBasis
from apwdg.core.errors import IndexMismatch, ProblemValidationError
from apwdg.core.logging import get_logger
from apwdg.engine.assembly import AssembledOperators
from apwdg.engine.solver import EigenSolution
from apwdg.geometry import AtomicSite, UnitCell, validate_sites
from apwdg.specialfn import (
    RadialFamily,
    bessel_tail_degree,
    direction_angles,
    gauss_legendre,
    sph_bessel,
    sph_harm_table,
)
from apwdg.studies.reference import PlaneWaveSolution

logger = get_logger(__name__)

# Eigenvalues closer than this (relative to max(1, |lambda|)) form one eigenspace
DEGENERACY_TOLERANCE = 1e-6
# Sphere centers closer than this (bohr) are the same site
CENTER_TOLERANCE = 1e-9
# Harmonic expansions about a ball stop once |j_l(q_max r)| drops below this
HARMONIC_TAIL_TOLERANCE = 1e-12
# Gauss nodes per radial interval beyond N + 1 + ceil(2 q_max width)
RADIAL_EXTRA_NODES = 20


@dataclass(frozen=True)
class Discretization:
    """A solved DG problem with its timings."""

    basis: MixedBasis
    operators: AssembledOperators
    solution: EigenSolution
    assemble_s: float = 0.0
    solve_s: float = 0.0


@dataclass(frozen=True)
class EigenpairError:
    """Errors of one tracked eigenpair."""

    eig_index: int
    reference_index: int
    eigenvalue: float
    eig_error: float
    l2_error: float
    h1_error: float
    jump_error: float
    dg_error: float


@dataclass(frozen=True)
class ErrorRecord:
    """One row of a convergence study."""

    sweep_var: str
    value: float
    dofs: int
    eig_index: int
    eigenvalue: float
    eig_error: float
    l2_error: float
    h1_error: float
    jump_error: float
    dg_error: float
    assemble_s: float
    solve_s: float


# =============================================================================
# Embedding
# =============================================================================


def is_nested(trial: MixedBasis, reference: MixedBasis) -> bool:
    """True when every trial basis function is also a reference basis function."""
    tp, rp = trial.params, reference.params
    return (
        trial.cell == reference.cell
        and trial.sites == reference.sites
        and tp.radial_kind == rp.radial_kind
        and (tp.radial_kind != "slater" or tp.slater_eta == rp.slater_eta)
        and tp.K <= rp.K
        and tp.N <= rp.N
        and tp.L <= rp.L
    )


def embedding_indices(trial: MixedBasis, reference: MixedBasis) -> np.ndarray:
    """Reference index of every trial DOF (bases must be nested)."""
    # Plane waves share the canonical ordering, so the trial set is a prefix
    indices = list(range(trial.n_pw))
    for j in range(len(trial.sites)):
        for dof in trial.sphere_dofs[j]:
            indices.append(reference.sphere_index(j, dof.n, dof.l, dof.m))
    return np.asarray(indices, dtype=np.int64)


def embed(vectors: np.ndarray, trial: MixedBasis, reference: MixedBasis) -> np.ndarray:
    """Trial coefficient columns expressed in the reference basis."""
    vectors = np.asarray(vectors, dtype=complex)
    if vectors.ndim == 1:
        vectors = vectors[:, None]
    out = np.zeros((reference.total_dim, vectors.shape[1]), dtype=complex)
    out[embedding_indices(trial, reference)] = vectors
    return out


# =============================================================================
# Matching
# =============================================================================


def degenerate_cluster(eigenvalues: np.ndarray, index: int) -> list[int]:
    """Indices whose eigenvalues coincide with eigenvalues[index]."""
    target = eigenvalues[index]
    tolerance = DEGENERACY_TOLERANCE * max(1.0, abs(float(target)))
    return [i for i, value in enumerate(eigenvalues) if abs(value - target) <= tolerance]


def match_eigenpairs(overlaps: np.ndarray, requested: Sequence[int]) -> dict[int, int]:
    """Assign each requested trial index a distinct reference index by maximal overlap.

    Args:
        overlaps: |<u_i, u_ref_j>| of shape (n_trial, n_reference)
        requested: Trial indices to match

    Raises:
        IndexMismatch: If a requested index is not available on either side
    """
    n_trial, n_reference = overlaps.shape
    if not requested:
        return {}
    if max(requested) >= n_trial or len(requested) > n_reference:
        raise IndexMismatch(
            f"Cannot track eigenpairs {list(requested)}: trial has {n_trial}, "
            f"reference has {n_reference}. Fix: raise solver.nev.",
            requested=list(requested),
            available=min(n_trial, n_reference),
        )
    rows, cols = linear_sum_assignment(-overlaps[list(requested), :])
    mapping = {int(requested[r]): int(c) for r, c in zip(rows, cols, strict=True)}
    reordered = {i: j for i, j in mapping.items() if i != j}
    if reordered:
        logger.warning("eigenpair_order_changed", mapping=reordered)
    return mapping


# =============================================================================
# Error evaluation
# =============================================================================


def _projected_reference(u: np.ndarray, cluster: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Normalized M-projection of u onto span(cluster)."""
    projection = cluster @ (cluster.conj().T @ (M @ u))
    norm = math.sqrt(max(np.vdot(projection, M @ projection).real, 0.0))
    if norm == 0.0:
        return cluster[:, 0]
    return projection / norm


def dg_error(
    trial: Discretization,
    reference: Discretization,
    indices: Sequence[int],
) -> list[EigenpairError]:
    """Errors of the tracked trial eigenpairs against a nested DG reference.

    Falls back to piecewise_error when the bases are not nested.

    Raises:
        IndexMismatch: If tracked indices exceed the solved eigenpairs
    """
    if not is_nested(trial.basis, reference.basis):
        return piecewise_error(
            PiecewiseExpansion.from_discretization(
                trial, _tracked_columns(trial.solution.nev, indices)
            ),
            trial.solution.eigenvalues,
            PiecewiseExpansion.from_discretization(reference, reference.solution.nev),
            reference.solution.eigenvalues,
            indices,
            trial.operators.sigma,
        )

    ref_ops = reference.operators
    ref_values = reference.solution.eigenvalues
    ref_vectors = reference.solution.eigenvectors
    embedded = embed(trial.solution.eigenvectors, trial.basis, reference.basis)
    overlaps = np.abs(embedded.conj().T @ (ref_ops.M @ ref_vectors))
    mapping = match_eigenpairs(overlaps, indices)

    errors = []
    for i in indices:
        j = mapping[i]
        u = embedded[:, i]
        cluster = ref_vectors[:, degenerate_cluster(ref_values, j)]
        e = u - _projected_reference(u, cluster, ref_ops.M)
        l2 = math.sqrt(max(np.vdot(e, ref_ops.M @ e).real, 0.0))
        h1 = math.sqrt(max(2.0 * np.vdot(e, ref_ops.A_lap @ e).real, 0.0))
        jump = math.sqrt(max(np.vdot(e, ref_ops.J @ e).real, 0.0))
        sigma = trial.operators.sigma
        errors.append(
            EigenpairError(
                eig_index=i,
                reference_index=j,
                eigenvalue=float(trial.solution.eigenvalues[i]),
                eig_error=abs(float(trial.solution.eigenvalues[i] - ref_values[j])),
                l2_error=l2,
                h1_error=h1,
                jump_error=jump,
                dg_error=math.sqrt(h1 * h1 + l2 * l2 + sigma * jump * jump),
            )
        )
    return errors


# =============================================================================
# Piecewise expansions (bases that are not nested)
# =============================================================================


@dataclass(frozen=True)
class PiecewiseExpansion:
    """Columns of functions: plane waves outside the spheres, harmonics inside.

    Attributes:
        cell: Unit cell
        pw_integers: Integer triples of the plane-wave part, shape (P, 3)
        pw_coefficients: Plane-wave coefficients, shape (P, ncol)
        sites: Spheres the functions are expanded in (empty for plane waves only)
        radial_families: Radial family per site
        sphere_coefficients: Per site, shape (ncol, (L+1)^2, N+1)
    """

    cell: UnitCell
    pw_integers: np.ndarray
    pw_coefficients: np.ndarray
    sites: tuple[AtomicSite, ...] = ()
    radial_families: tuple[RadialFamily, ...] = ()
    sphere_coefficients: tuple[np.ndarray, ...] = ()

    @property
    def columns(self) -> int:
        return int(self.pw_coefficients.shape[1])

    @property
    def max_wavenumber(self) -> float:
        norms = np.linalg.norm(self.pw_integers.astype(float), axis=1)
        return float(self.cell.reciprocal_unit * np.max(norms))

    @classmethod
    def from_discretization(cls, disc: Discretization, columns: int) -> PiecewiseExpansion:
        basis = disc.basis
        vectors = disc.solution.eigenvectors[:, :columns]
        blocks = tuple(
            np.transpose(
                vectors[basis.site_slice(j)].reshape(basis.n_lm, basis.params.N + 1, -1),
                (2, 0, 1),
            )
            for j in range(len(basis.sites))
        )
        return cls(
            cell=basis.cell,
            pw_integers=basis.pw_integers,
            pw_coefficients=vectors[: basis.n_pw],
            sites=basis.sites,
            radial_families=basis.radial_families,
            sphere_coefficients=blocks,
        )

    @classmethod
    def from_planewaves(cls, pw: PlaneWaveSolution, columns: int) -> PiecewiseExpansion:
        return cls(
            cell=pw.cell,
            pw_integers=pw.pw_integers,
            pw_coefficients=pw.solution.eigenvectors[:, :columns],
        )

    def site_at(self, center: np.ndarray) -> int | None:
        for j, site in enumerate(self.sites):
            if np.allclose(site.position, center, rtol=0.0, atol=CENTER_TOLERANCE):
                return j
        return None


@dataclass(frozen=True)
class _RadialTables:
    """Harmonic coefficients of one expansion on the radial nodes of one ball."""

    planewave: np.ndarray  # (ncol, n_lm, Q)
    planewave_deriv: np.ndarray
    piecewise: np.ndarray
    piecewise_deriv: np.ndarray
    interface: float  # own sphere radius about the center, 0 when there is none
    jump: np.ndarray | None  # (ncol, n_lm) harmonic coefficients of u_out - u_in


def _planewave_harmonics(
    x: PiecewiseExpansion, center: np.ndarray, l_max: int, radii: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Harmonic coefficients about center, and their radial derivatives, at radii.

    sum_k c_k e_k = sum_lm f_lm(rho) Y_lm with
    f_lm(rho) = 4*pi/sqrt|Omega| sum_k c_k e^{ik.c} i^l j_l(|k| rho) conj(Y_lm(k_hat)).
    """
    k = x.cell.reciprocal_unit * x.pw_integers.astype(float)
    norms, theta, phi = direction_angles(k)
    ylm = np.conj(sph_harm_table(l_max, theta, phi))  # (n_lm, P)
    scale = 4.0 * math.pi / math.sqrt(x.cell.volume) * np.exp(1j * (k @ center))
    weighted = (x.pw_coefficients * scale[:, None]).T  # (ncol, P)
    argument = np.outer(norms, radii)  # (P, Q)

    shape = (x.columns, (l_max + 1) ** 2, radii.size)
    values = np.empty(shape, dtype=complex)
    derivs = np.empty(shape, dtype=complex)
    for l in range(l_max + 1):
        jl, djl = sph_bessel(l, argument)
        block = slice(l * l, (l + 1) ** 2)
        # (ncol, 2l+1, P) contracted against (P, Q)
        terms = (1j**l) * weighted[:, None, :] * ylm[block][None, :, :]
        values[:, block] = terms @ jl
        derivs[:, block] = terms @ (djl * norms[:, None])
    return values, derivs


def _sphere_harmonics(
    x: PiecewiseExpansion, site: int, l_max: int, radii: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Inner expansion of one site padded to l_max, shape (ncol, (l_max+1)^2, Q)."""
    blocks = x.sphere_coefficients[site]
    chi, dchi = x.radial_families[site].evaluate(radii)
    values = np.zeros((x.columns, (l_max + 1) ** 2, radii.size), dtype=complex)
    derivs = np.zeros_like(values)
    n_lm = blocks.shape[1]
    values[:, :n_lm] = blocks @ chi
    derivs[:, :n_lm] = blocks @ dchi
    return values, derivs


def _radial_tables(
    x: PiecewiseExpansion, center: np.ndarray, l_max: int, nodes: np.ndarray
) -> _RadialTables:
    planewave, planewave_deriv = _planewave_harmonics(x, center, l_max, nodes)
    site = x.site_at(center)
    if site is None:
        return _RadialTables(planewave, planewave_deriv, planewave, planewave_deriv, 0.0, None)

    radius = x.sites[site].radius
    inside = nodes < radius
    piecewise = planewave.copy()
    piecewise_deriv = planewave_deriv.copy()
    if np.any(inside):
        sphere, sphere_deriv = _sphere_harmonics(x, site, l_max, nodes[inside])
        piecewise[:, :, inside] = sphere
        piecewise_deriv[:, :, inside] = sphere_deriv

    surface = np.asarray([radius])
    outer, _ = _planewave_harmonics(x, center, l_max, surface)
    inner, _ = _sphere_harmonics(x, site, l_max, surface)
    return _RadialTables(
        planewave, planewave_deriv, piecewise, piecewise_deriv, radius, (outer - inner)[:, :, 0]
    )


def _ball_forms(
    a: np.ndarray, da: np.ndarray, b: np.ndarray, db: np.ndarray, w: np.ndarray, rho: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """L2 and gradient Grams over a ball from harmonic tables.

    int |grad u|^2 = sum_lm int (|f_lm'|^2 + l(l+1) |f_lm|^2 / rho^2) rho^2 drho.
    """
    l_max = math.isqrt(a.shape[1]) - 1
    centrifugal = np.asarray([l * (l + 1) for l in range(l_max + 1) for _ in range(2 * l + 1)])
    volume = w * rho**2
    l2 = np.einsum("alq,blq,q->ab", a.conj(), b, volume, optimize=True)
    h1 = np.einsum("alq,blq,q->ab", da.conj(), db, volume, optimize=True) + np.einsum(
        "alq,blq,l,q->ab", a.conj(), b, centrifugal, w, optimize=True
    )
    return l2, h1


def _common_modes(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row indices of the integer triples present in both sets."""
    extent = int(max(np.max(np.abs(a)), np.max(np.abs(b))))
    width = 2 * extent + 1

    def encode(n: np.ndarray) -> np.ndarray:
        shifted = n + extent
        return (shifted[:, 0] * width + shifted[:, 1]) * width + shifted[:, 2]

    _, ia, ib = np.intersect1d(encode(a), encode(b), return_indices=True)
    return ia, ib


@dataclass(frozen=True)
class _Grams:
    l2: np.ndarray
    h1: np.ndarray
    jump: np.ndarray


class _GramBuilder:
    """Cross Grams of two piecewise expansions over the whole cell.

    Cell integrals of the plane-wave parts are exact. Inside each ball of
    radius max(R_f, R_g) the plane-wave contribution is replaced by the
    region-aware one, both through harmonic tables on a shared radial rule.
    """

    def __init__(self, first: PiecewiseExpansion, second: PiecewiseExpansion) -> None:
        if first.cell != second.cell:
            raise ProblemValidationError("Cannot compare expansions on different cells.")
        self.cell = first.cell
        self.expansions = (first, second)
        centers: list[np.ndarray] = []
        for x in self.expansions:
            for site in x.sites:
                if not any(
                    np.allclose(site.position, c, rtol=0.0, atol=CENTER_TOLERANCE)
                    for c in centers
                ):
                    centers.append(site.position)
        self.balls = []
        for center in centers:
            radii = [
                x.sites[j].radius
                for x in self.expansions
                if (j := x.site_at(center)) is not None
            ]
            self.balls.append(
                AtomicSite(center=tuple(float(v) for v in center), radius=max(radii))
            )
        validate_sites(self.cell, self.balls)
        self.tables = [self._tables(ball) for ball in self.balls]

    def _tables(self, ball: AtomicSite) -> tuple[np.ndarray, np.ndarray, list[_RadialTables]]:
        center = ball.position
        q_max = max(x.max_wavenumber for x in self.expansions)
        blocks = [b for x in self.expansions for b in x.sphere_coefficients]
        l_floor = max((math.isqrt(b.shape[1]) - 1 for b in blocks), default=0)
        n_radial = max((b.shape[2] for b in blocks), default=1)
        l_max = bessel_tail_degree(q_max * ball.radius, HARMONIC_TAIL_TOLERANCE, floor=l_floor)

        breaks = sorted(
            {0.0, ball.radius}
            | {x.sites[j].radius for x in self.expansions if (j := x.site_at(center)) is not None}
        )
        nodes, weights = [], []
        for lo, hi in zip(breaks, breaks[1:]):
            count = n_radial + RADIAL_EXTRA_NODES + int(math.ceil(2.0 * q_max * (hi - lo)))
            r, w = gauss_legendre(count, lo, hi)
            nodes.append(r)
            weights.append(w)
        rho = np.concatenate(nodes)
        w = np.concatenate(weights)
        logger.debug(
            "ball_quadrature", radius=ball.radius, l_max=l_max, radial_nodes=int(rho.size)
        )
        return rho, w, [_radial_tables(x, center, l_max, rho) for x in self.expansions]

    def grams(self, i: int, j: int) -> _Grams:
        """Grams <f_a, g_b> with f = expansions[i], g = expansions[j]."""
        f, g = self.expansions[i], self.expansions[j]
        ia, ib = _common_modes(f.pw_integers, g.pw_integers)
        k2 = (self.cell.reciprocal_unit**2) * np.sum(
            f.pw_integers[ia].astype(float) ** 2, axis=1
        )
        cf = f.pw_coefficients[ia]
        cg = g.pw_coefficients[ib]
        l2 = cf.conj().T @ cg
        h1 = (cf * k2[:, None]).conj().T @ cg
        jump = np.zeros_like(l2)

        for rho, w, tables in self.tables:
            tf, tg = tables[i], tables[j]
            pw_l2, pw_h1 = _ball_forms(
                tf.planewave, tf.planewave_deriv, tg.planewave, tg.planewave_deriv, w, rho
            )
            local_l2, local_h1 = _ball_forms(
                tf.piecewise, tf.piecewise_deriv, tg.piecewise, tg.piecewise_deriv, w, rho
            )
            l2 += local_l2 - pw_l2
            h1 += local_h1 - pw_h1
            if (
                tf.jump is not None
                and tg.jump is not None
                and abs(tf.interface - tg.interface) <= CENTER_TOLERANCE
            ):
                jump += tf.interface**2 * (tf.jump.conj() @ tg.jump.T)
        return _Grams(l2=l2, h1=h1, jump=jump)


def piecewise_error(
    trial: PiecewiseExpansion,
    trial_eigenvalues: np.ndarray,
    reference: PiecewiseExpansion,
    reference_eigenvalues: np.ndarray,
    indices: Sequence[int],
    sigma: float,
) -> list[EigenpairError]:
    """Errors of tracked trial eigenpairs when the bases are not nested.

    Every norm is an exact Gram of the two expansions (plane-wave cell terms
    in closed form, ball terms by radial Gauss rules split at every sphere
    radius), so radius sweeps and plane-wave baselines get the same L2, broken
    H1, jump and DG errors as nested pairs.

    Raises:
        IndexMismatch: If tracked indices exceed the solved eigenpairs
        OverlappingSpheres: If the union of both sphere sets does not fit the cell
    """
    builder = _GramBuilder(trial, reference)
    tt, tr, rr = builder.grams(0, 0), builder.grams(0, 1), builder.grams(1, 1)
    mapping = match_eigenpairs(np.abs(tr.l2), indices)

    errors = []
    for i in indices:
        j = mapping[i]
        cluster = degenerate_cluster(reference_eigenvalues, j)
        block = np.ix_(cluster, cluster)
        a = np.linalg.solve(rr.l2[block], tr.l2[i, cluster].conj())
        norm2 = float(np.real(np.vdot(a, rr.l2[block] @ a)))
        if norm2 > 0.0:
            a = a / math.sqrt(norm2)
        else:
            a = np.eye(len(cluster), dtype=complex)[0]

        def squared(t_t: _Grams, t_r: _Grams, r_r: _Grams, form: str) -> float:
            own = float(np.real(getattr(t_t, form)[i, i]))
            cross = float(np.real(np.vdot(a, getattr(t_r, form)[i, cluster].conj())))
            ref = float(np.real(np.vdot(a, getattr(r_r, form)[block] @ a)))
            return max(own - 2.0 * cross + ref, 0.0)

        l2 = math.sqrt(squared(tt, tr, rr, "l2"))
        h1 = math.sqrt(squared(tt, tr, rr, "h1"))
        jump = math.sqrt(squared(tt, tr, rr, "jump"))
        errors.append(
            EigenpairError(
                eig_index=i,
                reference_index=j,
                eigenvalue=float(trial_eigenvalues[i]),
                eig_error=abs(float(trial_eigenvalues[i] - reference_eigenvalues[j])),
                l2_error=l2,
                h1_error=h1,
                jump_error=jump,
                dg_error=math.sqrt(h1 * h1 + l2 * l2 + sigma * jump * jump),
            )
        )
    return errors


def _tracked_columns(nev: int, indices: Sequence[int]) -> int:
    return min(nev, max(indices, default=-1) + 1)


def planewave_error(
    pw: PlaneWaveSolution, reference: Discretization, indices: Sequence[int]
) -> list[EigenpairError]:
    """Errors of a plane-wave solution against a DG reference.

    The DG norm uses the reference penalty; the plane-wave side has no jumps.
    """
    return piecewise_error(
        PiecewiseExpansion.from_planewaves(pw, _tracked_columns(pw.solution.nev, indices)),
        pw.solution.eigenvalues,
        PiecewiseExpansion.from_discretization(reference, reference.solution.nev),
        reference.solution.eigenvalues,
        indices,
        reference.operators.sigma,
    )
