"""Dense assembly of the DG overlap, Hamiltonian, Laplace and jump matrices.

Entries use the sesquilinear reading H_pq = a_DG(phi_q, phi_p) with the test
function phi_p conjugated. The Hamiltonian is split into pieces that do not
depend on each other:

    H = A_lap + V + C + sigma * J

with A_lap the volume gradient terms (carrying the 1/2 of the kinetic
operator), V the potential, C the symmetric flux terms and J the jump Gram
matrix. Only V depends on the potential, so the SCF loop and the penalty
sweeps reuse the rest.

Plane-wave/plane-wave entries depend on k_q - k_p only; they are tabulated
once on the difference cube |n_i| <= 2K and gathered into the matrix.

Usage:
    penalty = PenaltySpec.for_params(params, C_sigma=20.0)
    ops = assemble_operators(basis, potential, penalty)
    ops.H, ops.M, ops.A_lap, ops.J
"""

from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.special

from apwdg.basis import BasisParams, MixedBasis
from apwdg.core.errors import OutOfRange, TruncationWarning
from apwdg.core.logging import get_logger
from apwdg.potential import PotentialSpec, SphereExpansion, sphere_expansion
from apwdg.specialfn import (
    RadialFamily,
    direction_angles,
    gauss_legendre,
    gaunt_coupling_matrix,
    lm_index,
    sph_bessel,
    sph_bessel_table,
    sph_harm_table,
)

logger = get_logger(__name__)

# Radial Gauss-Legendre points beyond the radial degree N
RADIAL_EXTRA_POINTS = 10
# Relative size of the highest-l potential shell above which a TruncationWarning is issued
EXPANSION_TAIL_TOLERANCE = 1e-6
# Rows of the plane-wave block gathered per step
ROW_CHUNK = 512


# =============================================================================
# Penalty
# =============================================================================


def penalty_sigma(params: BasisParams, C_sigma: float) -> float:
    """sigma = C_sigma * varrho^(2 + 2*epsilon)."""
    if not C_sigma > 0.0:
        raise OutOfRange(f"Penalty constant C_sigma={C_sigma} must be positive.")
    return C_sigma * float(params.varrho) ** (2.0 + 2.0 * params.epsilon)


@dataclass(frozen=True)
class PenaltySpec:
    """Jump penalty sigma = C_sigma * varrho^(2+2*epsilon)."""

    C_sigma: float
    epsilon: float
    sigma: float

    @classmethod
    def for_params(cls, params: BasisParams, C_sigma: float) -> PenaltySpec:
        return cls(C_sigma=C_sigma, epsilon=params.epsilon, sigma=penalty_sigma(params, C_sigma))


# =============================================================================
# Radial quadrature
# =============================================================================


@dataclass(frozen=True)
class RadialQuadrature:
    """Gauss-Legendre rule on [0, R] with the radial basis tabulated on it.

    Attributes:
        nodes: Radii
        weights: Weights (without the rho^2 Jacobian)
        values: chi_n at the nodes, shape (N+1, n_nodes)
        derivs: chi_n' at the nodes
        surface_values: chi_n(R)
        surface_derivs: chi_n'(R)
    """

    nodes: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    derivs: np.ndarray
    surface_values: np.ndarray
    surface_derivs: np.ndarray


def radial_points(N: int, q_max: float, radius: float) -> int:
    """Number of radial nodes: N + 10, plus ceil(q_max * R) for oscillatory j_l(q rho) weights."""
    return N + RADIAL_EXTRA_POINTS + int(math.ceil(q_max * radius))


def build_radial_quadrature(family: RadialFamily, n_points: int) -> RadialQuadrature:
    nodes, weights = gauss_legendre(n_points, 0.0, family.radius)
    values, derivs = family.evaluate(nodes)
    surface_values, surface_derivs = family.evaluate(np.asarray([family.radius]))
    return RadialQuadrature(
        nodes=nodes,
        weights=weights,
        values=values,
        derivs=derivs,
        surface_values=surface_values[:, 0],
        surface_derivs=surface_derivs[:, 0],
    )


# =============================================================================
# Geometry-dependent tables
# =============================================================================


@dataclass
class AssemblyContext:
    """Tables shared by every matrix built on one basis."""

    basis: MixedBasis

    @property
    def extent(self) -> int:
        """Half-width 2K of the difference cube."""
        return 2 * self.basis.params.K

    @property
    def width(self) -> int:
        return 2 * self.extent + 1

    @cached_property
    def q_max(self) -> float:
        return self.basis.cell.reciprocal_unit * self.extent * math.sqrt(3.0)

    @cached_property
    def quadratures(self) -> tuple[RadialQuadrature, ...]:
        params = self.basis.params
        return tuple(
            build_radial_quadrature(
                family, radial_points(params.N, self.q_max, family.radius)
            )
            for family in self.basis.radial_families
        )

    @cached_property
    def cube_integers(self) -> np.ndarray:
        """All difference triples, C-ordered over the (2E+1)^3 cube."""
        axis = np.arange(-self.extent, self.extent + 1)
        grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1)
        return grid.reshape(-1, 3)

    @cached_property
    def cube_k(self) -> np.ndarray:
        return self.basis.cell.reciprocal_unit * self.cube_integers.astype(float)

    @cached_property
    def cube_shells(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct |q| values on the cube and the shell index of every cube point."""
        n = self.cube_integers
        norm2 = np.einsum("ij,ij->i", n, n)
        shells, shell_of = np.unique(norm2, return_inverse=True)
        return self.basis.cell.reciprocal_unit * np.sqrt(shells.astype(float)), shell_of

    @cached_property
    def pw_linear(self) -> np.ndarray:
        """Linear cube index of each plane-wave triple without offset."""
        n = self.basis.pw_integers.astype(np.int64)
        w = self.width
        return (n[:, 0] * w + n[:, 1]) * w + n[:, 2]

    @property
    def cube_offset(self) -> int:
        e, w = self.extent, self.width
        return (e * w + e) * w + e

    def gather(self, table: np.ndarray, rows: slice) -> np.ndarray:
        """Matrix block T[n_q - n_p] for plane-wave rows p in `rows` and all columns q."""
        lin = self.pw_linear
        index = lin[None, :] - lin[rows, None] + self.cube_offset
        return table[index]

    @cached_property
    def site_phases(self) -> list[np.ndarray]:
        """e^{i q . R_j} on the cube, per site."""
        return [np.exp(1j * (self.cube_k @ site.position)) for site in self.basis.sites]

    @cached_property
    def pw_surface(self) -> list[dict[str, np.ndarray]]:
        """Per site: j_l(|k_p| R), j_l'(|k_p| R) and Y_lm(k_hat_p) for the coupling block."""
        basis = self.basis
        norms, theta, phi = direction_angles(basis.pw_k)
        ylm = sph_harm_table(basis.params.L, theta, phi)
        tables = []
        for site in basis.sites:
            jl, djl = sph_bessel_table(basis.params.L, norms * site.radius)
            tables.append(
                {
                    "jl": jl,
                    "djl": djl,
                    "norms": norms,
                    "ylm": ylm,
                    "phase": np.exp(-1j * (basis.pw_k @ site.position)),
                }
            )
        return tables


# =============================================================================
# Static blocks
# =============================================================================


def _overlap_table(ctx: AssemblyContext) -> np.ndarray:
    """U(q) = delta_q0 - sum_j e^{iq.R_j} 4 pi R_j^2 j_1(|q|R_j) / (|q| |Omega|)."""
    volume = ctx.basis.cell.volume
    qnorm = np.linalg.norm(ctx.cube_k, axis=1)
    table = np.zeros(qnorm.size, dtype=complex)
    zero = qnorm == 0.0
    table[zero] = 1.0
    safe = np.where(zero, 1.0, qnorm)
    for site, phase in zip(ctx.basis.sites, ctx.site_phases, strict=True):
        ball = np.where(
            zero,
            4.0 * math.pi * site.radius**3 / 3.0,
            4.0
            * math.pi
            * site.radius**2
            * scipy.special.spherical_jn(1, qnorm * site.radius)
            / safe,
        )
        table -= phase * ball / volume
    return table


def _surface_tables(ctx: AssemblyContext) -> tuple[np.ndarray, np.ndarray]:
    """Plane-wave surface integrals on the cube.

    Returns:
        (J_table, C_table): sum_j (4 pi R^2/|Omega|) e^{iq.R_j} j_0(|q|R) and the flux
        counterpart -(1/4)|q| j_1(|q|R) with the same prefactor.
    """
    volume = ctx.basis.cell.volume
    qnorm = np.linalg.norm(ctx.cube_k, axis=1)
    jump = np.zeros(qnorm.size, dtype=complex)
    flux = np.zeros(qnorm.size, dtype=complex)
    for site, phase in zip(ctx.basis.sites, ctx.site_phases, strict=True):
        x = qnorm * site.radius
        prefactor = 4.0 * math.pi * site.radius**2 / volume * phase
        jump += prefactor * scipy.special.spherical_jn(0, x)
        flux += prefactor * (-0.25 * qnorm * scipy.special.spherical_jn(1, x))
    return jump, flux


@dataclass(frozen=True)
class StaticOperators:
    """Potential-independent matrices of one basis."""

    M: np.ndarray
    A_lap: np.ndarray
    C: np.ndarray
    J: np.ndarray


def _sphere_static_blocks(
    basis: MixedBasis, site: int, quad: RadialQuadrature
) -> dict[str, np.ndarray]:
    L = basis.params.L
    radius = basis.sites[site].radius
    rho2w = quad.weights * quad.nodes**2
    gram = (quad.values * rho2w) @ quad.values.T
    grad = (quad.derivs * rho2w) @ quad.derivs.T
    centrifugal = (quad.values * quad.weights) @ quad.values.T
    chi, dchi = quad.surface_values, quad.surface_derivs
    flux = radius**2 * (-0.25 * np.outer(chi, dchi) - 0.25 * np.outer(dchi, chi))
    jump = radius**2 * np.outer(chi, chi)

    identity_lm = np.eye(basis.n_lm)
    l_of = np.asarray([l for l in range(L + 1) for _ in range(2 * l + 1)], dtype=float)
    kinetic = np.zeros((basis.sphere_block_size,) * 2)
    for i, l in enumerate(l_of):
        block = slice(i * (basis.params.N + 1), (i + 1) * (basis.params.N + 1))
        kinetic[block, block] = 0.5 * (grad + l * (l + 1.0) * centrifugal)
    return {
        "M": np.kron(identity_lm, gram),
        "A_lap": kinetic,
        "C": np.kron(identity_lm, flux),
        "J": np.kron(identity_lm, jump),
    }


def _coupling_blocks(
    ctx: AssemblyContext, site: int, quad: RadialQuadrature
) -> tuple[np.ndarray, np.ndarray]:
    """Plane-wave rows, sphere columns of the flux and jump matrices for one site.

    Column (l, m, n) of row p:
        C = (4 pi R^2/sqrt|Omega|) e^{-ik_p.R} (-i)^l Y_lm(k_hat_p)
            [ (1/4) j_l chi_n'(R) - (1/4) chi_n(R) |k_p| j_l' ]
        J = -(4 pi R^2/sqrt|Omega|) e^{-ik_p.R} (-i)^l Y_lm(k_hat_p) j_l chi_n(R)
    with j_l evaluated at |k_p| R.
    """
    basis = ctx.basis
    tables = ctx.pw_surface[site]
    radius = basis.sites[site].radius
    prefactor = 4.0 * math.pi * radius**2 / math.sqrt(basis.cell.volume) * tables["phase"]
    L = basis.params.L
    chi, dchi = quad.surface_values, quad.surface_derivs

    flux = np.empty((basis.n_pw, basis.n_lm, basis.params.N + 1), dtype=complex)
    jump = np.empty_like(flux)
    for l in range(L + 1):
        jl = tables["jl"][l]
        kdjl = tables["norms"] * tables["djl"][l]
        for m in range(-l, l + 1):
            i = lm_index(l, m)
            angular = prefactor * ((-1j) ** l) * tables["ylm"][i]
            flux[:, i, :] = angular[:, None] * (
                0.25 * np.outer(jl, dchi) - 0.25 * np.outer(kdjl, chi)
            )
            jump[:, i, :] = -angular[:, None] * np.outer(jl, chi)
    shape = (basis.n_pw, basis.sphere_block_size)
    return flux.reshape(shape), jump.reshape(shape)


def assemble_static(ctx: AssemblyContext) -> StaticOperators:
    basis = ctx.basis
    dim = basis.total_dim
    M = np.zeros((dim, dim), dtype=complex)
    A = np.zeros_like(M)
    C = np.zeros_like(M)
    J = np.zeros_like(M)

    u_table = _overlap_table(ctx)
    j_table, c_table = _surface_tables(ctx)
    pw = basis.n_pw
    k = basis.pw_k
    for start in range(0, pw, ROW_CHUNK):
        rows = slice(start, min(start + ROW_CHUNK, pw))
        u_block = ctx.gather(u_table, rows)
        M[rows, :pw] = u_block
        A[rows, :pw] = 0.5 * (k[rows] @ k.T) * u_block
        J[rows, :pw] = ctx.gather(j_table, rows)
        C[rows, :pw] = ctx.gather(c_table, rows)

    for j, quad in enumerate(ctx.quadratures):
        block = basis.site_slice(j)
        static = _sphere_static_blocks(basis, j, quad)
        M[block, block] = static["M"]
        A[block, block] = static["A_lap"]
        C[block, block] = static["C"]
        J[block, block] = static["J"]

        flux, jump = _coupling_blocks(ctx, j, quad)
        C[:pw, block] = flux
        C[block, :pw] = flux.conj().T
        J[:pw, block] = jump
        J[block, :pw] = jump.conj().T

    return StaticOperators(
        M=_hermitize(M), A_lap=_hermitize(A), C=_hermitize(C), J=_hermitize(J)
    )


def _hermitize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.conj().T)


# =============================================================================
# Potential blocks
# =============================================================================


def _ball_potential_table(
    ctx: AssemblyContext, expansion: SphereExpansion, quad: RadialQuadrature
) -> np.ndarray:
    """(1/|Omega|) int_ball V e^{iq.r} on the cube for one site.

    = (4 pi/|Omega|) e^{iq.R_j} sum_lm i^l Y_lm(q_hat) int rho^2 v_lm(rho) j_l(|q| rho) drho
    """
    shell_q, shell_of = ctx.cube_shells
    _, theta, phi = direction_angles(ctx.cube_k)
    v = expansion.full_table()  # ((l_pot+1)^2, nodes)
    rho2w = quad.weights * quad.nodes**2
    table = np.zeros(shell_of.size, dtype=complex)
    for l in range(expansion.l_pot + 1):
        bessel, _ = sph_bessel(l, np.outer(shell_q, quad.nodes))  # (shells, nodes)
        radial = (bessel * rho2w) @ v[lm_index(l, -l) : lm_index(l, l) + 1].T  # (shells, 2l+1)
        ylm = np.stack(
            [scipy.special.sph_harm_y(l, m, theta, phi) for m in range(-l, l + 1)], axis=1
        )
        table += (1j**l) * np.sum(ylm * radial[shell_of], axis=1)
    phase = ctx.site_phases[expansion.site]
    return 4.0 * math.pi / ctx.basis.cell.volume * phase * table


def _sphere_potential_block(
    basis: MixedBasis, expansion: SphereExpansion, quad: RadialQuadrature
) -> np.ndarray:
    """Gaunt-coupled potential block of one site in (l, m, n) order."""
    n_radial = basis.params.N + 1
    v = expansion.full_table()
    rho2w = quad.weights * quad.nodes**2
    # I[hat, n, n'] = int rho^2 chi_n chi_n' v_hat
    integrals = np.einsum("ni,mi,hi->hnm", quad.values, quad.values * rho2w, v)
    coupling = gaunt_coupling_matrix(basis.params.L, expansion.l_pot)
    contracted = coupling @ integrals.reshape(integrals.shape[0], -1)
    contracted = contracted.reshape(basis.n_lm, basis.n_lm, n_radial, n_radial)
    return contracted.transpose(0, 2, 1, 3).reshape(
        basis.sphere_block_size, basis.sphere_block_size
    )


def _check_expansion_tail(expansion: SphereExpansion) -> None:
    norms = expansion.tail_norms()
    peak = float(np.max(norms))
    if peak == 0.0:
        return
    tail = float(norms[-1]) / peak
    if tail > EXPANSION_TAIL_TOLERANCE:
        message = (
            f"Potential expansion of site {expansion.site} truncated at l_pot={expansion.l_pot} "
            f"has relative tail {tail:.3e} > {EXPANSION_TAIL_TOLERANCE:.0e}. "
            "Fix: raise potential.l_pot."
        )
        logger.warning("potential_expansion_truncated", site=expansion.site, tail=tail)
        warnings.warn(message, TruncationWarning, stacklevel=3)


def build_sphere_expansions(
    basis: MixedBasis,
    potential: PotentialSpec,
    l_pot: int | None = None,
    threads: int = 1,
    ctx: AssemblyContext | None = None,
) -> list[SphereExpansion]:
    """Expand the potential in every sphere at the assembly radial nodes."""
    ctx = ctx or AssemblyContext(basis)
    l_pot = 2 * basis.params.L if l_pot is None else l_pot

    def expand(j: int) -> SphereExpansion:
        return sphere_expansion(potential, j, l_pot, ctx.quadratures[j].nodes)

    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        return list(pool.map(expand, range(len(basis.sites))))


def assemble_potential(
    ctx: AssemblyContext, potential: PotentialSpec, expansions: list[SphereExpansion]
) -> np.ndarray:
    """Potential matrix V_pq = int V phi_q conj(phi_p) over both regions."""
    basis = ctx.basis
    dim = basis.total_dim
    V = np.zeros((dim, dim), dtype=complex)
    volume = basis.cell.volume

    # Full-cell term |Omega|^{-1/2} V_{-q}, minus each ball
    table = potential.coefficients(-ctx.cube_integers) / math.sqrt(volume)
    for expansion in expansions:
        _check_expansion_tail(expansion)
        table -= _ball_potential_table(ctx, expansion, ctx.quadratures[expansion.site])

    pw = basis.n_pw
    for start in range(0, pw, ROW_CHUNK):
        rows = slice(start, min(start + ROW_CHUNK, pw))
        V[rows, :pw] = ctx.gather(table, rows)

    for expansion in expansions:
        block = basis.site_slice(expansion.site)
        V[block, block] = _sphere_potential_block(
            basis, expansion, ctx.quadratures[expansion.site]
        )
    return _hermitize(V)


# =============================================================================
# Public operations
# =============================================================================


@dataclass(frozen=True)
class AssembledOperators:
    """Matrices of one discretization.

    Attributes:
        basis: Basis the matrices belong to
        H: Hamiltonian A_lap + V + C + sigma*J
        M: Overlap (L2 Gram)
        A_lap: Volume gradient terms, 1/2 sum_regions int grad phi_q . conj(grad phi_p)
        J: Jump Gram int_Gamma [phi_q] . conj([phi_p])
        C: Symmetric flux terms
        V: Potential matrix
        sigma: Penalty the H was built with
    """

    basis: MixedBasis
    H: np.ndarray
    M: np.ndarray
    A_lap: np.ndarray
    J: np.ndarray
    C: np.ndarray
    V: np.ndarray
    sigma: float

    @property
    def total_dim(self) -> int:
        return self.basis.total_dim

    def with_potential(self, V: np.ndarray) -> AssembledOperators:
        """Same discretization with another potential matrix."""
        return AssembledOperators(
            basis=self.basis, H=self.A_lap + V + self.C + self.sigma * self.J, M=self.M,
            A_lap=self.A_lap, J=self.J, C=self.C, V=V, sigma=self.sigma,
        )

    def with_sigma(self, sigma: float) -> AssembledOperators:
        """Same discretization with another penalty."""
        return AssembledOperators(
            basis=self.basis, H=self.A_lap + self.V + self.C + sigma * self.J, M=self.M,
            A_lap=self.A_lap, J=self.J, C=self.C, V=self.V, sigma=sigma,
        )

    def dg_norm_squared(self, vector: np.ndarray) -> float:
        """||u||_DG^2 = sum ||grad u||^2 + ||u||^2 + sigma ||[u]||^2."""
        v = np.asarray(vector, dtype=complex)
        grad = 2.0 * np.vdot(v, self.A_lap @ v).real
        mass = np.vdot(v, self.M @ v).real
        jump = np.vdot(v, self.J @ v).real
        return float(grad + mass + self.sigma * jump)


def assemble_overlap(basis: MixedBasis, ctx: AssemblyContext | None = None) -> np.ndarray:
    """Overlap matrix M (plane-wave, sphere and zero coupling blocks)."""
    ctx = ctx or AssemblyContext(basis)
    return assemble_static(ctx).M


def assemble_laplace_mass_jump(
    basis: MixedBasis, penalty: PenaltySpec | None = None, ctx: AssemblyContext | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Laplace part A_lap and jump Gram J.

    J does not depend on the penalty; the argument is accepted for symmetry
    with assemble_hamiltonian.
    """
    ctx = ctx or AssemblyContext(basis)
    static = assemble_static(ctx)
    return static.A_lap, static.J


def assemble_hamiltonian(
    basis: MixedBasis,
    potential: PotentialSpec,
    sphere_expansions: list[SphereExpansion],
    penalty: PenaltySpec,
    ctx: AssemblyContext | None = None,
) -> np.ndarray:
    """Hamiltonian H = A_lap + V + C + sigma*J."""
    ctx = ctx or AssemblyContext(basis)
    static = assemble_static(ctx)
    V = assemble_potential(ctx, potential, sphere_expansions)
    return static.A_lap + V + static.C + penalty.sigma * static.J


def assemble_operators(
    basis: MixedBasis,
    potential: PotentialSpec,
    penalty: PenaltySpec,
    l_pot: int | None = None,
    threads: int = 1,
) -> AssembledOperators:
    """Build every matrix of one discretization.

    Args:
        basis: Mixed basis
        potential: Potential
        penalty: Jump penalty
        l_pot: Angular truncation of the sphere expansions (default 2L)
        threads: Worker threads for the per-site expansions
    """
    started = time.perf_counter()
    ctx = AssemblyContext(basis)
    static = assemble_static(ctx)
    expansions = build_sphere_expansions(basis, potential, l_pot, threads, ctx)
    V = assemble_potential(ctx, potential, expansions)
    ops = AssembledOperators(
        basis=basis,
        H=static.A_lap + V + static.C + penalty.sigma * static.J,
        M=static.M,
        A_lap=static.A_lap,
        J=static.J,
        C=static.C,
        V=V,
        sigma=penalty.sigma,
    )
    logger.info(
        "matrices_assembled",
        total_dim=basis.total_dim,
        n_pw=basis.n_pw,
        sigma=penalty.sigma,
        radial_points=[q.nodes.size for q in ctx.quadratures],
        duration_ms=round((time.perf_counter() - started) * 1000, 1),
    )
    return ops


def hermiticity_defect(matrix: np.ndarray) -> float:
    """max|A - A^H| / max|A| (0 for the zero matrix)."""
    scale = float(np.max(np.abs(matrix)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(matrix - matrix.conj().T))) / scale


def dump_operators(ops: AssembledOperators, path: Path) -> Path:
    """Write H, M, A_lap and J to a compressed .npz file for debugging."""
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(path, H=ops.H, M=ops.M, A_lap=ops.A_lap, J=ops.J, sigma=ops.sigma)
    logger.info("matrices_dumped", path=str(path), total_dim=ops.total_dim)
    return path
