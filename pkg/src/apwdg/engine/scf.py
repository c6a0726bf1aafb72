"""Self-consistent field loop for the Hartree problem.

Each iteration assembles H with V_ext + V_H[rho_in], solves for the lowest
orbitals, builds rho_out on a uniform grid and mixes linearly:

    rho_in <- (1 - alpha) rho_in + alpha rho_out

until ||rho_out - rho_in||_2 (Fourier coefficients) drops below tol. The
potential-independent matrices and the external-potential matrix are built
once and reused.

Usage:
    state = scf_solve(cell, sites, params, ScfConfig(mixing_alpha=0.3), penalty)
    state.solution.eigenvalues[0], state.history[-1].residual
"""

from __future__ import annotations

import math
import time
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from apwdg.basis import BasisParams, DgFunction, MixedBasis, build_mixed_basis, evaluate_sphere
from apwdg.core.errors import GridTooCoarse, NotConverged, OutOfRange
from apwdg.core.logging import get_logger
from apwdg.engine.assembly import (
    AssembledOperators,
    AssemblyContext,
    PenaltySpec,
    assemble_potential,
    assemble_static,
    build_sphere_expansions,
)
from apwdg.engine.solver import EigenSolution, solve_lowest
from apwdg.geometry import AtomicSite, UnitCell, lattice_integers
from apwdg.potential import (
    FourierSeries,
    PotentialSpec,
    hartree_fourier,
    periodized_coulomb_fourier,
)
from apwdg.specialfn import direction_angles

logger = get_logger(__name__)

# Largest |int rho - sum_i f_i| accepted without a warning
CHARGE_TOLERANCE = 1e-6


@dataclass(frozen=True)
class ScfConfig:
    """SCF settings.

    Attributes:
        occupation: Electrons per occupied orbital (2 for a closed shell)
        n_occupied: Number of occupied orbitals
        mixing_alpha: Linear mixing weight in (0, 1]
        max_iters: Iteration limit
        tol: Density residual threshold
        density_grid: Points per axis of the density grid (odd)
        hartree_scale: Multiplier of the Hartree potential (0 gives the linear problem)
    """

    occupation: float = 2.0
    n_occupied: int = 1
    mixing_alpha: float = 0.3
    max_iters: int = 50
    tol: float = 1e-6
    density_grid: int = 65
    hartree_scale: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.mixing_alpha <= 1.0:
            raise OutOfRange(f"mixing_alpha={self.mixing_alpha} must be in (0, 1].")
        if not self.tol > 0.0:
            raise OutOfRange(f"SCF tol={self.tol} must be positive.")
        if self.max_iters < 1 or self.n_occupied < 1:
            raise OutOfRange("SCF max_iters and n_occupied must be >= 1.")

    @property
    def occupations(self) -> list[float]:
        return [self.occupation] * self.n_occupied


@dataclass(frozen=True)
class ScfIteration:
    """One SCF step.

    Attributes:
        iteration: 1-based step number
        residual: ||rho_out - rho_in||_2 over the Fourier coefficients
        eigenvalue: Lowest eigenvalue of the step
        charge_deviation: |int rho_out - sum_i f_i| before any rescaling
        grid_charge_error: Grid quadrature of int rho_out minus sum_i f_i,
            the amount density_fourier rescales away
    """

    iteration: int
    residual: float
    eigenvalue: float
    charge_deviation: float
    grid_charge_error: float = 0.0


@dataclass
class ScfState:
    """Progress of an SCF run.

    Attributes:
        iteration: Iterations performed
        density: Current density Fourier coefficients
        solution: Eigenpairs of the last solve
        history: One entry per iteration
        converged: True when the residual fell below tol
        operators: Matrices of the last solve
    """

    iteration: int
    density: FourierSeries
    solution: EigenSolution
    history: list[ScfIteration] = field(default_factory=list)
    converged: bool = False
    operators: AssembledOperators | None = None


def _grid_points(cell: UnitCell, grid_n: int) -> np.ndarray:
    """Uniform periodic grid x_a = D a/n - D/2, shape (n, n, n, 3)."""
    axis = cell.edge_length * np.arange(grid_n) / grid_n - cell.edge_length / 2.0
    return np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1)


def _sign_pattern(n: np.ndarray) -> np.ndarray:
    return np.where(np.sum(n, axis=-1) % 2 == 0, 1.0, -1.0)


def _orbital_on_grid(fn: DgFunction, grid_n: int, points: np.ndarray) -> np.ndarray:
    """Region-aware values of one orbital on the density grid."""
    basis = fn.basis
    cube = np.zeros((grid_n,) * 3, dtype=complex)
    n = basis.pw_integers
    # e^{ik.x} on the shifted grid carries (-1)^{n1+n2+n3}
    cube[n[:, 0] % grid_n, n[:, 1] % grid_n, n[:, 2] % grid_n] = (
        fn.pw_coefficients * _sign_pattern(n)
    )
    values = np.fft.ifftn(cube) * grid_n**3 / math.sqrt(basis.cell.volume)

    flat_points = points.reshape(-1, 3)
    flat_values = values.reshape(-1)
    for j, site in enumerate(basis.sites):
        rho, theta, phi = direction_angles(flat_points - site.position)
        inside = rho <= site.radius
        if np.any(inside):
            flat_values[inside] = evaluate_sphere(fn, j, rho[inside], theta[inside], phi[inside])
    return flat_values.reshape((grid_n,) * 3)


def _check_density_request(
    solution: EigenSolution, occupations: Sequence[float], grid_n: int, k_cutoff: int
) -> None:
    if grid_n < 2 * k_cutoff + 1:
        raise GridTooCoarse(
            f"Density grid {grid_n}^3 cannot resolve Fourier modes up to K_pot={k_cutoff}. "
            f"Fix: set scf.density_grid >= {2 * k_cutoff + 1}."
        )
    if len(occupations) > solution.nev:
        raise OutOfRange(
            f"{len(occupations)} occupied orbitals requested, only {solution.nev} solved."
        )


def density_on_grid(
    basis: MixedBasis, solution: EigenSolution, occupations: Sequence[float], grid_n: int
) -> np.ndarray:
    """Raw rho = sum_i f_i |phi_i|^2 on the uniform grid, shape (n, n, n)."""
    points = _grid_points(basis.cell, grid_n)
    density = np.zeros((grid_n,) * 3)
    for i, occupation in enumerate(occupations):
        if occupation == 0.0:
            continue
        orbital = DgFunction(basis, solution.eigenvectors[:, i])
        density += occupation * np.abs(_orbital_on_grid(orbital, grid_n, points)) ** 2
    return density


def grid_charge(cell: UnitCell, density: np.ndarray) -> float:
    """Uniform-grid quadrature of int_cell rho."""
    return float(density.sum() * cell.volume / density.size)


def orbital_charge(M: np.ndarray, solution: EigenSolution, occupations: Sequence[float]) -> float:
    """Exact int_cell rho = sum_i f_i <phi_i, M phi_i>, region by region.

    Uses the assembled overlap, so no sampling enters and nothing is rescaled.
    """
    vectors = solution.eigenvectors[:, : len(occupations)]
    norms = np.real(np.einsum("ai,ab,bi->i", vectors.conj(), M, vectors))
    return float(np.dot(np.asarray(occupations, dtype=float), norms))


def _fourier_of_grid(
    cell: UnitCell, density: np.ndarray, k_cutoff: int, target: float
) -> FourierSeries:
    grid_n = density.shape[0]
    charge = grid_charge(cell, density)
    if target > 0.0 and charge > 0.0:
        logger.debug("density_renormalized", charge=charge, target=target)
        density = density * (target / charge)

    transform = np.fft.fftn(density)
    n = lattice_integers(k_cutoff)
    coefficients = (
        transform[n[:, 0] % grid_n, n[:, 1] % grid_n, n[:, 2] % grid_n]
        * _sign_pattern(n)
        * (cell.volume / grid_n**3)
        / math.sqrt(cell.volume)
    )
    return FourierSeries(cell=cell, n=n, coefficients=coefficients)


def density_fourier(
    basis: MixedBasis,
    solution: EigenSolution,
    occupations: Sequence[float],
    grid_n: int,
    k_cutoff: int,
) -> FourierSeries:
    """Fourier coefficients of rho = sum_i f_i |phi_i|^2 up to |n| <= k_cutoff.

    The grid density is rescaled so that its mean mode carries sum_i f_i.
    The quadrature error this hides is reported by scf_solve as
    ScfIteration.grid_charge_error.

    Raises:
        GridTooCoarse: If grid_n < 2*k_cutoff + 1
    """
    _check_density_request(solution, occupations, grid_n, k_cutoff)
    density = density_on_grid(basis, solution, occupations, grid_n)
    return _fourier_of_grid(basis.cell, density, k_cutoff, float(sum(occupations)))


def hartree_potential(
    density: FourierSeries, sites: Sequence[AtomicSite], k_cutoff: int, scale: float = 1.0
) -> PotentialSpec:
    """Potential spec carrying scale * V_H[rho] as a smooth Fourier series."""
    return PotentialSpec(
        cell=density.cell,
        sites=tuple(sites),
        k_cutoff=k_cutoff,
        coulomb_scale=0.0,
        smooth=hartree_fourier(density).scaled(scale),
    )


def scf_solve(
    cell: UnitCell,
    sites: Sequence[AtomicSite],
    params: BasisParams,
    scf_config: ScfConfig,
    penalty: PenaltySpec,
    k_pot: int | None = None,
    l_pot: int | None = None,
    nev: int | None = None,
    threads: int = 1,
) -> ScfState:
    """Run the Hartree SCF loop from the bare-nucleus guess.

    Args:
        cell: Unit cell
        sites: Atomic sites
        params: Basis parameters
        scf_config: SCF settings
        penalty: Jump penalty
        k_pot: Potential cutoff (default 4K)
        l_pot: Sphere expansion cutoff (default 2L)
        nev: Eigenpairs per solve (default n_occupied)
        threads: Worker threads for the per-site expansions

    Raises:
        NotConverged: If max_iters is reached (history attached)
    """
    k_pot = 4 * params.K if k_pot is None else k_pot
    nev = max(nev or scf_config.n_occupied, scf_config.n_occupied)
    occupations = scf_config.occupations
    target = float(sum(occupations))
    grid_n = scf_config.density_grid

    basis = build_mixed_basis(cell, sites, params)
    ctx = AssemblyContext(basis)
    static = assemble_static(ctx)
    external = periodized_coulomb_fourier(cell, sites, k_pot)
    V_ext = assemble_potential(
        ctx, external, build_sphere_expansions(basis, external, l_pot, threads, ctx)
    )
    base = AssembledOperators(
        basis=basis,
        H=static.A_lap + V_ext + static.C + penalty.sigma * static.J,
        M=static.M,
        A_lap=static.A_lap,
        J=static.J,
        C=static.C,
        V=V_ext,
        sigma=penalty.sigma,
    )

    solution = solve_lowest(base, nev)
    density_in = density_fourier(basis, solution, occupations, grid_n, k_pot)
    state = ScfState(iteration=0, density=density_in, solution=solution, operators=base)

    for iteration in range(1, scf_config.max_iters + 1):
        started = time.perf_counter()
        if scf_config.hartree_scale != 0.0:
            hartree = hartree_potential(density_in, sites, k_pot, scf_config.hartree_scale)
            V_h = assemble_potential(
                ctx, hartree, build_sphere_expansions(basis, hartree, l_pot, threads, ctx)
            )
            ops = base.with_potential(V_ext + V_h)
        else:
            ops = base

        solution = solve_lowest(ops, nev)
        raw = density_on_grid(basis, solution, occupations, grid_n)
        density_out = _fourier_of_grid(cell, raw, k_pot, target)
        residual = float(np.linalg.norm(density_out.coefficients - density_in.coefficients))
        record = ScfIteration(
            iteration=iteration,
            residual=residual,
            eigenvalue=float(solution.eigenvalues[0]),
            charge_deviation=abs(orbital_charge(ops.M, solution, occupations) - target),
            grid_charge_error=grid_charge(cell, raw) - target,
        )
        if record.charge_deviation > CHARGE_TOLERANCE:
            logger.warning(
                "scf_charge_not_conserved",
                iteration=iteration,
                charge_deviation=record.charge_deviation,
            )
        state.history.append(record)
        state.iteration = iteration
        state.solution = solution
        state.operators = ops
        logger.info(
            "scf_iteration",
            iteration=iteration,
            residual=residual,
            eigenvalue=record.eigenvalue,
            grid_charge_error=record.grid_charge_error,
            duration_ms=round((time.perf_counter() - started) * 1000, 1),
        )

        if residual < scf_config.tol:
            state.density = density_out
            state.converged = True
            logger.info("scf_converged", iterations=iteration, eigenvalue=record.eigenvalue)
            return state

        alpha = scf_config.mixing_alpha
        density_in = FourierSeries(
            cell=cell,
            n=density_in.n,
            coefficients=(1.0 - alpha) * density_in.coefficients
            + alpha * density_out.coefficients,
        )
        state.density = density_in

    raise NotConverged(
        f"SCF did not converge in {scf_config.max_iters} iterations "
        f"(last residual {state.history[-1].residual:.3e} > tol {scf_config.tol:.1e}). "
        "Fix: lower scf.mixing_alpha or raise scf.max_iters.",
        history=state.history,
    )
