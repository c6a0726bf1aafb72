"""Periodic potentials: Fourier coefficients, Ewald point values, sphere expansions.

A potential is the sum of two parts:
- the periodized Coulomb family -Z_j/|r - R_j| with a neutralizing background,
  known in closed form at every wavevector and evaluated pointwise by Ewald
  splitting;
- a smooth Fourier series (Hartree potentials, user-supplied CSV tables),
  stored as explicit coefficients against normalized plane waves
  e_k = |Omega|^{-1/2} e^{ik.r}.

Inside atomic sphere j the potential is represented as
-Z_j/|r - R_j| + sum_lm w_lm(rho) Y_lm, with the singular part carried
symbolically and only the smooth remainder w_lm tabulated.

Usage:
    spec = periodized_coulomb_fourier(cell, sites, k_cutoff=16)
    value = evaluate_potential_point(spec, np.array([2.0, 0.0, 0.0]))
    expansion = sphere_expansion(spec, site=0, l_pot=8, radial_nodes=nodes)
"""

from __future__ import annotations

import csv
import itertools
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse
import scipy.special

from apwdg.core.errors import AtSingularity, OutOfRange, ProblemValidationError
from apwdg.core.logging import get_logger
from apwdg.geometry import AtomicSite, UnitCell, Wavevector, lattice_integers
from apwdg.specialfn import (
    angular_grid,
    check_orthonormality,
    direction_angles,
    lm_index,
    sph_bessel,
    sph_harm_table,
)

logger = get_logger(__name__)

# Ewald splitting parameter is EWALD_ALPHA_SCALE / D
EWALD_ALPHA_SCALE = 5.0
# Reciprocal Ewald sum runs over |n| <= this; the Gaussian damping is < 1e-14 beyond
EWALD_RECIPROCAL_CUTOFF = 10
# Points closer than this (times D) to a nucleus are rejected
SINGULARITY_TOLERANCE = 1e-12
# Extra angular degree of the projection grid beyond the expansion cutoff
ANGULAR_HEADROOM = 12
# Fourier modes processed per block in the analytic sphere expansion
MODE_CHUNK = 20000
# Points processed per block in the Ewald reciprocal sum
POINT_CHUNK = 2048
# Relative anti-Hermiticity accepted in user-supplied Fourier tables
REALITY_TOLERANCE = 1e-10


# =============================================================================
# Fourier series container
# =============================================================================


@dataclass(frozen=True)
class FourierSeries:
    """Coefficients f_k of sum_k f_k |Omega|^{-1/2} e^{ik.r}, keyed by integer triples.

    Attributes:
        cell: Unit cell the wavevectors belong to
        n: Integer triples, shape (M, 3)
        coefficients: Complex coefficients, shape (M,)
    """

    cell: UnitCell
    n: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self) -> None:
        n = np.asarray(self.n, dtype=np.int64).reshape(-1, 3)
        coefficients = np.asarray(self.coefficients, dtype=complex).reshape(-1)
        if n.shape[0] != coefficients.shape[0]:
            raise ProblemValidationError(
                f"Fourier series has {n.shape[0]} wavevectors but "
                f"{coefficients.shape[0]} coefficients."
            )
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "coefficients", coefficients)

    @classmethod
    def empty(cls, cell: UnitCell) -> FourierSeries:
        return cls(cell=cell, n=np.zeros((0, 3), dtype=np.int64), coefficients=np.zeros(0))

    @property
    def size(self) -> int:
        return int(self.coefficients.size)

    @property
    def max_index(self) -> int:
        """Largest |n_i| component present (0 when empty)."""
        return int(np.max(np.abs(self.n))) if self.size else 0

    @cached_property
    def _cube(self) -> np.ndarray:
        extent = self.max_index
        cube = np.zeros((2 * extent + 1,) * 3, dtype=complex)
        idx = self.n + extent
        np.add.at(cube, (idx[:, 0], idx[:, 1], idx[:, 2]), self.coefficients)
        return cube

    def lookup(self, n: np.ndarray) -> np.ndarray:
        """Coefficients at integer triples n (shape (P, 3)); zero where absent."""
        n = np.asarray(n, dtype=np.int64).reshape(-1, 3)
        out = np.zeros(n.shape[0], dtype=complex)
        if not self.size:
            return out
        extent = self.max_index
        inside = np.all(np.abs(n) <= extent, axis=1)
        idx = n[inside] + extent
        out[inside] = self._cube[idx[:, 0], idx[:, 1], idx[:, 2]]
        return out

    def as_dict(self) -> dict[Wavevector, complex]:
        """Map Wavevector -> coefficient."""
        return {
            Wavevector(n=(int(a), int(b), int(c)), edge_length=self.cell.edge_length): complex(v)
            for (a, b, c), v in zip(self.n, self.coefficients, strict=True)
        }

    def scaled(self, factor: float) -> FourierSeries:
        return FourierSeries(cell=self.cell, n=self.n, coefficients=factor * self.coefficients)

    def reality_defect(self) -> float:
        """max |f_{-k} - conj(f_k)|, relative to max |f_k|."""
        if not self.size:
            return 0.0
        mirrored = self.lookup(-self.n)
        scale = float(np.max(np.abs(self.coefficients))) or 1.0
        return float(np.max(np.abs(mirrored - np.conj(self.coefficients)))) / scale

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Real part of the series at points (shape (P, 3))."""
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        if not self.size:
            return np.zeros(points.shape[0])
        k = self.cell.reciprocal_unit * self.n.astype(float)
        values = np.empty(points.shape[0])
        for start in range(0, points.shape[0], POINT_CHUNK):
            block = points[start : start + POINT_CHUNK]
            phases = np.exp(1j * block @ k.T)
            values[start : start + POINT_CHUNK] = (phases @ self.coefficients).real
        return values / math.sqrt(self.cell.volume)


# =============================================================================
# Potential specification
# =============================================================================


@dataclass(frozen=True)
class PotentialSpec:
    """A periodic potential on the cell.

    Attributes:
        cell: Unit cell
        sites: Atomic sites (carry the Coulomb charges)
        k_cutoff: K_pot; the truncated `fourier` view keeps |k| <= 2*pi*K_pot/D
        coulomb_scale: Multiplier of the periodized Coulomb family (0 disables it)
        smooth: Additional smooth Fourier coefficients
    """

    cell: UnitCell
    sites: tuple[AtomicSite, ...]
    k_cutoff: int
    coulomb_scale: float = 1.0
    smooth: FourierSeries | None = field(default=None)

    def __post_init__(self) -> None:
        object.__setattr__(self, "sites", tuple(self.sites))
        if self.k_cutoff < 1:
            raise ProblemValidationError(
                f"Potential cutoff K_pot={self.k_cutoff} is invalid. Must be >= 1."
            )

    @property
    def has_coulomb(self) -> bool:
        return self.coulomb_scale != 0.0 and len(self.sites) > 0

    @property
    def has_smooth(self) -> bool:
        return self.smooth is not None and self.smooth.size > 0

    def coefficients(self, n: np.ndarray) -> np.ndarray:
        """Exact V_k at integer triples n (shape (P, 3)).

        The Coulomb part is evaluated in closed form at every k, so no
        truncation at K_pot applies to it; the smooth part is zero outside
        its stored modes.
        """
        n = np.asarray(n, dtype=np.int64).reshape(-1, 3)
        out = np.zeros(n.shape[0], dtype=complex)
        if self.has_coulomb:
            k = self.cell.reciprocal_unit * n.astype(float)
            k2 = np.einsum("ij,ij->i", k, k)
            nonzero = k2 > 0.0
            structure = np.zeros(n.shape[0], dtype=complex)
            for site in self.sites:
                structure += site.charge * np.exp(-1j * (k @ site.position))
            prefactor = -self.coulomb_scale * 4.0 * math.pi / math.sqrt(self.cell.volume)
            out[nonzero] = prefactor * structure[nonzero] / k2[nonzero]
        if self.has_smooth:
            out += self.smooth.lookup(n)
        return out

    @cached_property
    def fourier(self) -> FourierSeries:
        """Truncated coefficient view over |n| <= K_pot."""
        n = lattice_integers(self.k_cutoff)
        return FourierSeries(cell=self.cell, n=n, coefficients=self.coefficients(n))

    def without_coulomb(self) -> PotentialSpec:
        return PotentialSpec(
            cell=self.cell,
            sites=self.sites,
            k_cutoff=self.k_cutoff,
            coulomb_scale=0.0,
            smooth=self.smooth,
        )


def periodized_coulomb_fourier(
    cell: UnitCell,
    sites: Sequence[AtomicSite],
    k_cutoff: int,
    scale: float = 1.0,
) -> PotentialSpec:
    """Periodized nuclear Coulomb potential with neutralizing background.

    V_k = -(4*pi/sqrt|Omega|) / |k|^2 * sum_j Z_j e^{-ik.R_j} for k != 0, V_0 = 0.

    Args:
        cell: Unit cell
        sites: Validated atomic sites
        k_cutoff: K_pot for the truncated view
        scale: Overall multiplier (1 for the physical potential)
    """
    return PotentialSpec(cell=cell, sites=tuple(sites), k_cutoff=k_cutoff, coulomb_scale=scale)


def zero_potential(cell: UnitCell, sites: Sequence[AtomicSite], k_cutoff: int) -> PotentialSpec:
    """V == 0 on the same geometry (free-particle problem)."""
    return PotentialSpec(cell=cell, sites=tuple(sites), k_cutoff=k_cutoff, coulomb_scale=0.0)


def fourier_file_potential(
    cell: UnitCell,
    sites: Sequence[AtomicSite],
    k_cutoff: int,
    path: Path,
    coulomb_scale: float = 0.0,
) -> PotentialSpec:
    """Potential from a CSV of Fourier coefficients, optionally on top of the Coulomb family."""
    series = load_fourier_csv(path, cell)
    return PotentialSpec(
        cell=cell, sites=tuple(sites), k_cutoff=k_cutoff, coulomb_scale=coulomb_scale,
        smooth=series,
    )


def load_fourier_csv(path: Path, cell: UnitCell) -> FourierSeries:
    """Read coefficients from a CSV with header n1,n2,n3,re,im.

    Raises:
        ProblemValidationError: On missing columns, bad rows or a non-real potential
    """
    required = {"n1", "n2", "n3", "re", "im"}
    rows_n: list[tuple[int, int, int]] = []
    rows_c: list[complex] = []
    try:
        with open(path, newline="") as f:
            reader = csv.DictReader(row for row in f if not row.lstrip().startswith("#"))
            missing = required - set(reader.fieldnames or [])
            if missing:
                raise ProblemValidationError(
                    f"Fourier file {path} is missing columns {sorted(missing)}. "
                    "Expected header: n1,n2,n3,re,im"
                )
            for line_no, row in enumerate(reader, start=2):
                try:
                    rows_n.append((int(row["n1"]), int(row["n2"]), int(row["n3"])))
                    rows_c.append(complex(float(row["re"]), float(row["im"])))
                except (TypeError, ValueError) as e:
                    raise ProblemValidationError(
                        f"Fourier file {path}, row {line_no}: cannot parse {row!r} ({e})."
                    ) from e
    except OSError as e:
        raise ProblemValidationError(f"Cannot read Fourier file {path}: {e}") from e

    series = FourierSeries(
        cell=cell,
        n=np.asarray(rows_n, dtype=np.int64).reshape(-1, 3),
        coefficients=np.asarray(rows_c, dtype=complex),
    )
    defect = series.reality_defect()
    if defect > REALITY_TOLERANCE:
        raise ProblemValidationError(
            f"Fourier file {path} does not describe a real potential: "
            f"max |V(-k) - conj(V(k))| / max|V| = {defect:.3e}. "
            "Fix: list both k and -k with conjugate coefficients."
        )
    logger.info("fourier_potential_loaded", path=str(path), modes=series.size)
    return series


# =============================================================================
# Pointwise evaluation (Ewald)
# =============================================================================


@lru_cache(maxsize=8)
def _ewald_reciprocal_table(edge_length: float) -> tuple[np.ndarray, np.ndarray]:
    """Wavevectors and weights (4*pi/|Omega|) e^{-k^2/4a^2}/k^2 of the reciprocal sum."""
    alpha = EWALD_ALPHA_SCALE / edge_length
    n = lattice_integers(EWALD_RECIPROCAL_CUTOFF)[1:]
    k = (2.0 * math.pi / edge_length) * n.astype(float)
    k2 = np.einsum("ij,ij->i", k, k)
    weights = (4.0 * math.pi / edge_length**3) * np.exp(-k2 / (4.0 * alpha * alpha)) / k2
    return k, weights


@lru_cache(maxsize=1)
def _image_shifts() -> np.ndarray:
    shifts = np.asarray(list(itertools.product((-1, 0, 1), repeat=3)), dtype=float)
    # Zero shift first, so column 0 is always the primary image
    order = np.argsort(np.einsum("ij,ij->i", shifts, shifts), kind="stable")
    return shifts[order]


def _ewald_kernel(cell: UnitCell, x: np.ndarray, subtract_bare: bool) -> np.ndarray:
    """Periodic 1/|x| with neutralizing background, at displacements x (shape (P, 3)).

    With subtract_bare, returns the kernel minus 1/|x| for the primary image,
    which is regular at x = 0.
    """
    D = cell.edge_length
    alpha = EWALD_ALPHA_SCALE / D
    wrapped = x - D * np.round(x / D)
    if subtract_bare and np.any(np.abs(wrapped - x) > 0.0):
        raise ProblemValidationError(
            "Bare-Coulomb subtraction requested for a point outside the primary cell image."
        )
    images = wrapped[:, None, :] + D * _image_shifts()[None, :, :]
    distance = np.linalg.norm(images, axis=-1)

    with np.errstate(divide="ignore", invalid="ignore"):
        real = scipy.special.erfc(alpha * distance) / distance
    if subtract_bare:
        primary = distance[:, 0]
        regular = np.where(
            primary > 0.0,
            -scipy.special.erf(alpha * primary) / np.where(primary > 0.0, primary, 1.0),
            -2.0 * alpha / math.sqrt(math.pi),
        )
        real[:, 0] = regular
    real_sum = real.sum(axis=1)

    k, weights = _ewald_reciprocal_table(D)
    reciprocal = np.empty(x.shape[0])
    for start in range(0, x.shape[0], POINT_CHUNK):
        block = wrapped[start : start + POINT_CHUNK]
        reciprocal[start : start + POINT_CHUNK] = np.cos(block @ k.T) @ weights

    background = math.pi / (alpha * alpha * cell.volume)
    return real_sum + reciprocal - background


def _coulomb_values(
    spec: PotentialSpec, points: np.ndarray, bare_site: int | None = None
) -> np.ndarray:
    """Coulomb part at points; with bare_site, the -Z/|r - R_j| term of that site is removed."""
    values = np.zeros(points.shape[0])
    for j, site in enumerate(spec.sites):
        kernel = _ewald_kernel(spec.cell, points - site.position, subtract_bare=(j == bare_site))
        values -= spec.coulomb_scale * site.charge * kernel
    return values


def evaluate_potential(spec: PotentialSpec, points: np.ndarray) -> np.ndarray:
    """V at a batch of points (shape (P, 3)).

    Raises:
        AtSingularity: If a Coulomb-carrying point sits on a nucleus (or an image)
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    D = spec.cell.edge_length
    values = np.zeros(points.shape[0])
    if spec.has_coulomb:
        for j, site in enumerate(spec.sites):
            x = points - site.position
            wrapped = x - D * np.round(x / D)
            nearest = float(np.min(np.linalg.norm(wrapped, axis=1)))
            if nearest < SINGULARITY_TOLERANCE * D:
                raise AtSingularity(
                    f"Potential evaluated at the nucleus of site {j} "
                    f"(distance {nearest:.3e} bohr). The Coulomb potential is singular there.",
                    site=j,
                )
        values += _coulomb_values(spec, points)
    if spec.has_smooth:
        values += spec.smooth.evaluate(points)
    return values


def evaluate_potential_point(spec: PotentialSpec, r_point: np.ndarray) -> float:
    """V(r) at a single point, Ewald-split for the Coulomb family.

    Raises:
        AtSingularity: If r_point is a nucleus position
    """
    return float(evaluate_potential(spec, np.asarray(r_point, dtype=float).reshape(1, 3))[0])


# =============================================================================
# Sphere expansion
# =============================================================================


@dataclass(frozen=True)
class SphereExpansion:
    """Potential inside one sphere: -Z/rho + sum_lm w_lm(rho) Y_lm.

    Attributes:
        site: Site index
        singular_charge: Z of the carried -Z/rho part (already scaled)
        smooth_table: w_lm at the radial nodes, shape ((l_pot+1)^2, n_nodes)
        radial_nodes: Radii rho_i the table is given at
        l_pot: Angular truncation
    """

    site: int
    singular_charge: float
    smooth_table: np.ndarray
    radial_nodes: np.ndarray
    l_pot: int

    def full_table(self) -> np.ndarray:
        """v_lm including the singular part: v_00 = -Z*sqrt(4*pi)/rho + w_00."""
        table = self.smooth_table.copy()
        table[0] += -self.singular_charge * math.sqrt(4.0 * math.pi) / self.radial_nodes
        return table

    def tail_norms(self) -> np.ndarray:
        """Per-l norm sqrt(sum_m sum_i |w_lm(rho_i)|^2)."""
        norms = np.empty(self.l_pot + 1)
        for l in range(self.l_pot + 1):
            block = self.smooth_table[lm_index(l, -l) : lm_index(l, l) + 1]
            norms[l] = float(np.sqrt(np.sum(np.abs(block) ** 2)))
        return norms

    def reconstruct(self, node: int, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
        """Real potential at radius radial_nodes[node] and the given directions."""
        ylm = sph_harm_table(self.l_pot, np.asarray(theta), np.asarray(phi))
        smooth = np.tensordot(self.smooth_table[:, node], ylm, axes=(0, 0)).real
        return smooth - self.singular_charge / self.radial_nodes[node]


def _coulomb_remainder_table(
    spec: PotentialSpec, site: int, l_pot: int, nodes: np.ndarray
) -> np.ndarray:
    grid = angular_grid(l_pot + ANGULAR_HEADROOM)
    check_orthonormality(grid, l_pot)
    center = spec.sites[site].position
    points = center + nodes[:, None, None] * grid.directions[None, :, :]
    remainder = _coulomb_values(spec, points.reshape(-1, 3), bare_site=site)
    remainder = remainder.reshape(nodes.size, grid.size)
    ylm = sph_harm_table(l_pot, grid.theta, grid.phi)
    return (np.conj(ylm) * grid.weights) @ remainder.T


def _smooth_fourier_table(
    series: FourierSeries, center: np.ndarray, l_pot: int, nodes: np.ndarray
) -> np.ndarray:
    """Scattering expansion of a Fourier series around center.

    w_lm(rho) = 4*pi |Omega|^{-1/2} i^l sum_k f_k e^{ik.R} j_l(|k| rho) Y*_lm(k_hat),
    with the k-sum grouped into shells of equal |k|.
    """
    cell = series.cell
    keep = series.coefficients != 0.0
    n = series.n[keep]
    coefficients = series.coefficients[keep]
    table = np.zeros(((l_pot + 1) ** 2, nodes.size), dtype=complex)
    if not coefficients.size:
        return table

    k = cell.reciprocal_unit * n.astype(float)
    _, theta, phi = direction_angles(k)
    weighted = coefficients * np.exp(1j * (k @ center))
    norm2 = np.einsum("ij,ij->i", n, n)
    shells, shell_of = np.unique(norm2, return_inverse=True)
    shell_k = cell.reciprocal_unit * np.sqrt(shells.astype(float))
    indicator = scipy.sparse.csr_matrix(
        (np.ones(shell_of.size), (shell_of, np.arange(shell_of.size))),
        shape=(shells.size, shell_of.size),
    )
    prefactor = 4.0 * math.pi / math.sqrt(cell.volume)

    for l in range(l_pot + 1):
        bessel, _ = sph_bessel(l, np.outer(shell_k, nodes))
        shell_sums = np.zeros((2 * l + 1, shells.size), dtype=complex)
        for start in range(0, coefficients.size, MODE_CHUNK):
            stop = start + MODE_CHUNK
            ylm = np.stack(
                [
                    scipy.special.sph_harm_y(l, m, theta[start:stop], phi[start:stop])
                    for m in range(-l, l + 1)
                ]
            )
            contrib = np.conj(ylm) * weighted[start:stop]
            shell_sums += (indicator[:, start:stop] @ contrib.T).T
        table[lm_index(l, -l) : lm_index(l, l) + 1] = prefactor * (1j**l) * (shell_sums @ bessel)
    return table


def sphere_expansion(
    spec: PotentialSpec, site: int, l_pot: int, radial_nodes: np.ndarray
) -> SphereExpansion:
    """Expand V inside the sphere of one site.

    The Coulomb remainder is projected by angular quadrature of Ewald point
    values; the smooth Fourier part uses the scattering expansion directly.

    Args:
        spec: Potential
        site: Site index
        l_pot: Angular truncation of the expansion
        radial_nodes: Radii in (0, R]

    Raises:
        OutOfRange: If a node is outside (0, R]
        QuadratureUnderResolved: If the projection grid fails its orthonormality self-test
    """
    nodes = np.asarray(radial_nodes, dtype=float).reshape(-1)
    radius = spec.sites[site].radius
    if np.any(nodes <= 0.0) or np.any(nodes > radius * (1.0 + 1e-12)):
        raise OutOfRange(
            f"Radial nodes for site {site} must lie in (0, {radius}]; "
            f"got range [{float(nodes.min()):.6g}, {float(nodes.max()):.6g}]."
        )

    table = np.zeros(((l_pot + 1) ** 2, nodes.size), dtype=complex)
    if spec.has_coulomb:
        table += _coulomb_remainder_table(spec, site, l_pot, nodes)
    if spec.has_smooth:
        table += _smooth_fourier_table(spec.smooth, spec.sites[site].position, l_pot, nodes)

    singular = spec.coulomb_scale * spec.sites[site].charge if spec.has_coulomb else 0.0
    expansion = SphereExpansion(
        site=site,
        singular_charge=singular,
        smooth_table=table,
        radial_nodes=nodes,
        l_pot=l_pot,
    )
    logger.debug(
        "sphere_expansion_built",
        site=site,
        l_pot=l_pot,
        nodes=nodes.size,
        tail_norm=float(expansion.tail_norms()[-1]),
    )
    return expansion


# =============================================================================
# Hartree potential
# =============================================================================


def hartree_fourier(density: FourierSeries) -> FourierSeries:
    """Solve -Laplace V_H = 4*pi*rho mode by mode.

    V_H(k) = 4*pi*rho(k)/|k|^2 for k != 0 and V_H(0) = 0 (neutralizing background).
    """
    k = density.cell.reciprocal_unit * density.n.astype(float)
    k2 = np.einsum("ij,ij->i", k, k)
    coefficients = np.zeros(density.size, dtype=complex)
    nonzero = k2 > 0.0
    coefficients[nonzero] = 4.0 * math.pi * density.coefficients[nonzero] / k2[nonzero]
    return FourierSeries(cell=density.cell, n=density.n, coefficients=coefficients)
