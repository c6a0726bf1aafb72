"""Periodic cell, dual lattice and atomic-sphere decomposition.

The cell is the cube [-D/2, D/2]^3 with lattice D*Z^3 and dual lattice
(2*pi/D)*Z^3. Atomic spheres are balls strictly inside the cell; their union
is the muffin-tin region and the remainder is the interstitial region.

Usage:
    from apwdg.geometry import AtomicSite, UnitCell, reciprocal_vectors

    cell = UnitCell(edge_length=10.0)
    sites = [AtomicSite(center=(0.0, 0.0, 0.0), radius=1.0, charge=1.0)]
    validate_sites(cell, sites)
    kvecs = reciprocal_vectors(cell, K=4)  # 257 wavevectors
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from apwdg.core.errors import OverlappingSpheres, ProblemValidationError, SphereOutsideCell

# Relative tolerance (times D) for "strictly inside" and disjointness checks
BOUNDARY_TOLERANCE = 1e-12


@dataclass(frozen=True)
class UnitCell:
    """Cubic unit cell [-D/2, D/2]^3.

    Attributes:
        edge_length: Cube edge D in bohr
    """

    edge_length: float

    def __post_init__(self) -> None:
        if not self.edge_length > 0.0 or not math.isfinite(self.edge_length):
            raise ProblemValidationError(
                f"Invalid cell edge_length={self.edge_length}. "
                "Must be a finite positive length in bohr. Fix: set cell.edge_length > 0."
            )

    @property
    def volume(self) -> float:
        """Cell volume D^3 in bohr^3."""
        return self.edge_length**3

    @property
    def reciprocal_unit(self) -> float:
        """Dual lattice spacing 2*pi/D in 1/bohr."""
        return 2.0 * math.pi / self.edge_length


@dataclass(frozen=True)
class AtomicSite:
    """An atomic sphere: nucleus position, muffin-tin radius and nuclear charge.

    Attributes:
        center: Nucleus position in bohr (cell coordinates)
        radius: Sphere radius R in bohr
        charge: Nuclear charge Z (positive)
    """

    center: tuple[float, float, float]
    radius: float
    charge: float = 1.0

    def __post_init__(self) -> None:
        if len(self.center) != 3:
            raise ProblemValidationError(
                f"Site center must have 3 components, got {self.center!r}."
            )
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.radius > 0.0:
            raise ProblemValidationError(
                f"Invalid site radius={self.radius}. Must be positive (bohr)."
            )
        if not self.charge > 0.0:
            raise ProblemValidationError(
                f"Invalid site charge={self.charge}. Nuclear charges must be positive."
            )

    @cached_property
    def position(self) -> np.ndarray:
        """Center as a float array of shape (3,)."""
        return np.asarray(self.center, dtype=float)

    @property
    def volume(self) -> float:
        """Sphere volume 4*pi*R^3/3."""
        return 4.0 * math.pi * self.radius**3 / 3.0


@dataclass(frozen=True)
class Wavevector:
    """A dual-lattice vector k = (2*pi/D) * n.

    Attributes:
        n: Integer triple
        edge_length: Cell edge D the vector belongs to
    """

    n: tuple[int, int, int]
    edge_length: float

    @property
    def k(self) -> np.ndarray:
        """Cartesian wavevector in 1/bohr."""
        return (2.0 * math.pi / self.edge_length) * np.asarray(self.n, dtype=float)

    @property
    def norm(self) -> float:
        """|k| in 1/bohr, computed from the integer triple."""
        n1, n2, n3 = self.n
        return (2.0 * math.pi / self.edge_length) * math.sqrt(n1 * n1 + n2 * n2 + n3 * n3)


def lattice_integers(K: int) -> np.ndarray:
    """Integer triples n with |n| <= K, in canonical DOF order.

    Ordering is by (|n|^2, n1, n2, n3), which makes every matrix built on top
    of it deterministic.

    Args:
        K: Cutoff (>= 1)

    Returns:
        Integer array of shape (count, 3)
    """
    if K < 1:
        raise ProblemValidationError(f"Plane-wave cutoff K={K} is invalid. K must be >= 1.")
    axis = np.arange(-K, K + 1)
    grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    norm2 = np.einsum("ij,ij->i", grid, grid)
    grid = grid[norm2 <= K * K]
    norm2 = norm2[norm2 <= K * K]
    order = np.lexsort((grid[:, 2], grid[:, 1], grid[:, 0], norm2))
    return grid[order]


def reciprocal_vectors(cell: UnitCell, K: int) -> list[Wavevector]:
    """All dual-lattice vectors with |k| <= 2*pi*K/D.

    Args:
        cell: Unit cell
        K: Plane-wave cutoff (>= 1)

    Returns:
        Wavevectors ordered by (|n|^2, n1, n2, n3); the first is k = 0
    """
    return [
        Wavevector(n=(int(a), int(b), int(c)), edge_length=cell.edge_length)
        for a, b, c in lattice_integers(K)
    ]


def validate_sites(cell: UnitCell, sites: Sequence[AtomicSite]) -> None:
    """Check that every sphere is strictly inside the cell and spheres are disjoint.

    Args:
        cell: Unit cell
        sites: Atomic sites

    Raises:
        SphereOutsideCell: If a sphere touches or crosses the cell boundary
        OverlappingSpheres: If two spheres intersect or touch
    """
    half = cell.edge_length / 2.0
    tol = BOUNDARY_TOLERANCE * cell.edge_length

    for i, site in enumerate(sites):
        reach = np.abs(site.position) + site.radius
        if np.any(reach >= half - tol):
            raise SphereOutsideCell(
                f"Sphere of site {i} (center={site.center}, R={site.radius}) is not strictly "
                f"inside the cell [-{half}, {half}]^3. "
                "Fix: shrink the radius or move the center towards the origin.",
                site=i,
            )

    for i in range(len(sites)):
        for j in range(i + 1, len(sites)):
            distance = float(np.linalg.norm(sites[i].position - sites[j].position))
            if distance <= sites[i].radius + sites[j].radius + tol:
                raise OverlappingSpheres(
                    f"Spheres of sites {i} and {j} overlap: center distance {distance:.6g} "
                    f"<= R_{i} + R_{j} = {sites[i].radius + sites[j].radius:.6g}. "
                    "Fix: reduce the radii so the spheres are disjoint.",
                    first=i,
                    second=j,
                )


def interstitial_volume(cell: UnitCell, sites: Sequence[AtomicSite]) -> float:
    """Volume of the interstitial region D^3 - sum_j 4*pi*R_j^3/3 (bohr^3)."""
    return cell.volume - sum(site.volume for site in sites)
