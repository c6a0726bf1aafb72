"""Mixed-basis degrees of freedom and region-aware evaluation of DG functions.

The discrete space is plane waves restricted to the interstitial region plus,
inside every atomic sphere, radial functions times spherical harmonics.
DOFs are ordered plane waves first (geometry ordering), then per site the
(n, l, m) block in lexicographic (l, m, n) order.

Usage:
    params = BasisParams(K=4, N=19, L=7)
    basis = build_mixed_basis(cell, sites, params)
    basis.total_dim  # 257 + 20*64 = 1537
    fn = DgFunction(basis, coefficients)
    eval_dg_function(fn, np.array([0.5, 0.0, 0.0]))
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from functools import cached_property
from typing import Literal

import numpy as np

from apwdg.core.errors import OutOfRange, ProblemValidationError
from apwdg.core.logging import get_logger
from apwdg.geometry import AtomicSite, UnitCell, Wavevector, lattice_integers, validate_sites
from apwdg.specialfn import RadialFamily, direction_angles, lm_index, lm_pairs, sph_harm_table

logger = get_logger(__name__)

# Ratio max(K,N,L)/min(K,N,L) above which the parameter balance is reported
BALANCE_WARNING_RATIO = 4.0


@dataclass(frozen=True)
class BasisParams:
    """Discretization parameters of the mixed basis.

    Attributes:
        K: Plane-wave cutoff, |k| <= 2*pi*K/D
        N: Highest radial index
        L: Highest angular momentum
        epsilon: Penalty exponent tweak (sigma = C_sigma * varrho^(2+2*epsilon))
        radial_kind: Radial family inside the spheres
        slater_eta: Decay of the Slater family
    """

    K: int
    N: int
    L: int
    epsilon: float = 0.0
    radial_kind: Literal["polynomial", "slater"] = "polynomial"
    slater_eta: float = 1.0

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ProblemValidationError(f"Basis K={self.K} is invalid. Must be >= 1.")
        if self.N < 0 or self.L < 0:
            raise ProblemValidationError(
                f"Basis N={self.N}, L={self.L} are invalid. Both must be >= 0."
            )
        if self.epsilon < 0.0:
            raise ProblemValidationError(f"Penalty epsilon={self.epsilon} must be >= 0.")

    @property
    def varrho(self) -> int:
        """Common discretization parameter max(K, N, L)."""
        return max(self.K, self.N, self.L)

    @property
    def balance_ratio(self) -> float:
        return self.varrho / max(min(self.K, self.N, self.L), 1)

    def check_balance(self) -> bool:
        """Log a warning when the parameters are badly unbalanced; True when balanced."""
        if self.balance_ratio > BALANCE_WARNING_RATIO:
            logger.warning(
                "basis_parameters_unbalanced",
                K=self.K,
                N=self.N,
                L=self.L,
                ratio=round(self.balance_ratio, 3),
                threshold=BALANCE_WARNING_RATIO,
            )
            return False
        return True

    def radial_family(self, radius: float) -> RadialFamily:
        return RadialFamily(
            kind=self.radial_kind, max_degree=self.N, radius=radius, slater_eta=self.slater_eta
        )


@dataclass(frozen=True)
class SphereDof:
    """One inner DOF chi_n(rho) Y_lm on a site."""

    site: int
    n: int
    l: int
    m: int


@dataclass(frozen=True)
class MixedBasis:
    """Enumerated DOFs of the mixed space.

    Attributes:
        cell: Unit cell
        sites: Atomic sites
        params: Discretization parameters
        pw_integers: Integer triples of the plane-wave DOFs, shape (P, 3)
    """

    cell: UnitCell
    sites: tuple[AtomicSite, ...]
    params: BasisParams
    pw_integers: np.ndarray

    @property
    def n_pw(self) -> int:
        return int(self.pw_integers.shape[0])

    @property
    def n_lm(self) -> int:
        return (self.params.L + 1) ** 2

    @property
    def sphere_block_size(self) -> int:
        return (self.params.N + 1) * self.n_lm

    @property
    def total_dim(self) -> int:
        return self.n_pw + len(self.sites) * self.sphere_block_size

    @cached_property
    def pw_dofs(self) -> list[Wavevector]:
        return [
            Wavevector(n=(int(a), int(b), int(c)), edge_length=self.cell.edge_length)
            for a, b, c in self.pw_integers
        ]

    @cached_property
    def pw_k(self) -> np.ndarray:
        """Cartesian wavevectors of the plane-wave DOFs, shape (P, 3)."""
        return self.cell.reciprocal_unit * self.pw_integers.astype(float)

    @cached_property
    def sphere_dofs(self) -> list[list[SphereDof]]:
        """Per site, the inner DOFs in (l, m, n) order."""
        return [
            [
                SphereDof(site=j, n=n, l=l, m=m)
                for l, m in lm_pairs(self.params.L)
                for n in range(self.params.N + 1)
            ]
            for j in range(len(self.sites))
        ]

    @cached_property
    def radial_families(self) -> tuple[RadialFamily, ...]:
        return tuple(self.params.radial_family(site.radius) for site in self.sites)

    def site_offset(self, site: int) -> int:
        """First global index of a site's inner block."""
        if not 0 <= site < len(self.sites):
            raise OutOfRange(f"Site index {site} outside [0, {len(self.sites) - 1}].")
        return self.n_pw + site * self.sphere_block_size

    def site_slice(self, site: int) -> slice:
        start = self.site_offset(site)
        return slice(start, start + self.sphere_block_size)

    def sphere_index(self, site: int, n: int, l: int, m: int) -> int:
        """Global index of chi_n Y_lm on a site."""
        return self.site_offset(site) + lm_index(l, m) * (self.params.N + 1) + n

    def pw_index(self, n: tuple[int, int, int]) -> int:
        """Global index of the plane wave with integer triple n."""
        matches = np.nonzero(np.all(self.pw_integers == np.asarray(n), axis=1))[0]
        if not matches.size:
            raise OutOfRange(f"Wavevector n={n} is not in the basis (K={self.params.K}).")
        return int(matches[0])


def build_mixed_basis(
    cell: UnitCell, sites: Sequence[AtomicSite], params: BasisParams
) -> MixedBasis:
    """Enumerate the mixed-basis DOFs deterministically."""
    validate_sites(cell, sites)
    params.check_balance()
    basis = MixedBasis(
        cell=cell, sites=tuple(sites), params=params, pw_integers=lattice_integers(params.K)
    )
    logger.debug(
        "basis_built",
        K=params.K,
        N=params.N,
        L=params.L,
        n_pw=basis.n_pw,
        n_sites=len(basis.sites),
        total_dim=basis.total_dim,
    )
    return basis


# =============================================================================
# DG functions
# =============================================================================


@dataclass(frozen=True)
class DgFunction:
    """A function of the mixed space, given by its coefficient vector."""

    basis: MixedBasis
    coefficients: np.ndarray

    def __post_init__(self) -> None:
        coefficients = np.asarray(self.coefficients, dtype=complex).reshape(-1)
        if coefficients.size != self.basis.total_dim:
            raise ProblemValidationError(
                f"Coefficient vector has length {coefficients.size}, "
                f"basis dimension is {self.basis.total_dim}."
            )
        object.__setattr__(self, "coefficients", coefficients)

    @property
    def pw_coefficients(self) -> np.ndarray:
        return self.coefficients[: self.basis.n_pw]

    def sphere_coefficients(self, site: int) -> np.ndarray:
        """Inner coefficients of a site as an array of shape ((L+1)^2, N+1)."""
        block = self.coefficients[self.basis.site_slice(site)]
        return block.reshape(self.basis.n_lm, self.basis.params.N + 1)


def constant_coefficients(basis: MixedBasis) -> np.ndarray:
    """Coefficients of the global constant function 1.

    The plane-wave part is sqrt|Omega| on k = 0; each sphere uses the radial
    combination reproducing 1 times sqrt(4*pi) on Y_00.

    Raises:
        ProblemValidationError: If the radial family cannot represent constants
    """
    coefficients = np.zeros(basis.total_dim, dtype=complex)
    coefficients[0] = math.sqrt(basis.cell.volume)
    for j, family in enumerate(basis.radial_families):
        radial = family.constant_coefficients()
        if radial is None:
            raise ProblemValidationError(
                f"The {family.kind} radial family of site {j} does not contain constants. "
                "Fix: use basis.radial_kind = polynomial for null-vector diagnostics."
            )
        start = basis.sphere_index(j, 0, 0, 0)
        coefficients[start : start + family.size] = math.sqrt(4.0 * math.pi) * radial
    return coefficients


def evaluate_planewaves(fn: DgFunction, points: np.ndarray) -> np.ndarray:
    """Plane-wave expansion at points (shape (P, 3)), ignoring the spheres."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    phases = np.exp(1j * points @ fn.basis.pw_k.T)
    return phases @ fn.pw_coefficients / math.sqrt(fn.basis.cell.volume)


def evaluate_sphere(
    fn: DgFunction, site: int, rho: np.ndarray, theta: np.ndarray, phi: np.ndarray
) -> np.ndarray:
    """Inner expansion of one site at local spherical coordinates."""
    rho = np.asarray(rho, dtype=float).reshape(-1)
    radius = fn.basis.sites[site].radius
    values, _ = fn.basis.radial_families[site].evaluate(np.clip(rho, 0.0, radius))
    theta = np.asarray(theta).reshape(-1)
    ylm = sph_harm_table(fn.basis.params.L, theta, np.asarray(phi).reshape(-1))
    coefficients = fn.sphere_coefficients(site)
    radial_parts = coefficients @ values  # ((L+1)^2, P)
    return np.sum(radial_parts * ylm, axis=0)


def eval_dg_function_batch(fn: DgFunction, points: np.ndarray) -> np.ndarray:
    """Evaluate at many points, each using exactly one region's expansion.

    Points on a sphere surface (rho == R) take the inside limit.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    out = np.empty(points.shape[0], dtype=complex)
    unassigned = np.ones(points.shape[0], dtype=bool)
    for j, site in enumerate(fn.basis.sites):
        local = points - site.position
        rho, theta, phi = direction_angles(local)
        inside = unassigned & (rho <= site.radius)
        if np.any(inside):
            out[inside] = evaluate_sphere(fn, j, rho[inside], theta[inside], phi[inside])
            unassigned &= ~inside
    if np.any(unassigned):
        out[unassigned] = evaluate_planewaves(fn, points[unassigned])
    return out


def eval_dg_function(fn: DgFunction, point: Sequence[float] | np.ndarray) -> complex:
    """Value of a DG function at one point (inside limit on sphere surfaces)."""
    return complex(eval_dg_function_batch(fn, np.asarray(point, dtype=float).reshape(1, 3))[0])


def trace_jump(
    fn: DgFunction, site: int, theta: float | np.ndarray, phi: float | np.ndarray
) -> complex | np.ndarray:
    """Scalar jump u_outside - u_inside on the surface of one sphere.

    The outside trace is the plane-wave sum at the surface point.
    """
    scalar = np.ndim(theta) == 0 and np.ndim(phi) == 0
    theta_arr, phi_arr = np.broadcast_arrays(np.atleast_1d(theta), np.atleast_1d(phi))
    theta_arr = theta_arr.astype(float).ravel()
    phi_arr = phi_arr.astype(float).ravel()
    sphere = fn.basis.sites[site]
    directions = np.stack(
        [
            np.sin(theta_arr) * np.cos(phi_arr),
            np.sin(theta_arr) * np.sin(phi_arr),
            np.cos(theta_arr),
        ],
        axis=-1,
    )
    surface = sphere.position + sphere.radius * directions
    outside = evaluate_planewaves(fn, surface)
    inside = evaluate_sphere(
        fn, site, np.full(theta_arr.size, sphere.radius), theta_arr, phi_arr
    )
    jump = outside - inside
    return complex(jump[0]) if scalar else jump


def sample_segment(
    fn: DgFunction, start: Sequence[float], stop: Sequence[float], n_points: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample a DG function along a straight segment.

    Returns:
        (arc_length, points, values) with arc_length measured from start
    """
    if n_points < 2:
        raise OutOfRange(f"Segment sampling needs at least 2 points, got {n_points}.")
    a = np.asarray(start, dtype=float)
    b = np.asarray(stop, dtype=float)
    t = np.linspace(0.0, 1.0, n_points)
    points = a[None, :] + t[:, None] * (b - a)[None, :]
    return t * float(np.linalg.norm(b - a)), points, eval_dg_function_batch(fn, points)
