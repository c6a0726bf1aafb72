"""Special functions and quadrature behind every matrix element.

Provides:
- complex spherical harmonics (orthonormal, Condon-Shortley phase)
- spherical Bessel functions with derivatives, series-stable near zero
- Gaunt coefficients G = int Y*_{l,m} Y_{l2,m2} Y_{l3,m3} over the unit sphere
- Gauss-Legendre rules and the product angular grid used as quadrature oracle
- the two radial basis families (mapped Legendre polynomials, Slater-type)

Usage:
    from apwdg.specialfn import RadialFamily, gaunt, sph_bessel, sph_harm

    y = sph_harm(1, 0, theta=0.3, phi=1.2)
    j, dj = sph_bessel(2, np.linspace(0.0, 5.0, 11))
    g = gaunt(2, 0, 1, 0, 1, 0)  # 1/sqrt(5*pi)
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Literal

import numpy as np
import scipy.sparse
import scipy.special
from numpy.polynomial import legendre
from sympy.physics.wigner import gaunt as exact_gaunt

from apwdg.core.errors import InvalidIndex, OutOfRange, QuadratureUnderResolved
from apwdg.core.logging import get_logger

logger = get_logger(__name__)

# Below this argument the spherical Bessel functions use their power series
SMALL_ARGUMENT = 1e-3

# Largest l covered by validate_gaunt_table by default
GAUNT_VALIDATION_LMAX = 6
# Quick check run once before the first coupling matrix is built
GAUNT_SELF_TEST_LMAX = 3
GAUNT_SELF_TEST_TOLERANCE = 1e-10

_gaunt_validated = False
_gaunt_lock = threading.Lock()


# =============================================================================
# Spherical harmonics
# =============================================================================


@dataclass(frozen=True)
class AngularIndex:
    """Angular momentum pair (l, m) with |m| <= l."""

    l: int
    m: int

    def __post_init__(self) -> None:
        _check_index(self.l, self.m)

    @property
    def flat(self) -> int:
        return lm_index(self.l, self.m)


def lm_index(l: int, m: int) -> int:
    """Flat index of (l, m) in the order (0,0), (1,-1), (1,0), (1,1), (2,-2), ..."""
    return l * l + l + m


def lm_pairs(l_max: int) -> list[tuple[int, int]]:
    """All (l, m) with l <= l_max in flat-index order."""
    return [(l, m) for l in range(l_max + 1) for m in range(-l, l + 1)]


def _check_index(l: int, m: int) -> None:
    if l < 0 or abs(m) > l:
        raise InvalidIndex(
            f"Invalid angular index (l={l}, m={m}). Requires l >= 0 and |m| <= l."
        )


def sph_harm(l: int, m: int, theta: float | np.ndarray, phi: float | np.ndarray) -> np.ndarray:
    """Orthonormal complex spherical harmonic Y_lm(theta, phi).

    Args:
        l: Degree (>= 0)
        m: Order, |m| <= l
        theta: Polar angle in [0, pi]
        phi: Azimuth

    Returns:
        Complex value(s), broadcast over theta and phi

    Raises:
        InvalidIndex: If |m| > l
    """
    _check_index(l, m)
    return scipy.special.sph_harm_y(l, m, theta, phi)


def sph_harm_table(l_max: int, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """All Y_lm with l <= l_max at the given angles.

    Returns:
        Complex array of shape ((l_max+1)^2, *theta.shape), flat-index order
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    table = np.empty(((l_max + 1) ** 2, *np.broadcast(theta, phi).shape), dtype=complex)
    for l, m in lm_pairs(l_max):
        table[lm_index(l, m)] = scipy.special.sph_harm_y(l, m, theta, phi)
    return table


def direction_angles(vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Spherical coordinates of Cartesian vectors.

    Zero vectors get theta = phi = 0, which only matters for l = 0 terms.

    Returns:
        (radius, theta, phi) arrays
    """
    vectors = np.asarray(vectors, dtype=float)
    radius = np.linalg.norm(vectors, axis=-1)
    safe = np.where(radius > 0.0, radius, 1.0)
    theta = np.arccos(np.clip(vectors[..., 2] / safe, -1.0, 1.0))
    phi = np.arctan2(vectors[..., 1], vectors[..., 0])
    return radius, theta, phi


# =============================================================================
# Spherical Bessel functions
# =============================================================================


def _double_factorial_odd(l: int) -> float:
    """(2l+1)!!"""
    return float(math.prod(range(1, 2 * l + 2, 2)))


def sph_bessel(l: int, x: float | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Spherical Bessel function j_l(x) and its derivative.

    Small arguments use the power series so that j_l(x) ~ x^l/(2l+1)!! holds to
    full relative precision; elsewhere scipy's recurrences are used. The
    derivative satisfies j_l' = j_{l-1} - (l+1)/x * j_l for x > 0.

    Args:
        l: Order (>= 0)
        x: Argument(s), x >= 0

    Returns:
        (values, derivatives) with the shape of x
    """
    if l < 0:
        raise InvalidIndex(f"Spherical Bessel order l={l} is invalid. Requires l >= 0.")
    x = np.asarray(x, dtype=float)
    value = scipy.special.spherical_jn(l, x)
    derivative = scipy.special.spherical_jn(l, x, derivative=True)

    small = np.abs(x) < SMALL_ARGUMENT
    if np.any(small):
        xs = x[small]
        a = 1.0 / (2.0 * (2 * l + 3))
        b = 1.0 / (8.0 * (2 * l + 3) * (2 * l + 5))
        lead = 1.0 / _double_factorial_odd(l)
        x2 = xs * xs
        xl = xs**l
        value[small] = lead * xl * (1.0 - a * x2 + b * x2 * x2)
        # d/dx [x^l (1 - a x^2 + b x^4)]
        dxl = l * xs ** max(l - 1, 0) if l > 0 else np.zeros_like(xs)
        derivative[small] = lead * (
            dxl * (1.0 - a * x2 + b * x2 * x2) + xl * (-2.0 * a * xs + 4.0 * b * x2 * xs)
        )
    return value, derivative


def sph_bessel_table(l_max: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """j_l(x) and j_l'(x) for l = 0..l_max.

    Returns:
        Two arrays of shape (l_max+1, *x.shape)
    """
    x = np.asarray(x, dtype=float)
    values = np.empty((l_max + 1, *x.shape))
    derivs = np.empty((l_max + 1, *x.shape))
    for l in range(l_max + 1):
        values[l], derivs[l] = sph_bessel(l, x)
    return values, derivs


def bessel_tail_degree(x: float, tolerance: float, floor: int = 0) -> int:
    """Smallest l >= floor with |j_l(y)| < tolerance for all 0 <= y <= x.

    Past l > x each j_l increases on [0, x], so checking y = x suffices.
    """
    if not tolerance > 0.0:
        raise OutOfRange(f"Bessel tail tolerance={tolerance} must be positive.")
    l = max(floor, math.ceil(x) + 1)
    point = np.asarray([float(x)])
    while abs(float(sph_bessel(l, point)[0][0])) >= tolerance:
        l += 1
    return l


# =============================================================================
# Gaunt coefficients
# =============================================================================


@lru_cache(maxsize=None)
def _gaunt_cached(l: int, l2: int, l3: int, m2: int, m3: int) -> float:
    m = m2 + m3
    # Y*_{l,m} = (-1)^m Y_{l,-m}; sympy's gaunt integrates three unconjugated harmonics
    return (-1.0) ** m * float(exact_gaunt(l, l2, l3, -m, m2, m3))


def gaunt_selection_rule(l: int, m: int, l2: int, m2: int, l3: int, m3: int) -> bool:
    """True when the Gaunt coefficient can be nonzero."""
    return (
        m == m2 + m3
        and abs(l2 - l3) <= l <= l2 + l3
        and (l + l2 + l3) % 2 == 0
        and abs(m) <= l
        and abs(m2) <= l2
        and abs(m3) <= l3
    )


def gaunt(l: int, m: int, l2: int, m2: int, l3: int, m3: int) -> float:
    """Gaunt coefficient G = int Y*_{l,m} Y_{l2,m2} Y_{l3,m3} dOmega.

    Computed from the Wigner-3j closed form (exact rational arithmetic, then
    rounded) and cached by (l, l2, l3, m2, m3).

    Raises:
        InvalidIndex: If any |m| > l
    """
    _check_index(l, m)
    _check_index(l2, m2)
    _check_index(l3, m3)
    if not gaunt_selection_rule(l, m, l2, m2, l3, m3):
        return 0.0
    return _gaunt_cached(l, l2, l3, m2, m3)


def validate_gaunt_table(l_max: int = GAUNT_VALIDATION_LMAX) -> float:
    """Compare cached Gaunt values with brute-force angular quadrature.

    Returns:
        Largest absolute deviation found

    Raises:
        QuadratureUnderResolved: If any deviation exceeds the tolerance
    """
    grid = angular_grid(3 * l_max + 2)
    table = sph_harm_table(l_max, grid.theta, grid.phi)
    pairs = lm_pairs(l_max)
    weighted = np.conj(table) * grid.weights
    worst = 0.0
    for l, m in pairs:
        # numeric[a, b] = int Y*_lm Y_a Y_b over the grid
        numeric = (weighted[lm_index(l, m)] * table) @ table.T
        exact = np.asarray(
            [[gaunt(l, m, l2, m2, l3, m3) for l3, m3 in pairs] for l2, m2 in pairs]
        )
        worst = max(worst, float(np.max(np.abs(numeric - exact))))
    if worst > GAUNT_SELF_TEST_TOLERANCE:
        raise QuadratureUnderResolved(
            f"Gaunt table self-test failed: max deviation {worst:.3e} from quadrature "
            f"for l <= {l_max}. Fix: check the scipy/sympy installation."
        )
    return worst


@lru_cache(maxsize=16)
def gaunt_coupling_matrix(l_basis: int, l_pot: int) -> scipy.sparse.csr_matrix:
    """Sparse Gaunt tensor flattened for potential contractions.

    Row (lm_index(l,m) * n_basis + lm_index(l',m')), column lm_index(lhat, mhat)
    holds G(l m; l' m'; lhat mhat). Multiplying by a table of radial integrals
    indexed by (lhat, mhat) gives the angular-coupled sphere block.

    Args:
        l_basis: Angular truncation L of the basis
        l_pot: Angular truncation of the potential expansion

    Returns:
        CSR matrix of shape ((L+1)^4, (l_pot+1)^2)
    """
    global _gaunt_validated
    with _gaunt_lock:
        if not _gaunt_validated:
            worst = validate_gaunt_table(GAUNT_SELF_TEST_LMAX)
            _gaunt_validated = True
            logger.debug("gaunt_table_validated", max_deviation=worst)

    n_basis = (l_basis + 1) ** 2
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    for l, m in lm_pairs(l_basis):
        for l2, m2 in lm_pairs(l_basis):
            row = lm_index(l, m) * n_basis + lm_index(l2, m2)
            m3 = m - m2
            for l3 in range(abs(l - l2), min(l + l2, l_pot) + 1):
                if abs(m3) > l3 or (l + l2 + l3) % 2:
                    continue
                value = _gaunt_cached(l, l2, l3, m2, m3)
                if value != 0.0:
                    rows.append(row)
                    cols.append(lm_index(l3, m3))
                    vals.append(value)
    return scipy.sparse.csr_matrix(
        (vals, (rows, cols)), shape=(n_basis * n_basis, (l_pot + 1) ** 2)
    )


# =============================================================================
# Quadrature
# =============================================================================


def gauss_legendre(n_points: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [a, b].

    Exact for polynomials of degree <= 2*n_points - 1.
    """
    if n_points < 1:
        raise OutOfRange(f"Gauss-Legendre rule needs n_points >= 1, got {n_points}.")
    if not a < b:
        raise OutOfRange(f"Gauss-Legendre interval [{a}, {b}] is empty. Requires a < b.")
    nodes, weights = legendre.leggauss(n_points)
    half = 0.5 * (b - a)
    return half * nodes + 0.5 * (a + b), half * weights


@dataclass(frozen=True)
class AngularGrid:
    """Product quadrature on the unit sphere: Gauss-Legendre in cos(theta) x trapezoid in phi.

    Attributes:
        theta: Polar angles, flattened
        phi: Azimuths, flattened
        weights: Quadrature weights summing to 4*pi
        l_max: Harmonic degree the grid was built for
    """

    theta: np.ndarray
    phi: np.ndarray
    weights: np.ndarray
    l_max: int

    @cached_property
    def directions(self) -> np.ndarray:
        """Unit vectors of shape (n_points, 3)."""
        s = np.sin(self.theta)
        return np.stack([s * np.cos(self.phi), s * np.sin(self.phi), np.cos(self.theta)], axis=-1)

    @property
    def size(self) -> int:
        return int(self.weights.size)


@lru_cache(maxsize=32)
def angular_grid(l_max: int) -> AngularGrid:
    """(l_max+2) x (2*l_max+3) product grid, exact for harmonics up to degree 2*l_max+1."""
    n_theta = l_max + 2
    n_phi = 2 * l_max + 3
    x, w_theta = legendre.leggauss(n_theta)
    phi = 2.0 * math.pi * np.arange(n_phi) / n_phi
    theta_grid, phi_grid = np.meshgrid(np.arccos(x), phi, indexing="ij")
    weights = np.outer(w_theta, np.full(n_phi, 2.0 * math.pi / n_phi))
    return AngularGrid(
        theta=theta_grid.ravel(),
        phi=phi_grid.ravel(),
        weights=weights.ravel(),
        l_max=l_max,
    )


def check_orthonormality(grid: AngularGrid, l_max: int, tolerance: float = 1e-10) -> float:
    """Verify that the grid integrates Y*_lm Y_l'm' to the identity for l, l' <= l_max.

    Returns:
        Largest deviation from the identity

    Raises:
        QuadratureUnderResolved: If the deviation exceeds tolerance
    """
    table = sph_harm_table(l_max, grid.theta, grid.phi)
    gram = (np.conj(table) * grid.weights) @ table.T
    deviation = float(np.max(np.abs(gram - np.eye(gram.shape[0]))))
    if deviation > tolerance:
        raise QuadratureUnderResolved(
            f"Angular grid built for l_max={grid.l_max} cannot resolve harmonics up to "
            f"l={l_max}: orthonormality deviation {deviation:.3e} > {tolerance:.1e}. "
            "Fix: raise the angular grid degree or lower the expansion cutoff."
        )
    return deviation


# =============================================================================
# Radial basis families
# =============================================================================


@dataclass(frozen=True)
class RadialFamily:
    """Radial basis chi_0..chi_N on [0, R].

    Attributes:
        kind: 'polynomial' (Legendre mapped from [-1, 1] to [0, R]) or 'slater' (r^n e^{-eta r})
        max_degree: N
        radius: Interval end R
        slater_eta: Decay parameter eta (Slater family only)
    """

    kind: Literal["polynomial", "slater"]
    max_degree: int
    radius: float
    slater_eta: float = 1.0

    def __post_init__(self) -> None:
        if self.max_degree < 0:
            raise OutOfRange(f"Radial max_degree N={self.max_degree} must be >= 0.")
        if not self.radius > 0.0:
            raise OutOfRange(f"Radial interval end R={self.radius} must be positive.")
        if self.kind == "slater" and not self.slater_eta > 0.0:
            raise OutOfRange(f"Slater decay eta={self.slater_eta} must be positive.")

    @property
    def size(self) -> int:
        return self.max_degree + 1

    @cached_property
    def _legendre_derivative(self) -> np.ndarray:
        return legendre.legder(np.eye(self.size), axis=0)

    def evaluate(self, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """All basis functions and radial derivatives at r.

        Args:
            r: Radii in [0, R]

        Returns:
            (values, derivatives), each of shape (N+1, *r.shape)
        """
        r = np.asarray(r, dtype=float)
        if np.any(r < 0.0) or np.any(r > self.radius * (1.0 + 1e-12)):
            raise OutOfRange(
                f"Radial argument outside [0, {self.radius}]: "
                f"min={float(np.min(r)):.6g}, max={float(np.max(r)):.6g}."
            )
        flat = r.ravel()
        if self.kind == "polynomial":
            x = 2.0 * flat / self.radius - 1.0
            values = legendre.legvander(x, self.max_degree).T
            deriv_coeffs = self._legendre_derivative
            derivs = legendre.legvander(x, max(deriv_coeffs.shape[0] - 1, 0)) @ deriv_coeffs
            derivs = derivs.T * (2.0 / self.radius)
        else:
            n = np.arange(self.size)[:, None]
            decay = np.exp(-self.slater_eta * flat)[None, :]
            powers = flat[None, :] ** n
            lower = np.where(n > 0, n * flat[None, :] ** np.maximum(n - 1, 0), 0.0)
            values = powers * decay
            derivs = (lower - self.slater_eta * powers) * decay
        return values.reshape(self.size, *r.shape), derivs.reshape(self.size, *r.shape)

    def constant_coefficients(self) -> np.ndarray | None:
        """Coefficients c with sum_n c_n chi_n(r) == 1, or None if 1 is not in the span."""
        if self.kind == "polynomial":
            coeffs = np.zeros(self.size)
            coeffs[0] = 1.0
            return coeffs
        return None


def radial_basis_eval(family: RadialFamily, n: int, r: float) -> tuple[float, float]:
    """Value and derivative of chi_n at r.

    Raises:
        OutOfRange: If n is not in [0, N] or r is not in [0, R]
    """
    if not 0 <= n <= family.max_degree:
        raise OutOfRange(
            f"Radial index n={n} outside [0, {family.max_degree}] for the {family.kind} family."
        )
    values, derivs = family.evaluate(np.asarray([r], dtype=float))
    return float(values[n, 0]), float(derivs[n, 0])
