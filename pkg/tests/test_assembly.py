"""Tests for matrix assembly.

Checks closed-form entries, the null vector of the free operator, the jump
Gram against surface quadrature, and penalty linearity.
"""

import math
from pathlib import Path

import numpy as np
import pytest
import scipy.special

from apwdg.basis import (
    BasisParams,
    DgFunction,
    MixedBasis,
    build_mixed_basis,
    constant_coefficients,
    trace_jump,
)
from apwdg.core.errors import OutOfRange
from apwdg.engine.assembly import (
    AssembledOperators,
    AssemblyContext,
    PenaltySpec,
    assemble_hamiltonian,
    assemble_laplace_mass_jump,
    assemble_operators,
    assemble_overlap,
    build_sphere_expansions,
    dump_operators,
    hermiticity_defect,
    penalty_sigma,
    radial_points,
)
from apwdg.geometry import AtomicSite, UnitCell
from apwdg.potential import FourierSeries, PotentialSpec, periodized_coulomb_fourier, zero_potential
from apwdg.specialfn import angular_grid

# =============================================================================
# Fixtures
# =============================================================================


@pytest.fixture
def penalty(small_params: BasisParams) -> PenaltySpec:
    return PenaltySpec.for_params(small_params, 20.0)


@pytest.fixture
def free_ops(small_basis: MixedBasis, penalty: PenaltySpec) -> AssembledOperators:
    potential = zero_potential(small_basis.cell, small_basis.sites, 8)
    return assemble_operators(small_basis, potential, penalty)


@pytest.fixture
def coulomb_ops(small_basis: MixedBasis, penalty: PenaltySpec) -> AssembledOperators:
    potential = periodized_coulomb_fourier(small_basis.cell, small_basis.sites, 8)
    return assemble_operators(small_basis, potential, penalty)


def _relative_norm(matrix: np.ndarray, vector: np.ndarray) -> float:
    return float(
        np.linalg.norm(matrix @ vector) / (np.linalg.norm(matrix) * np.linalg.norm(vector))
    )


# =============================================================================
# Penalty and quadrature sizes
# =============================================================================


class TestPenalty:
    def test_sigma_scaling(self):
        params = BasisParams(K=2, N=4, L=3)
        assert penalty_sigma(params, 20.0) == pytest.approx(320.0)
        tweaked = BasisParams(K=2, N=4, L=3, epsilon=0.5)
        assert penalty_sigma(tweaked, 1.0) == pytest.approx(4.0**3)

    def test_rejects_non_positive_constant(self, small_params: BasisParams):
        with pytest.raises(OutOfRange):
            penalty_sigma(small_params, 0.0)

    def test_radial_points(self):
        assert radial_points(4, 4.35, 1.0) == 4 + 10 + 5


# =============================================================================
# Closed-form entries
# =============================================================================


class TestClosedForm:
    def test_overlap_of_constant_plane_wave(self, small_basis: MixedBasis):
        M = assemble_overlap(small_basis)
        assert M[0, 0].real == pytest.approx(1.0 - 4.0 * math.pi / 3.0 / 1000.0, rel=1e-14)
        assert M[0, 0].real == pytest.approx(0.9958112, abs=1e-7)

    def test_overlap_of_neighbouring_plane_waves(self, small_basis: MixedBasis):
        M = assemble_overlap(small_basis)
        q = 2.0 * math.pi / 10.0
        expected = -4.0 * math.pi * scipy.special.spherical_jn(1, q) / (q * 1000.0)
        assert M[0, small_basis.pw_index((1, 0, 0))] == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(-4.03e-3, abs=1e-5)

    def test_sphere_block_entries(self, small_basis: MixedBasis):
        A_lap, J = assemble_laplace_mass_jump(small_basis)
        M = assemble_overlap(small_basis)
        s00 = small_basis.sphere_index(0, 0, 0, 0)
        s10 = small_basis.sphere_index(0, 0, 1, 0)
        # chi_0 = 1 on [0, 1]
        assert M[s00, s00].real == pytest.approx(1.0 / 3.0, rel=1e-13)
        assert A_lap[s00, s00].real == pytest.approx(0.0, abs=1e-14)
        # 1/2 * l(l+1) * int chi_0^2 drho for l = 1
        assert A_lap[s10, s10].real == pytest.approx(1.0, rel=1e-13)
        assert J[s00, s00].real == pytest.approx(1.0, rel=1e-13)

    def test_tiny_sphere_leaves_plane_waves_orthonormal(self, cell: UnitCell):
        # Sphere contributions only couple plane waves through U(q); for tiny spheres M ~ I
        tiny = (AtomicSite(center=(0.0, 0.0, 0.0), radius=0.05),)
        basis = build_mixed_basis(cell, tiny, BasisParams(K=1, N=1, L=1))
        M = assemble_overlap(basis)
        np.testing.assert_allclose(M[:7, :7], np.eye(7), atol=1e-6)


# =============================================================================
# Structural properties
# =============================================================================


class TestStructure:
    def test_matrices_are_hermitian(self, coulomb_ops: AssembledOperators):
        for matrix in (coulomb_ops.H, coulomb_ops.M, coulomb_ops.A_lap, coulomb_ops.J):
            assert hermiticity_defect(matrix) < 1e-14

    def test_overlap_is_positive_definite(self, coulomb_ops: AssembledOperators):
        assert np.linalg.eigvalsh(coulomb_ops.M).min() > 0.0

    def test_constant_is_null_vector_of_free_operator(self, free_ops: AssembledOperators):
        c = constant_coefficients(free_ops.basis)
        assert _relative_norm(free_ops.A_lap, c) < 1e-13
        assert _relative_norm(free_ops.J, c) < 1e-12
        assert _relative_norm(free_ops.C, c) < 1e-12
        assert _relative_norm(free_ops.H, c) < 1e-12

    def test_constant_is_null_vector_with_two_sites(
        self, cell: UnitCell, two_sites, small_params: BasisParams
    ):
        basis = build_mixed_basis(cell, two_sites, small_params)
        _, J = assemble_laplace_mass_jump(basis)
        assert _relative_norm(J, constant_coefficients(basis)) < 1e-12

    def test_constant_norm_is_cell_volume(self, free_ops: AssembledOperators):
        c = constant_coefficients(free_ops.basis)
        assert free_ops.dg_norm_squared(c) == pytest.approx(1000.0, rel=1e-12)

    def test_mean_free_coulomb_has_zero_expectation_for_constant(
        self, coulomb_ops: AssembledOperators
    ):
        c = constant_coefficients(coulomb_ops.basis)
        assert abs(np.vdot(c, coulomb_ops.V @ c)) < 1e-9
        assert abs(np.vdot(c, coulomb_ops.H @ c)) < 1e-9

    def test_constant_potential_matrix_is_scaled_overlap(
        self, small_basis: MixedBasis, penalty: PenaltySpec
    ):
        shift = 0.7
        smooth = FourierSeries(
            cell=small_basis.cell, n=[[0, 0, 0]], coefficients=[shift * math.sqrt(1000.0)]
        )
        spec = PotentialSpec(
            cell=small_basis.cell,
            sites=small_basis.sites,
            k_cutoff=4,
            coulomb_scale=0.0,
            smooth=smooth,
        )
        ops = assemble_operators(small_basis, spec, penalty)
        np.testing.assert_allclose(ops.V, shift * ops.M, atol=1e-12)

    def test_zero_potential_matrix_vanishes(self, free_ops: AssembledOperators):
        assert not np.any(free_ops.V)


class TestJumpGram:
    def test_matches_surface_quadrature(self, small_basis: MixedBasis, free_ops):
        rng = np.random.default_rng(7)
        v = rng.standard_normal(small_basis.total_dim) + 1j * rng.standard_normal(
            small_basis.total_dim
        )
        grid = angular_grid(30)
        trace_values = trace_jump(DgFunction(small_basis, v), 0, grid.theta, grid.phi)
        surface = float(np.sum(grid.weights * np.abs(trace_values) ** 2))  # R = 1
        assert np.vdot(v, free_ops.J @ v).real == pytest.approx(surface, rel=1e-10)


# =============================================================================
# Penalty linearity and export
# =============================================================================


def test_hamiltonian_is_affine_in_sigma(coulomb_ops: AssembledOperators):
    other = coulomb_ops.with_sigma(2.0 * coulomb_ops.sigma)
    difference = other.H - coulomb_ops.H
    np.testing.assert_allclose(
        difference, coulomb_ops.sigma * coulomb_ops.J, atol=1e-10 * np.abs(coulomb_ops.H).max()
    )
    assert other.sigma == 2.0 * coulomb_ops.sigma


def test_with_potential_keeps_static_parts(free_ops: AssembledOperators):
    V = np.eye(free_ops.total_dim)
    ops = free_ops.with_potential(V)
    np.testing.assert_allclose(ops.H - free_ops.H, V, atol=1e-9)
    assert ops.M is free_ops.M


def test_context_difference_cube(small_basis: MixedBasis):
    ctx = AssemblyContext(small_basis)
    assert ctx.extent == 4
    assert ctx.cube_integers.shape == (9**3, 3)
    np.testing.assert_array_equal(ctx.cube_integers[ctx.cube_offset], [0, 0, 0])


def test_dump_operators(tmp_path: Path, free_ops: AssembledOperators):
    path = dump_operators(free_ops, tmp_path / "out" / "matrices.npz")
    with np.load(path) as data:
        assert set(data.files) == {"H", "M", "A_lap", "J", "sigma"}
        assert data["H"].shape == (free_ops.total_dim, free_ops.total_dim)
        assert float(data["sigma"]) == pytest.approx(free_ops.sigma)


def test_hamiltonian_from_expansions_matches_operators(
    small_basis: MixedBasis, penalty: PenaltySpec, coulomb_ops: AssembledOperators
):
    potential = periodized_coulomb_fourier(small_basis.cell, small_basis.sites, 8)
    expansions = build_sphere_expansions(small_basis, potential)
    H = assemble_hamiltonian(small_basis, potential, expansions, penalty)
    np.testing.assert_allclose(H, coulomb_ops.H, atol=1e-12)
