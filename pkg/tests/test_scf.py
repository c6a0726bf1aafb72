"""Tests for the Hartree self-consistent field loop."""

import dataclasses
import math

import numpy as np
import pytest

from apwdg.basis import BasisParams, build_mixed_basis
from apwdg.core.errors import GridTooCoarse, NotConverged, OutOfRange
from apwdg.engine.assembly import PenaltySpec, assemble_operators
from apwdg.engine.scf import (
    ScfConfig,
    density_fourier,
    density_on_grid,
    grid_charge,
    hartree_potential,
    orbital_charge,
    scf_solve,
)
from apwdg.engine.solver import solve_lowest
from apwdg.geometry import UnitCell
from apwdg.potential import FourierSeries, periodized_coulomb_fourier

# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------


@pytest.fixture
def penalty(small_params: BasisParams) -> PenaltySpec:
    return PenaltySpec.for_params(small_params, 20.0)


# ---------------------------------------------------------------------------
# Settings
# ---------------------------------------------------------------------------


class TestScfConfig:
    def test_defaults(self):
        config = ScfConfig()
        assert config.occupations == [2.0]
        assert config.density_grid == 65

    @pytest.mark.parametrize(
        "kwargs",
        [{"mixing_alpha": 0.0}, {"mixing_alpha": 1.5}, {"tol": 0.0}, {"max_iters": 0}],
    )
    def test_rejects_invalid_settings(self, kwargs: dict):
        with pytest.raises(OutOfRange):
            ScfConfig(**kwargs)

    def test_occupations(self):
        assert ScfConfig(occupation=1.0, n_occupied=3).occupations == [1.0, 1.0, 1.0]


# ---------------------------------------------------------------------------
# Density
# ---------------------------------------------------------------------------


class TestDensity:
    @pytest.fixture
    def solved(self, small_basis, penalty):
        potential = periodized_coulomb_fourier(small_basis.cell, small_basis.sites, 8)
        ops = assemble_operators(small_basis, potential, penalty)
        return solve_lowest(ops, 2)

    def test_charge_is_normalized(self, small_basis, solved):
        density = density_fourier(small_basis, solved, [2.0], grid_n=17, k_cutoff=4)
        charge = density.coefficients[0].real * math.sqrt(1000.0)
        assert charge == pytest.approx(2.0, rel=1e-12)

    def test_density_is_real(self, small_basis, solved):
        density = density_fourier(small_basis, solved, [2.0], grid_n=17, k_cutoff=4)
        assert density.reality_defect() < 1e-10
        assert density.size == 257

    def test_grid_too_coarse(self, small_basis, solved):
        with pytest.raises(GridTooCoarse, match=">= 9"):
            density_fourier(small_basis, solved, [2.0], grid_n=7, k_cutoff=4)

    def test_more_orbitals_than_solved(self, small_basis, solved):
        with pytest.raises(OutOfRange):
            density_fourier(small_basis, solved, [2.0, 2.0, 2.0], grid_n=17, k_cutoff=4)

    def test_orbital_charge_uses_the_overlap(self, small_basis, penalty, solved):
        potential = periodized_coulomb_fourier(small_basis.cell, small_basis.sites, 8)
        ops = assemble_operators(small_basis, potential, penalty)
        assert orbital_charge(ops.M, solved, [2.0]) == pytest.approx(2.0, abs=1e-10)
        assert orbital_charge(ops.M, solved, [2.0, 1.0]) == pytest.approx(3.0, abs=1e-10)

    def test_orbital_charge_is_not_rescaled(self, small_basis, penalty, solved):
        potential = periodized_coulomb_fourier(small_basis.cell, small_basis.sites, 8)
        ops = assemble_operators(small_basis, potential, penalty)
        stretched = dataclasses.replace(solved, eigenvectors=1.1 * solved.eigenvectors)
        assert orbital_charge(ops.M, stretched, [2.0]) == pytest.approx(2.42, rel=1e-10)

    def test_raw_grid_density_is_not_rescaled(self, small_basis, solved):
        raw = density_on_grid(small_basis, solved, [2.0], grid_n=17)
        doubled = density_on_grid(small_basis, solved, [4.0], grid_n=17)
        assert raw.shape == (17, 17, 17)
        assert np.all(raw >= 0.0)
        assert grid_charge(small_basis.cell, doubled) == pytest.approx(
            2.0 * grid_charge(small_basis.cell, raw), rel=1e-12
        )

    def test_grid_charge_of_constant(self, cell: UnitCell):
        assert grid_charge(cell, np.full((9, 9, 9), 0.5)) == pytest.approx(500.0)


def test_hartree_potential_is_smooth_only(cell: UnitCell, single_site):
    density = FourierSeries(cell=cell, n=[[1, 0, 0], [-1, 0, 0]], coefficients=[0.1, 0.1])
    spec = hartree_potential(density, single_site, k_cutoff=4, scale=0.5)
    assert not spec.has_coulomb
    k2 = (2.0 * math.pi / 10.0) ** 2
    value = spec.coefficients(np.array([[1, 0, 0]]))[0]
    assert value == pytest.approx(0.5 * 4.0 * math.pi * 0.1 / k2)


# ---------------------------------------------------------------------------
# SCF loop
# ---------------------------------------------------------------------------


class TestScfSolve:
    def test_linear_problem_converges_immediately(
        self, cell: UnitCell, single_site, small_params: BasisParams, penalty: PenaltySpec
    ):
        config = ScfConfig(hartree_scale=0.0, density_grid=17, tol=1e-10)
        state = scf_solve(cell, single_site, small_params, config, penalty, k_pot=4)
        assert state.converged
        assert state.iteration == 1
        assert state.history[0].residual < 1e-12
        assert state.history[0].charge_deviation < 1e-10
        assert math.isfinite(state.history[0].grid_charge_error)

    def test_linear_problem_matches_single_solve(
        self, cell: UnitCell, single_site, small_params: BasisParams, penalty: PenaltySpec
    ):
        config = ScfConfig(hartree_scale=0.0, density_grid=17)
        state = scf_solve(cell, single_site, small_params, config, penalty, k_pot=4)
        basis = build_mixed_basis(cell, single_site, small_params)
        ops = assemble_operators(basis, periodized_coulomb_fourier(cell, single_site, 4), penalty)
        direct = solve_lowest(ops, 1)
        assert state.history[0].eigenvalue == pytest.approx(direct.eigenvalues[0], abs=1e-12)

    def test_not_converged_carries_history(
        self, cell: UnitCell, single_site, small_params: BasisParams, penalty: PenaltySpec
    ):
        config = ScfConfig(max_iters=2, tol=1e-14, density_grid=17)
        with pytest.raises(NotConverged) as exc_info:
            scf_solve(cell, single_site, small_params, config, penalty, k_pot=4)
        history = exc_info.value.history
        assert [h.iteration for h in history] == [1, 2]
        assert history[0].residual > 1e-14
        assert exc_info.value.exit_code == 4

    def test_hartree_raises_the_orbital_energy(
        self, cell: UnitCell, single_site, small_params: BasisParams, penalty: PenaltySpec
    ):
        config = ScfConfig(max_iters=1, tol=1e2, density_grid=17)
        state = scf_solve(cell, single_site, small_params, config, penalty, k_pot=4)
        bare = ScfConfig(hartree_scale=0.0, density_grid=17)
        linear = scf_solve(cell, single_site, small_params, bare, penalty, k_pot=4)
        assert state.history[0].eigenvalue > linear.history[0].eigenvalue

    def test_grid_must_resolve_potential_cutoff(
        self, cell: UnitCell, single_site, small_params: BasisParams, penalty: PenaltySpec
    ):
        config = ScfConfig(density_grid=5)
        with pytest.raises(GridTooCoarse):
            scf_solve(cell, single_site, small_params, config, penalty, k_pot=4)

    def test_history_reports_raw_charge(
        self, cell: UnitCell, single_site, small_params: BasisParams, penalty: PenaltySpec
    ):
        config = ScfConfig(max_iters=3, tol=1e-14, density_grid=17)
        with pytest.raises(NotConverged) as exc_info:
            scf_solve(cell, single_site, small_params, config, penalty, k_pot=4)
        basis = build_mixed_basis(cell, single_site, small_params)
        for record in exc_info.value.history:
            assert record.charge_deviation <= 1e-6
            assert math.isfinite(record.grid_charge_error)
        # The uniform grid misses the surface discontinuity, so its quadrature is not exact
        solution = solve_lowest(
            assemble_operators(basis, periodized_coulomb_fourier(cell, single_site, 4), penalty), 1
        )
        raw = density_on_grid(basis, solution, [2.0], grid_n=17)
        assert grid_charge(cell, raw) != pytest.approx(2.0, abs=1e-12)
