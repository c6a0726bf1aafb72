"""Tests for the surface inverse-estimate experiment."""

import warnings

import numpy as np
import pytest

from apwdg.basis import BasisParams
from apwdg.core.errors import OutOfRange, RankDeficientTraceSpace, TruncationWarning
from apwdg.geometry import AtomicSite, UnitCell
from apwdg.studies.inverse_estimate import (
    L_CUT_HEADROOM,
    ScalingRow,
    _lambda_max,
    default_l_cut,
    fit_loglog_slope,
    inverse_estimate_scan,
    surface_inverse_estimate,
    trace_generators,
)


def _rows(values: dict[int, float]) -> list[ScalingRow]:
    return [
        ScalingRow(
            radius=1.0, varrho=v, K=v, N=v, L=v, lambda_max=lam, rank=1, dropped=0, l_cut=20
        )
        for v, lam in values.items()
    ]


def _ceiling(l_cut: int) -> float:
    """Largest stiffness eigenvalue the representation can hold."""
    return l_cut * (l_cut + 1) + 1.0


# ---------------------------------------------------------------------------
# Inner traces
# ---------------------------------------------------------------------------


class TestInnerTraces:
    def test_eigenvalue_is_top_harmonic_degree(self, cell: UnitCell, single_site):
        lam, table = surface_inverse_estimate(
            cell, single_site[0], BasisParams(K=1, N=1, L=3), include_planewaves=False
        )
        assert [row.lambda_max for row in table] == pytest.approx([3.0, 7.0, 13.0])
        assert lam == pytest.approx(13.0)
        assert [row.rank for row in table] == [4, 9, 16]
        assert all(row.dropped == 0 for row in table)

    def test_generator_rows(self, cell: UnitCell, single_site):
        generators = trace_generators(
            cell, single_site[0], BasisParams(K=1, N=1, L=2), l_cut=14, include_planewaves=False
        )
        assert generators.shape == (9, 15**2)
        np.testing.assert_array_equal(generators[:, :9], np.eye(9))


# ---------------------------------------------------------------------------
# Harmonic truncation
# ---------------------------------------------------------------------------


class TestLCut:
    def test_floor_is_l_plus_headroom(self, cell: UnitCell, single_site):
        params = BasisParams(K=1, N=1, L=3)
        assert default_l_cut(cell, single_site[0], params) == 3 + L_CUT_HEADROOM

    def test_grows_with_plane_wave_cutoff(self, cell: UnitCell):
        site = AtomicSite(center=(0.0, 0.0, 0.0), radius=1.5)
        low = default_l_cut(cell, site, BasisParams(K=2, N=2, L=2))
        high = default_l_cut(cell, site, BasisParams(K=8, N=2, L=2))
        assert high > low
        # k_max R = 2*pi*8/10 * 1.5 is about 7.5; the tail needs l near 26
        assert high > 2 + L_CUT_HEADROOM

    def test_default_resolves_the_tail(self, cell: UnitCell):
        site = AtomicSite(center=(0.0, 0.0, 0.0), radius=1.5)
        params = BasisParams(K=8, N=2, L=2)
        with warnings.catch_warnings():
            warnings.simplefilter("error", TruncationWarning)
            trace_generators(cell, site, params, default_l_cut(cell, site, params))

    def test_short_l_cut_warns(self, cell: UnitCell):
        site = AtomicSite(center=(0.0, 0.0, 0.0), radius=1.5)
        with pytest.warns(TruncationWarning, match="j_L_cut"):
            trace_generators(cell, site, BasisParams(K=8, N=2, L=2), l_cut=14)

    def test_table_does_not_depend_on_l_cut(self, cell: UnitCell, single_site):
        params = BasisParams(K=4, N=4, L=4)
        l_cut = default_l_cut(cell, single_site[0], params)
        _, table = surface_inverse_estimate(cell, single_site[0], params)
        _, wider = surface_inverse_estimate(cell, single_site[0], params, l_cut=l_cut + 6)
        assert [row.l_cut for row in table] == [l_cut] * 4
        for a, b in zip(table, wider, strict=True):
            assert b.lambda_max == pytest.approx(a.lambda_max, rel=1e-3)
            assert b.rank == a.rank

    def test_lambda_stays_below_the_representation_ceiling(self, cell: UnitCell, single_site):
        lam, table = surface_inverse_estimate(cell, single_site[0], BasisParams(K=4, N=4, L=4))
        assert lam < 0.9 * _ceiling(table[-1].l_cut)


# ---------------------------------------------------------------------------
# Mixed trace space
# ---------------------------------------------------------------------------


class TestMixedTraces:
    def test_plane_waves_enlarge_the_trace_space(self, cell: UnitCell, single_site):
        params = BasisParams(K=2, N=2, L=2)
        _, inner = surface_inverse_estimate(cell, single_site[0], params, include_planewaves=False)
        _, mixed = surface_inverse_estimate(cell, single_site[0], params)
        for a, b in zip(inner, mixed, strict=True):
            assert b.lambda_max >= a.lambda_max * (1.0 - 1e-6)
            assert b.rank >= a.rank
        values = [row.lambda_max for row in mixed]
        for previous, current in zip(values, values[1:]):
            assert current >= previous * (1.0 - 1e-6)

    def test_plane_wave_generators_are_unit_rows(self, cell: UnitCell):
        site = AtomicSite(center=(1.0, -0.5, 0.25), radius=0.8)
        generators = trace_generators(cell, site, BasisParams(K=1, N=1, L=1), l_cut=13)
        assert generators.shape == (4 + 7, 14**2)
        np.testing.assert_allclose(np.linalg.norm(generators[4:], axis=1), 1.0)

    def test_null_mass_modes_are_dropped(self):
        # Two copies of one direction plus a direction of negligible mass
        generators = np.zeros((3, 4), dtype=complex)
        generators[0, 1] = generators[1, 1] = 1.0
        generators[2, 3] = 1e-6
        stiffness = np.asarray([1.0, 3.0, 3.0, 3.0])
        lam, rank, dropped = _lambda_max(generators, stiffness)
        assert (rank, dropped) == (1, 2)
        assert lam == pytest.approx(3.0)

    def test_l_cut_headroom(self, cell: UnitCell, single_site):
        with pytest.raises(OutOfRange, match="L \\+ 12"):
            surface_inverse_estimate(cell, single_site[0], BasisParams(K=1, N=1, L=2), l_cut=13)

    def test_empty_trace_space(self):
        with pytest.raises(RankDeficientTraceSpace):
            _lambda_max(np.zeros((0, 4)), np.ones(4))

    def test_all_modes_below_mass_tolerance(self):
        with pytest.raises(RankDeficientTraceSpace, match="mass Gram"):
            _lambda_max(np.full((2, 4), 1e-7, dtype=complex), np.ones(4))


# ---------------------------------------------------------------------------
# Slope fit and scans
# ---------------------------------------------------------------------------


class TestSlope:
    def test_recovers_power_law(self):
        table = _rows({v: 2.0 * v**4 for v in range(1, 7)})
        assert fit_loglog_slope(table) == pytest.approx(4.0)

    def test_needs_two_rows(self):
        with pytest.raises(OutOfRange):
            fit_loglog_slope(_rows({1: 3.0, 2: 7.0}))

    def test_scan_over_radii(self, cell: UnitCell):
        results = inverse_estimate_scan(
            cell, (0.0, 0.0, 0.0), [0.5, 1.0], BasisParams(K=1, N=1, L=3)
        )
        assert list(results) == [0.5, 1.0]
        for table, slope in results.values():
            assert len(table) == 3
            assert np.isfinite(slope)

    @pytest.mark.slow
    def test_growth_over_varrho_and_radii(self, cell: UnitCell):
        results = inverse_estimate_scan(
            cell, (0.0, 0.0, 0.0), [0.5, 1.0, 1.5], BasisParams(K=12, N=12, L=12)
        )
        for radius, (table, _) in results.items():
            rows = [row for row in table if row.varrho >= 4]
            values = [row.lambda_max for row in rows]
            assert all(np.isfinite(values)), radius
            for previous, current in zip(values, values[1:]):
                assert current >= previous * (1.0 - 1e-6)
            # No saturation at the truncation: growth continues to the last row
            assert values[-1] > values[0]
            assert values[-1] < 0.9 * _ceiling(rows[-1].l_cut)
            slope = fit_loglog_slope(table, min_varrho=4)
            assert 0.5 < slope < 4.5
