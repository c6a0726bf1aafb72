"""Pytest fixtures and configuration for apw-dg tests.

Provides common fixtures for geometry, small bases and problem configs.
"""

from pathlib import Path
from typing import Any

import pytest
import yaml

from apwdg.basis import BasisParams, MixedBasis, build_mixed_basis
from apwdg.geometry import AtomicSite, UnitCell

# -----------------------------------------------------------------------------
# Geometry
# -----------------------------------------------------------------------------


@pytest.fixture
def cell() -> UnitCell:
    """Cubic cell with D = 10 bohr."""
    return UnitCell(edge_length=10.0)


@pytest.fixture
def single_site() -> tuple[AtomicSite, ...]:
    """One hydrogen-like nucleus at the origin with R = 1."""
    return (AtomicSite(center=(0.0, 0.0, 0.0), radius=1.0, charge=1.0),)


@pytest.fixture
def two_sites() -> tuple[AtomicSite, ...]:
    """Two unit spheres on the x axis, 3 bohr apart."""
    return (
        AtomicSite(center=(-1.5, 0.0, 0.0), radius=1.0, charge=1.0),
        AtomicSite(center=(1.5, 0.0, 0.0), radius=1.0, charge=1.0),
    )


@pytest.fixture
def small_params() -> BasisParams:
    """Small balanced discretization that assembles in well under a second."""
    return BasisParams(K=2, N=4, L=2)


@pytest.fixture
def small_basis(
    cell: UnitCell, single_site: tuple[AtomicSite, ...], small_params: BasisParams
) -> MixedBasis:
    return build_mixed_basis(cell, single_site, small_params)


# -----------------------------------------------------------------------------
# Configuration
# -----------------------------------------------------------------------------


@pytest.fixture
def sample_config_dict() -> dict[str, Any]:
    """Return a minimal valid, quickly solvable config as a dictionary."""
    return {
        "schema_version": 1,
        "cell": {"lattice": "cubic", "edge_length": 10.0},
        "sites": [{"center": [0.0, 0.0, 0.0], "radius": 1.0, "charge": 1.0}],
        "potential": {"family": "periodized-coulomb"},
        "basis": {"K": 2, "N": 4, "L": 2},
        "penalty": {"C_sigma": 20.0},
        "solver": {"nev": 3},
    }


@pytest.fixture
def sample_config_yaml(sample_config_dict: dict[str, Any]) -> str:
    """Return the sample config as YAML text."""
    return yaml.safe_dump(sample_config_dict, sort_keys=False)


@pytest.fixture
def config_file(tmp_path: Path, sample_config_yaml: str) -> Path:
    """Create a temporary config file."""
    path = tmp_path / "problem.yaml"
    path.write_text(sample_config_yaml)
    return path


@pytest.fixture
def write_config(tmp_path: Path):
    """Factory writing a config mapping to a YAML file under tmp_path."""

    def _write(data: dict[str, Any], name: str = "problem.yaml") -> Path:
        path = tmp_path / name
        path.write_text(yaml.safe_dump(data, sort_keys=False))
        return path

    return _write


@pytest.fixture
def set_config_env(config_file: Path, monkeypatch: pytest.MonkeyPatch) -> Path:
    """Set APWDG_CONFIG_PATH to the temp config file."""
    monkeypatch.setenv("APWDG_CONFIG_PATH", str(config_file))
    return config_file


@pytest.fixture
def repo_config_dir() -> Path:
    """The example configs shipped with the repository."""
    return Path(__file__).parent.parent / "config"
