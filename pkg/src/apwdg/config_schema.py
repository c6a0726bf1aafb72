"""Pydantic configuration schema for apw-dg problem files.

This module defines the schema that mirrors the problem YAML structure.
Every model forbids unknown keys, so a misspelt key is reported with its
dotted path instead of being silently ignored.

Usage:
    from apwdg.config_schema import ProblemConfig

    config = ProblemConfig(**yaml_data)
    problem = config.to_problem()
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from apwdg.basis import BasisParams
from apwdg.engine.scf import ScfConfig
from apwdg.geometry import AtomicSite, UnitCell
from apwdg.studies.convergence import ProblemSpec, ReferenceParams, StudyConfig

# Current schema version - increment when adding new required fields
CURRENT_SCHEMA_VERSION = 1


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CellConfig(_Section):
    """Periodic unit cell."""

    lattice: Literal["cubic"] = Field(
        default="cubic",
        description="Lattice kind; only the cubic cell [-D/2, D/2]^3 is supported",
    )
    edge_length: float = Field(gt=0.0, description="Cube edge D in bohr")


class SiteConfig(_Section):
    """One atomic sphere."""

    center: tuple[float, float, float] = Field(description="Nucleus position in bohr")
    radius: float = Field(gt=0.0, description="Sphere radius R in bohr")
    charge: float = Field(default=1.0, gt=0.0, description="Nuclear charge Z")

    def to_site(self) -> AtomicSite:
        return AtomicSite(center=self.center, radius=self.radius, charge=self.charge)


class PotentialConfig(_Section):
    """External potential."""

    family: Literal["periodized-coulomb", "zero", "fourier-file"] = Field(
        default="periodized-coulomb",
        description="Potential family; Coulomb sites are implied by the sites section",
    )
    coulomb_scale: float = Field(
        default=1.0, ge=0.0, description="Multiplier of the nuclear Coulomb potential"
    )
    fourier_file: str | None = Field(
        default=None, description="CSV of extra Fourier coefficients (n1,n2,n3,re,im)"
    )
    k_pot: int | None = Field(default=None, ge=1, description="Potential cutoff (default 4K)")
    l_pot: int | None = Field(
        default=None, ge=0, description="Sphere expansion cutoff (default 2L)"
    )

    @model_validator(mode="after")
    def validate_fourier_file(self) -> PotentialConfig:
        """The fourier-file family needs a file."""
        if self.family == "fourier-file" and not self.fourier_file:
            raise ValueError("family 'fourier-file' requires potential.fourier_file")
        return self


class BasisConfig(_Section):
    """Mixed-basis discretization parameters."""

    K: int = Field(ge=1, description="Plane-wave cutoff, |k| <= 2*pi*K/D")
    N: int = Field(ge=0, description="Highest radial index")
    L: int = Field(ge=0, description="Highest angular momentum")
    epsilon: float = Field(default=0.0, ge=0.0, description="Penalty exponent tweak")
    radial_kind: Literal["polynomial", "slater"] = Field(
        default="polynomial", description="Radial family inside the spheres"
    )
    slater_eta: float = Field(default=1.0, gt=0.0, description="Decay of the Slater family")

    def to_params(self) -> BasisParams:
        return BasisParams(
            K=self.K,
            N=self.N,
            L=self.L,
            epsilon=self.epsilon,
            radial_kind=self.radial_kind,
            slater_eta=self.slater_eta,
        )


class PenaltyConfig(_Section):
    C_sigma: float = Field(default=20.0, gt=0.0, description="Penalty constant C_sigma")


class SolverConfig(_Section):
    nev: int = Field(default=8, ge=1, description="Number of lowest eigenpairs")


class ScfSection(_Section):
    """Self-consistent field settings."""

    enabled: bool = Field(default=False, description="Run the SCF loop instead of one solve")
    occupation: float = Field(default=2.0, gt=0.0, description="Electrons per occupied orbital")
    n_occupied: int = Field(default=1, ge=1, description="Number of occupied orbitals")
    mixing_alpha: float = Field(default=0.3, gt=0.0, le=1.0, description="Linear mixing weight")
    max_iters: int = Field(default=50, ge=1, description="Iteration limit")
    tol: float = Field(default=1e-6, gt=0.0, description="Density residual threshold")
    density_grid: int = Field(default=65, ge=3, description="Density grid points per axis")
    hartree_scale: float = Field(
        default=1.0, ge=0.0, description="Multiplier of the Hartree potential"
    )

    @field_validator("density_grid")
    @classmethod
    def validate_density_grid(cls, v: int) -> int:
        """The density grid must be odd so it is symmetric about the origin."""
        if v % 2 == 0:
            raise ValueError(f"density_grid must be odd, got {v}")
        return v

    def to_scf_config(self) -> ScfConfig:
        return ScfConfig(
            occupation=self.occupation,
            n_occupied=self.n_occupied,
            mixing_alpha=self.mixing_alpha,
            max_iters=self.max_iters,
            tol=self.tol,
            density_grid=self.density_grid,
            hartree_scale=self.hartree_scale,
        )


class ReferenceConfig(_Section):
    """High-resolution reference of a convergence study."""

    K: int = Field(ge=1)
    N: int = Field(ge=0)
    L: int = Field(ge=0)
    C_sigma: float | None = Field(
        default=None, gt=0.0, description="Reference penalty (default: penalty.C_sigma)"
    )


class StudySection(_Section):
    """One-parameter convergence sweep."""

    sweep_var: Literal["K", "N", "L", "R", "C_sigma"] = Field(description="Swept parameter")
    values: list[float] = Field(min_length=1, description="Ascending sweep values")
    reference: ReferenceConfig
    track: list[int] = Field(default=[0], min_length=1, description="Tracked eigenpairs")
    planewave_baseline: list[int] = Field(
        default=[], description="Plane-wave cutoffs compared against the same reference"
    )

    @field_validator("values")
    @classmethod
    def validate_ascending(cls, v: list[float]) -> list[float]:
        if v != sorted(v):
            raise ValueError(f"values must be ascending, got {v}")
        return v

    @field_validator("track")
    @classmethod
    def validate_track(cls, v: list[int]) -> list[int]:
        if any(i < 0 for i in v):
            raise ValueError("track indices must be >= 0")
        if len(set(v)) != len(v):
            raise ValueError("track indices must be distinct")
        return v


class InverseEstimateConfig(_Section):
    """Surface inverse-estimate experiment."""

    site: int = Field(default=0, ge=0, description="Site whose center is used")
    radii: list[float] | None = Field(
        default=None, description="Radii to scan (default: the site's radius)"
    )
    varrho: int = Field(default=12, ge=1, description="Largest discretization parameter")
    l_cut: int | None = Field(default=None, ge=0, description="Harmonic truncation")

    @field_validator("radii")
    @classmethod
    def validate_radii(cls, v: list[float] | None) -> list[float] | None:
        if v is not None and (not v or any(r <= 0.0 for r in v)):
            raise ValueError("radii must be a non-empty list of positive lengths")
        return v


class LinePlotConfig(_Section):
    """Samples of eigenfunctions along a segment."""

    start: tuple[float, float, float] = Field(default=(-5.0, 0.0, 0.0))
    stop: tuple[float, float, float] = Field(default=(5.0, 0.0, 0.0))
    n_points: int = Field(default=201, ge=2)
    indices: list[int] = Field(default=[0], min_length=1, description="Eigenpairs to sample")
    planewave_K: int | None = Field(
        default=None, ge=1, description="Also sample a plane-wave solution with this cutoff"
    )


class ProblemConfig(_Section):
    """Root configuration model."""

    schema_version: int = Field(default=1, description="Configuration schema version")
    cell: CellConfig
    sites: list[SiteConfig] = Field(min_length=1)
    potential: PotentialConfig = Field(default_factory=PotentialConfig)
    basis: BasisConfig
    penalty: PenaltyConfig = Field(default_factory=PenaltyConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    scf: ScfSection = Field(default_factory=ScfSection)
    study: StudySection | None = None
    inverse_estimate: InverseEstimateConfig = Field(default_factory=InverseEstimateConfig)
    line_plot: LinePlotConfig = Field(default_factory=LinePlotConfig)

    def cell_model(self) -> UnitCell:
        return UnitCell(edge_length=self.cell.edge_length)

    def site_models(self) -> tuple[AtomicSite, ...]:
        return tuple(site.to_site() for site in self.sites)

    def to_problem(self, base_dir: Path | None = None) -> ProblemSpec:
        """Problem specification; relative file paths resolve against base_dir."""
        fourier_file = None
        if self.potential.fourier_file:
            fourier_file = Path(self.potential.fourier_file)
            if base_dir is not None and not fourier_file.is_absolute():
                fourier_file = base_dir / fourier_file
        return ProblemSpec(
            cell=self.cell_model(),
            sites=self.site_models(),
            params=self.basis.to_params(),
            C_sigma=self.penalty.C_sigma,
            potential_family=self.potential.family,
            coulomb_scale=self.potential.coulomb_scale,
            fourier_file=fourier_file,
            k_pot=self.potential.k_pot,
            l_pot=self.potential.l_pot,
            nev=self.solver.nev,
            scf=self.scf.to_scf_config() if self.scf.enabled else None,
        )

    def to_study(self, problem: ProblemSpec) -> StudyConfig | None:
        """Sweep of the study section around problem (normally self.to_problem())."""
        if self.study is None:
            return None
        ref = self.study.reference
        return StudyConfig(
            problem=problem,
            sweep_var=self.study.sweep_var,
            values=tuple(self.study.values),
            reference=ReferenceParams(K=ref.K, N=ref.N, L=ref.L, C_sigma=ref.C_sigma),
            track=tuple(self.study.track),
            planewave_baseline=tuple(self.study.planewave_baseline),
        )
