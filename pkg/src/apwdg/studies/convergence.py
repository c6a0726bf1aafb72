"""Problem setup, single solves and convergence sweeps.

A ProblemSpec bundles everything needed to build and solve one
discretization. convergence_study() solves a high-resolution reference once,
then every sweep point (in a worker pool), and compares the tracked
eigenpairs. Records always come back in sweep order.

Usage:
    problem = ProblemSpec(cell=cell, sites=sites, params=BasisParams(K=6, N=12, L=4))
    study = StudyConfig(problem=problem, sweep_var="K", values=[2, 3, 4, 5],
                        reference=ReferenceParams(K=10, N=24, L=8))
    records = convergence_study(study, threads=4)
"""

from __future__ import annotations

import dataclasses
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

from apwdg.basis import BasisParams, build_mixed_basis
from apwdg.core.errors import ProblemValidationError
from apwdg.core.logging import get_logger
from apwdg.engine.assembly import PenaltySpec, assemble_operators
from apwdg.engine.scf import ScfConfig, scf_solve
from apwdg.engine.solver import solve_lowest
from apwdg.geometry import AtomicSite, UnitCell, validate_sites
from apwdg.potential import (
    PotentialSpec,
    fourier_file_potential,
    periodized_coulomb_fourier,
    zero_potential,
)
from apwdg.studies.errors import (
    Discretization,
    EigenpairError,
    ErrorRecord,
    dg_error,
    planewave_error,
)
from apwdg.studies.reference import pw_reference_solve

logger = get_logger(__name__)

SweepVariable = Literal["K", "N", "L", "R", "C_sigma"]
PotentialFamily = Literal["periodized-coulomb", "zero", "fourier-file"]

# Extra reference eigenpairs solved so that overlap matching has room to reorder
REFERENCE_NEV_MARGIN = 6


@dataclass(frozen=True)
class ProblemSpec:
    """One fully specified eigenvalue problem.

    Attributes:
        cell: Unit cell
        sites: Atomic sites
        params: Basis parameters
        C_sigma: Penalty constant
        potential_family: Which potential to build
        coulomb_scale: Multiplier of the Coulomb family
        fourier_file: CSV of extra Fourier coefficients (fourier-file family)
        k_pot: Potential cutoff, default 4K
        l_pot: Sphere expansion cutoff, default 2L
        nev: Eigenpairs per solve
        scf: SCF settings, or None for the linear problem
    """

    cell: UnitCell
    sites: tuple[AtomicSite, ...]
    params: BasisParams
    C_sigma: float = 20.0
    potential_family: PotentialFamily = "periodized-coulomb"
    coulomb_scale: float = 1.0
    fourier_file: Path | None = None
    k_pot: int | None = None
    l_pot: int | None = None
    nev: int = 8
    scf: ScfConfig | None = None

    def effective_k_pot(self) -> int:
        return self.k_pot if self.k_pot is not None else 4 * self.params.K

    def with_sweep_value(self, variable: SweepVariable, value: float) -> ProblemSpec:
        """Copy with one sweep variable replaced."""
        if variable in ("K", "N", "L"):
            params = dataclasses.replace(self.params, **{variable: int(value)})
            return dataclasses.replace(self, params=params)
        if variable == "R":
            sites = tuple(dataclasses.replace(site, radius=float(value)) for site in self.sites)
            return dataclasses.replace(self, sites=sites)
        if variable == "C_sigma":
            return dataclasses.replace(self, C_sigma=float(value))
        raise ProblemValidationError(f"Unknown sweep variable {variable!r}.")


def build_potential(problem: ProblemSpec) -> PotentialSpec:
    k_pot = problem.effective_k_pot()
    if problem.potential_family == "zero":
        return zero_potential(problem.cell, problem.sites, k_pot)
    if problem.potential_family == "fourier-file":
        if problem.fourier_file is None:
            raise ProblemValidationError(
                "potential.family 'fourier-file' needs potential.fourier_file to be set."
            )
        return fourier_file_potential(
            problem.cell, problem.sites, k_pot, problem.fourier_file, problem.coulomb_scale
        )
    return periodized_coulomb_fourier(problem.cell, problem.sites, k_pot, problem.coulomb_scale)


def solve_problem(problem: ProblemSpec, threads: int = 1, nev: int | None = None) -> Discretization:
    """Assemble and solve one discretization (running the SCF loop when configured)."""
    validate_sites(problem.cell, problem.sites)
    penalty = PenaltySpec.for_params(problem.params, problem.C_sigma)
    nev = nev or problem.nev

    if problem.scf is not None:
        started = time.perf_counter()
        state = scf_solve(
            problem.cell,
            problem.sites,
            problem.params,
            problem.scf,
            penalty,
            k_pot=problem.effective_k_pot(),
            l_pot=problem.l_pot,
            nev=nev,
            threads=threads,
        )
        operators = state.operators
        if operators is None:
            raise ProblemValidationError("SCF run finished without assembled operators.")
        return Discretization(
            basis=operators.basis,
            operators=operators,
            solution=state.solution,
            solve_s=time.perf_counter() - started,
        )

    started = time.perf_counter()
    basis = build_mixed_basis(problem.cell, problem.sites, problem.params)
    operators = assemble_operators(
        basis, build_potential(problem), penalty, l_pot=problem.l_pot, threads=threads
    )
    assembled = time.perf_counter()
    solution = solve_lowest(operators, min(nev, basis.total_dim))
    return Discretization(
        basis=basis,
        operators=operators,
        solution=solution,
        assemble_s=assembled - started,
        solve_s=time.perf_counter() - assembled,
    )


@dataclass(frozen=True)
class ReferenceParams:
    """High-resolution parameters of the study reference."""

    K: int
    N: int
    L: int
    C_sigma: float | None = None


@dataclass(frozen=True)
class StudyConfig:
    """A one-parameter convergence sweep.

    Attributes:
        problem: Base problem; the sweep variable overrides one of its values
        sweep_var: Swept parameter
        values: Ascending sweep values
        reference: Reference resolution
        track: Eigenpair indices to report
        planewave_baseline: Plane-wave cutoffs evaluated against the same reference
    """

    problem: ProblemSpec
    sweep_var: SweepVariable
    values: tuple[float, ...]
    reference: ReferenceParams
    track: tuple[int, ...] = (0,)
    planewave_baseline: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "track", tuple(self.track))
        object.__setattr__(self, "planewave_baseline", tuple(self.planewave_baseline))
        if not self.values:
            raise ProblemValidationError("study.values must contain at least one value.")
        if list(self.values) != sorted(self.values):
            raise ProblemValidationError(f"study.values must be ascending, got {self.values}.")
        self._check_dominance()

    def _check_dominance(self) -> None:
        ref = self.reference
        base = self.problem.params
        for name in ("K", "N", "L"):
            top = getattr(base, name)
            if self.sweep_var == name:
                top = int(max(self.values))
            if getattr(ref, name) < top:
                raise ProblemValidationError(
                    f"Reference {name}={getattr(ref, name)} does not dominate the sweep "
                    f"(needs >= {top}). Fix: raise study.reference.{name}."
                )

    def reference_problem(self) -> ProblemSpec:
        params = dataclasses.replace(
            self.problem.params, K=self.reference.K, N=self.reference.N, L=self.reference.L
        )
        C_sigma = self.reference.C_sigma or self.problem.C_sigma
        nev = max(self.problem.nev, max(self.track) + 1) + REFERENCE_NEV_MARGIN
        return dataclasses.replace(self.problem, params=params, C_sigma=C_sigma, nev=nev)

    def point_problem(self, value: float) -> ProblemSpec:
        problem = self.problem.with_sweep_value(self.sweep_var, value)
        return dataclasses.replace(problem, nev=max(problem.nev, max(self.track) + 1))


def _records(
    sweep_var: str,
    value: float,
    dofs: int,
    errors: Sequence[EigenpairError],
    assemble_s: float,
    solve_s: float,
) -> list[ErrorRecord]:
    return [
        ErrorRecord(
            sweep_var=sweep_var,
            value=value,
            dofs=dofs,
            eig_index=e.eig_index,
            eigenvalue=e.eigenvalue,
            eig_error=e.eig_error,
            l2_error=e.l2_error,
            h1_error=e.h1_error,
            jump_error=e.jump_error,
            dg_error=e.dg_error,
            assemble_s=assemble_s,
            solve_s=solve_s,
        )
        for e in errors
    ]


def convergence_study(config: StudyConfig, threads: int = 1) -> list[ErrorRecord]:
    """Run the reference, every sweep point and the plane-wave baseline.

    Returns:
        Records in sweep order (then baseline order), one per tracked eigenpair
    """
    ref_problem = config.reference_problem()
    logger.info(
        "reference_solve_started",
        K=ref_problem.params.K,
        N=ref_problem.params.N,
        L=ref_problem.params.L,
    )
    reference = solve_problem(ref_problem, threads=threads)
    ref_nev = reference.solution.nev
    if max(config.track) >= ref_nev:
        raise ProblemValidationError(
            f"Tracked index {max(config.track)} exceeds the {ref_nev} reference eigenpairs."
        )

    def run_point(value: float) -> list[ErrorRecord]:
        problem = config.point_problem(value)
        trial = solve_problem(problem)
        errors = dg_error(trial, reference, config.track)
        logger.info(
            "sweep_point_finished",
            sweep_var=config.sweep_var,
            value=value,
            dofs=trial.basis.total_dim,
            eig_error=errors[0].eig_error,
        )
        return _records(
            config.sweep_var, value, trial.basis.total_dim, errors, trial.assemble_s, trial.solve_s
        )

    def run_baseline(K: int) -> list[ErrorRecord]:
        pw = pw_reference_solve(
            config.problem.cell,
            build_potential(config.problem),
            K,
            max(config.problem.nev, max(config.track) + 1),
        )
        errors = planewave_error(pw, reference, config.track)
        logger.info("baseline_point_finished", K=K, dofs=pw.dofs, eig_error=errors[0].eig_error)
        return _records("planewave_K", K, pw.dofs, errors, pw.assemble_s, pw.solve_s)

    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        point_records = list(pool.map(run_point, config.values))
        baseline_records = list(pool.map(run_baseline, config.planewave_baseline))

    return [r for batch in point_records + baseline_records for r in batch]


def sweep_problems(config: StudyConfig) -> Sequence[ProblemSpec]:
    """Problems of every sweep point, for dry inspection (validate-config)."""
    return [config.point_problem(value) for value in config.values]
