"""Command-line interface for the APW-DG eigensolver.

Every subcommand reads one problem config, applies --set overrides, runs
and writes its CSV artifacts into --out.

Usage:
    apwdg solve --config config/example1.yaml --out out/
    apwdg converge --config config/example1.yaml --set study.values=[4,6,8]
    apwdg scf --config config/example3.yaml
    apwdg inverse-estimate --config config/inverse_estimate.yaml
    apwdg line-plot --config config/example1.yaml --set line_plot.planewave_K=12
    apwdg validate-config --config config/example2.yaml
"""

from __future__ import annotations

import sys
import uuid
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import TYPE_CHECKING, Any

import click
from rich.console import Console
from rich.table import Table

from apwdg.core.errors import ApwDgError, NotConverged, ProblemValidationError
from apwdg.core.logging import configure_logging, get_logger, set_run_id

if TYPE_CHECKING:
    from apwdg.config_schema import ProblemConfig
    from apwdg.studies.convergence import ProblemSpec

console = Console()
err_console = Console(stderr=True)
logger = get_logger(__name__)


def _common_options(command: Callable[..., Any]) -> Callable[..., Any]:
    """Options shared by every subcommand."""
    command = click.option(
        "--threads",
        type=click.IntRange(min=1),
        default=1,
        show_default=True,
        help="Worker threads for assembly and sweeps",
    )(command)
    command = click.option(
        "--set",
        "overrides",
        multiple=True,
        metavar="KEY=VALUE",
        help="Override a config value, e.g. --set basis.K=12 (repeatable)",
    )(command)
    command = click.option(
        "--out",
        "out_dir",
        type=click.Path(file_okay=False, path_type=Path),
        default=Path("out"),
        show_default=True,
        help="Output directory for artifacts",
    )(command)
    command = click.option(
        "--config",
        "-c",
        "config_path",
        type=click.Path(exists=False, dir_okay=False, path_type=Path),
        default=None,
        help="Problem config (default: $APWDG_CONFIG_PATH or config/example1.yaml)",
    )(command)
    return command


def _load(
    config_path: Path | None, overrides: Sequence[str]
) -> tuple[ProblemConfig, ProblemSpec]:
    from apwdg.config import parse_config

    config, problem = parse_config(config_path, overrides)
    problem.params.check_balance()
    return config, problem


def _eigen_table(eigenvalues: Sequence[float], residuals: Sequence[float]) -> Table:
    table = Table(box=None, padding=(0, 2))
    table.add_column("Index", justify="right")
    table.add_column("Eigenvalue (Ha)", justify="right", style="cyan")
    table.add_column("Residual", justify="right")
    for i, (value, residual) in enumerate(zip(eigenvalues, residuals, strict=True)):
        table.add_row(str(i), f"{value:.10f}", f"{residual:.2e}")
    return table


@click.group()
@click.option("--debug/--no-debug", default=False, help="Enable debug logging")
@click.option("--json-logs/--no-json-logs", default=False, help="Emit JSON log lines")
def cli(debug: bool, json_logs: bool) -> None:
    """APW-DG - mixed-basis DG eigensolver for periodic Coulomb problems."""
    log_level = "DEBUG" if debug else "INFO"
    configure_logging(log_level=log_level, json_output=json_logs)
    set_run_id(str(uuid.uuid4()))


@cli.command("solve")
@_common_options
@click.option(
    "--dump-matrices", is_flag=True, default=False, help="Also write H, M, J, ... to matrices.npz"
)
def solve(
    config_path: Path | None,
    out_dir: Path,
    overrides: tuple[str, ...],
    threads: int,
    dump_matrices: bool,
) -> None:
    """Solve for the lowest eigenpairs and write eigenvalues.csv."""
    from apwdg.engine.assembly import dump_operators
    from apwdg.studies.artifacts import write_eigenvalues
    from apwdg.studies.convergence import solve_problem

    _, problem = _load(config_path, overrides)
    result = solve_problem(problem, threads=threads)

    write_eigenvalues(out_dir / "eigenvalues.csv", result.solution, result.basis.total_dim)
    if dump_matrices:
        dump_operators(result.operators, out_dir / "matrices.npz")

    console.print(
        f"\n[bold]{result.basis.total_dim} DOFs[/bold]  |  "
        f"assembly {result.assemble_s:.2f}s  |  solve {result.solve_s:.2f}s"
    )
    console.print(_eigen_table(result.solution.eigenvalues, result.solution.residual_norms))
    console.print(f"\n[green]✓[/green] Wrote artifacts to [cyan]{out_dir}[/cyan]")


@cli.command("converge")
@_common_options
def converge(
    config_path: Path | None, out_dir: Path, overrides: tuple[str, ...], threads: int
) -> None:
    """Run the convergence study of the config's study section; write study.csv."""
    from apwdg.studies.artifacts import write_study
    from apwdg.studies.convergence import convergence_study

    config, problem = _load(config_path, overrides)
    study = config.to_study(problem)
    if study is None:
        raise ProblemValidationError(
            "The config has no 'study' section. Fix: add study.sweep_var, study.values "
            "and study.reference."
        )
    records = convergence_study(study, threads=threads)
    write_study(out_dir / "study.csv", records)

    table = Table(box=None, padding=(0, 2))
    table.add_column(study.sweep_var)
    table.add_column("DOFs", justify="right")
    table.add_column("Index", justify="right")
    table.add_column("Eigenvalue (Ha)", justify="right", style="cyan")
    table.add_column("Eig error", justify="right")
    table.add_column("DG error", justify="right")
    for r in records:
        label = f"{r.value:g}" if r.sweep_var == study.sweep_var else f"pw K={r.value:g}"
        table.add_row(
            label,
            str(r.dofs),
            str(r.eig_index),
            f"{r.eigenvalue:.8f}",
            f"{r.eig_error:.3e}",
            f"{r.dg_error:.3e}",
        )
    console.print(table)
    console.print(f"\n[green]✓[/green] Wrote {len(records)} rows to [cyan]{out_dir}[/cyan]")


@cli.command("scf")
@_common_options
def scf(config_path: Path | None, out_dir: Path, overrides: tuple[str, ...], threads: int) -> None:
    """Run the Hartree SCF loop; write scf_history.csv and eigenvalues.csv."""
    from apwdg.engine.assembly import PenaltySpec
    from apwdg.engine.scf import scf_solve
    from apwdg.studies.artifacts import write_eigenvalues, write_scf_history

    config, problem = _load(config_path, overrides)
    scf_config = problem.scf or config.scf.to_scf_config()
    try:
        state = scf_solve(
            problem.cell,
            problem.sites,
            problem.params,
            scf_config,
            PenaltySpec.for_params(problem.params, problem.C_sigma),
            k_pot=problem.effective_k_pot(),
            l_pot=problem.l_pot,
            nev=problem.nev,
            threads=threads,
        )
    except NotConverged as e:
        write_scf_history(out_dir / "scf_history.csv", e.history)
        raise

    write_scf_history(out_dir / "scf_history.csv", state.history)
    dofs = state.operators.total_dim if state.operators is not None else 0
    write_eigenvalues(out_dir / "eigenvalues.csv", state.solution, dofs)

    table = Table(box=None, padding=(0, 2))
    table.add_column("Iteration", justify="right")
    table.add_column("Residual", justify="right")
    table.add_column("Lowest eigenvalue (Ha)", justify="right", style="cyan")
    table.add_column("Charge deviation", justify="right")
    table.add_column("Grid charge error", justify="right")
    for h in state.history:
        table.add_row(
            str(h.iteration),
            f"{h.residual:.3e}",
            f"{h.eigenvalue:.10f}",
            f"{h.charge_deviation:.1e}",
            f"{h.grid_charge_error:+.1e}",
        )
    console.print(table)
    console.print(
        f"\n[green]✓[/green] SCF converged in {state.iteration} iterations; "
        f"artifacts in [cyan]{out_dir}[/cyan]"
    )


@cli.command("inverse-estimate")
@_common_options
def inverse_estimate(
    config_path: Path | None, out_dir: Path, overrides: tuple[str, ...], threads: int
) -> None:
    """Surface inverse-estimate table and log-log slope per radius; write scaling.csv."""
    from apwdg.basis import BasisParams
    from apwdg.core.errors import InvalidIndex
    from apwdg.studies.artifacts import write_scaling
    from apwdg.studies.inverse_estimate import inverse_estimate_scan

    config, problem = _load(config_path, overrides)
    section = config.inverse_estimate
    if section.site >= len(problem.sites):
        raise InvalidIndex(
            f"inverse_estimate.site={section.site} but the config has "
            f"{len(problem.sites)} site(s). Fix: use an index below {len(problem.sites)}."
        )
    site = problem.sites[section.site]
    params = BasisParams(
        K=section.varrho,
        N=section.varrho,
        L=section.varrho,
        radial_kind=problem.params.radial_kind,
        slater_eta=problem.params.slater_eta,
    )
    results = inverse_estimate_scan(
        problem.cell, site.center, section.radii or [site.radius], params, section.l_cut
    )
    write_scaling(out_dir / "scaling.csv", results)

    table = Table(box=None, padding=(0, 2))
    table.add_column("R (bohr)", justify="right")
    table.add_column("lambda_max at varrho", justify="right", style="cyan")
    table.add_column("log-log slope", justify="right")
    for radius, (rows, slope) in results.items():
        table.add_row(f"{radius:g}", f"{rows[-1].lambda_max:.6e}", f"{slope:.4f}")
    console.print(table)
    console.print(f"\n[green]✓[/green] Wrote artifacts to [cyan]{out_dir}[/cyan]")


@cli.command("line-plot")
@_common_options
def line_plot(
    config_path: Path | None, out_dir: Path, overrides: tuple[str, ...], threads: int
) -> None:
    """Sample eigenfunctions along a segment; write line.csv."""
    import numpy as np

    from apwdg.basis import DgFunction, sample_segment
    from apwdg.studies.artifacts import write_line_samples
    from apwdg.studies.convergence import build_potential, solve_problem
    from apwdg.studies.reference import pw_reference_solve

    config, problem = _load(config_path, overrides)
    section = config.line_plot
    nev = max(problem.nev, max(section.indices) + 1)
    result = solve_problem(problem, threads=threads, nev=nev)

    arc_length = points = None
    values: dict[str, np.ndarray] = {}
    for i in section.indices:
        fn = DgFunction(result.basis, result.solution.eigenvectors[:, i])
        arc_length, points, values[f"dg{i}"] = sample_segment(
            fn, section.start, section.stop, section.n_points
        )

    if section.planewave_K is not None:
        pw = pw_reference_solve(
            problem.cell, build_potential(problem), section.planewave_K, nev
        )
        for i in section.indices:
            samples = pw.evaluate(i, points)
            # Align the arbitrary global phase with the DG curve
            overlap = np.vdot(samples, values[f"dg{i}"])
            if abs(overlap) > 0.0:
                samples = samples * (overlap / abs(overlap))
            values[f"pw{i}"] = samples

    write_line_samples(out_dir / "line.csv", arc_length, points, values)
    console.print(
        f"\n[green]✓[/green] Sampled {len(values)} curve(s) at {section.n_points} points; "
        f"artifacts in [cyan]{out_dir}[/cyan]"
    )


@cli.command("validate-config")
@_common_options
def validate_config(
    config_path: Path | None, out_dir: Path, overrides: tuple[str, ...], threads: int
) -> None:
    """Validate a config (schema and geometry) and print the DOF summary."""
    from apwdg.basis import build_mixed_basis
    from apwdg.engine.assembly import penalty_sigma
    from apwdg.studies.convergence import sweep_problems

    config, problem = _load(config_path, overrides)
    basis = build_mixed_basis(problem.cell, problem.sites, problem.params)

    console.print(
        f"\n[green]✓[/green] Configuration valid (schema version {config.schema_version})"
    )
    console.print(f"  - {len(problem.sites)} site(s), cell edge {problem.cell.edge_length:g} bohr")
    console.print(
        f"  - K={problem.params.K}, N={problem.params.N}, L={problem.params.L} "
        f"(varrho={problem.params.varrho})"
    )
    console.print(
        f"  - {basis.n_pw} plane waves + {len(problem.sites)} x {basis.sphere_block_size} "
        f"sphere functions = {basis.total_dim} DOFs"
    )
    console.print(f"  - sigma = {penalty_sigma(problem.params, problem.C_sigma):.6g}")
    study = config.to_study(problem)
    if study is not None:
        dofs = [
            build_mixed_basis(p.cell, p.sites, p.params).total_dim
            for p in sweep_problems(study)
        ]
        console.print(f"  - study over {study.sweep_var}: DOFs {dofs}")


def run(argv: Sequence[str] | None = None) -> int:
    """Run the CLI and return its exit code.

    0 on success, 2 for configuration errors, 3 for invalid problems,
    4 for numerical failures.
    """
    try:
        result = cli.main(
            args=list(argv) if argv is not None else None,
            prog_name="apwdg",
            standalone_mode=False,
        )
    except ApwDgError as e:
        logger.error("command_failed", error_type=type(e).__name__, exit_code=e.exit_code)
        err_console.print(f"[red]Error ({type(e).__name__}):[/red] {e}")
        return e.exit_code
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.exceptions.Abort:
        err_console.print("\n[yellow]Cancelled.[/yellow]")
        return 130
    return result if isinstance(result, int) else 0


def main() -> None:
    """Entry point for the CLI."""
    sys.exit(run())


if __name__ == "__main__":
    main()
