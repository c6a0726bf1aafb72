"""CSV artifacts written by the CLI.

Every file starts with '#' comment lines stating the units (atomic units:
bohr, hartree) and the generating command, followed by a header row.
Numbers use '.' decimals and ',' separators. Timing columns are the only
non-deterministic values.
"""

from __future__ import annotations

import csv
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any

import numpy as np

from apwdg.core.logging import get_logger
from apwdg.engine.scf import ScfIteration
from apwdg.engine.solver import EigenSolution
from apwdg.studies.errors import ErrorRecord
from apwdg.studies.inverse_estimate import ScalingRow

logger = get_logger(__name__)

UNITS_NOTE = "# All quantities in atomic units (lengths in bohr, energies in hartree)"


def _format(value: Any) -> str:
    if isinstance(value, float | np.floating):
        return repr(float(value))
    return str(value)


def write_csv(
    path: Path,
    header: Sequence[str],
    rows: Iterable[Sequence[Any]],
    comments: Sequence[str] = (),
) -> Path:
    """Write a commented CSV file, creating parent directories."""
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", newline="") as f:
        f.write(UNITS_NOTE + "\n")
        for comment in comments:
            f.write(f"# {comment}\n")
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format(v) for v in row])
            count += 1
    logger.info("artifact_written", path=str(path), rows=count)
    return path


def read_csv_rows(path: Path) -> list[dict[str, str]]:
    """Read an artifact back (comment lines skipped)."""
    with open(path, newline="") as f:
        return list(csv.DictReader(line for line in f if not line.startswith("#")))


def write_eigenvalues(path: Path, solution: EigenSolution, dofs: int) -> Path:
    rows = [
        (i, float(value), float(residual), dofs)
        for i, (value, residual) in enumerate(
            zip(solution.eigenvalues, solution.residual_norms, strict=True)
        )
    ]
    return write_csv(
        path,
        ["index", "eigenvalue", "residual_norm", "dofs"],
        rows,
        comments=[f"mass_condition={solution.condition_estimate:.6e}"],
    )


def write_study(path: Path, records: Sequence[ErrorRecord]) -> Path:
    header = [
        "sweep_var",
        "value",
        "dofs",
        "eig_index",
        "eigenvalue",
        "eig_error",
        "l2_error",
        "h1_error",
        "jump_error",
        "dg_error",
        "assemble_s",
        "solve_s",
    ]
    rows = [
        (
            r.sweep_var,
            r.value,
            r.dofs,
            r.eig_index,
            r.eigenvalue,
            r.eig_error,
            r.l2_error,
            r.h1_error,
            r.jump_error,
            r.dg_error,
            r.assemble_s,
            r.solve_s,
        )
        for r in records
    ]
    return write_csv(path, header, rows)


def write_scf_history(path: Path, history: Sequence[ScfIteration]) -> Path:
    rows = [
        (h.iteration, h.residual, h.eigenvalue, h.charge_deviation, h.grid_charge_error)
        for h in history
    ]
    return write_csv(
        path,
        ["iteration", "residual", "lambda", "charge_deviation", "grid_charge_error"],
        rows,
    )


def write_scaling(path: Path, tables: dict[float, tuple[list[ScalingRow], float]]) -> Path:
    rows = []
    slopes = []
    for radius, (table, slope) in tables.items():
        slopes.append(f"slope(R={radius})={slope:.6f}")
        rows.extend(
            (r.radius, r.varrho, r.K, r.N, r.L, r.l_cut, r.lambda_max, r.rank, r.dropped)
            for r in table
        )
    return write_csv(
        path,
        ["radius", "varrho", "K", "N", "L", "l_cut", "lambda_max", "rank", "dropped"],
        rows,
        comments=slopes,
    )


def write_line_samples(
    path: Path,
    arc_length: np.ndarray,
    points: np.ndarray,
    values: dict[str, np.ndarray],
) -> Path:
    """Samples along a segment; one (re, im) column pair per named curve."""
    header = ["s", "x", "y", "z"]
    for name in values:
        header.extend([f"{name}_re", f"{name}_im"])
    rows = []
    for i in range(arc_length.size):
        row: list[Any] = [float(arc_length[i]), *map(float, points[i])]
        for curve in values.values():
            row.extend([float(curve[i].real), float(curve[i].imag)])
        rows.append(row)
    return write_csv(path, header, rows)
