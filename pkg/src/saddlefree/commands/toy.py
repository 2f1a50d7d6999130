import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import rich_click as click
from rich.table import Table

from saddlefree.commands.common import method_options, parse_point, solver_settings
from saddlefree.core.harness import (
    SOLVER_NAMES,
    SOLVERS,
    write_reports_jsonl,
    write_trajectory_csv,
)
from saddlefree.core.oracles import CallCounters
from saddlefree.core.problems import toy_box
from saddlefree.utils.console import console
from saddlefree.utils.validators import ensure_output_directory

DEFAULT_STARTS = {"quadratic_box": [0.1, 0.0], "l1_box": [-0.4, 0.0]}


@click.command(name="toy")
@click.option(
    "--variant",
    default="quadratic_box",
    type=click.Choice(list(DEFAULT_STARTS)),
    show_default=True,
    help="Toy landscape: box-constrained concave quadratic, or with |x| added.",
)
@click.option(
    "--solver",
    default="ntra",
    type=click.Choice(list(SOLVER_NAMES)),
    show_default=True,
    help="Solver to run.",
)
@click.option(
    "--x0",
    default=None,
    callback=parse_point,
    help="Initial point, e.g. '0.1,0'. Defaults to (0.1, 0) or (-0.4, 0) by variant.",
)
@click.option("--gamma", default=None, type=float, help="Initial stepsize (default 0.9/L).")
@click.option("--delta0", default=None, type=float, help="Initial trust-region radius.")
@click.option("--seed", default=0, type=int, show_default=True, help="Run seed.")
@method_options
def toy(
    variant: str,
    solver: str,
    x0: Optional[List[float]],
    gamma: Optional[float],
    delta0: Optional[float],
    seed: int,
    sbar: float,
    direction: str,
    max_iter: Optional[int],
    out: Path,
) -> None:
    """
    Run one solver on a two-dimensional toy problem.

    Writes ``toy-<variant>-<solver>.jsonl`` with the run report and
    ``toy-<variant>-<solver>-trajectory.csv`` (columns iter, x1, x2, fbe,
    res_inf) into the output directory.
    """
    try:
        problem = toy_box(variant)  # type: ignore[arg-type]
        start = np.array(x0 if x0 is not None else DEFAULT_STARTS[variant])
        settings = solver_settings(
            gamma=gamma,
            delta0=delta0,
            sbar=sbar,
            direction=direction,
            max_iter=max_iter,
            trajectory=True,
        )
        report = SOLVERS[solver](problem, settings, seed, start, CallCounters())

        ensure_output_directory(out)
        stem = f"toy-{variant}-{solver}"
        write_reports_jsonl([report], out / f"{stem}.jsonl")
        trajectory_path = write_trajectory_csv(report, out / f"{stem}-trajectory.csv")

        table = Table(title=f"{solver} on {problem.name}")
        table.add_column("field")
        table.add_column("value")
        table.add_row("status", report.status)
        table.add_row("final point", str(report.final_point))
        table.add_row("final phi", f"{report.final_phi:.12g}")
        table.add_row("iterations", str(report.iterations))
        if report.lambda_min_estimate is not None:
            table.add_row("lambda_min", f"{report.lambda_min_estimate:.6g}")
        for name, count in report.counters.model_dump().items():
            table.add_row(name, str(count))
        console.print(table)
        console.print(f"Trajectory written to [bold]{trajectory_path}[/bold]")
    except Exception as e:
        click.echo(f"Error: {e}", err=True)
        sys.exit(1)
