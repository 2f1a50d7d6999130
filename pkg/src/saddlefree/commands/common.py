import functools
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import rich_click as click
from rich.table import Table

from saddlefree.core.baselines import BaselineConfig
from saddlefree.core.harness import (
    SOLVER_NAMES,
    Aggregate,
    SolverSettings,
    SweepConfig,
    aggregate,
    format_value,
    run_sweep,
    write_aggregate,
    write_reports_jsonl,
    write_trajectory_csv,
)
from saddlefree.core.ntra import NtraConfig
from saddlefree.core.pgcl import PgclConfig
from saddlefree.core.report import RunReport
from saddlefree.utils.console import console
from saddlefree.utils.validators import ensure_output_directory

F = Callable[..., Any]


def parse_seeds(ctx: click.Context, param: click.Parameter, value: str) -> List[int]:
    """
    Parse a seed list such as ``1-20``, ``1,2,5`` or ``1-3,10``.

    :raises click.BadParameter: On malformed items or reversed ranges.
    """
    seeds: List[int] = []
    for item in (part.strip() for part in value.split(",")):
        if not item:
            continue
        head, dash, tail = item.partition("-")
        try:
            lo = int(head)
            hi = int(tail) if dash else lo
        except ValueError:
            raise click.BadParameter(f"'{item}' is not a seed or seed range.")
        if lo < 0 or lo > hi:
            raise click.BadParameter(f"'{item}' is not a valid seed range.")
        seeds.extend(range(lo, hi + 1))
    if not seeds:
        raise click.BadParameter("At least one seed is required.")
    return sorted(set(seeds))


def parse_point(
    ctx: click.Context, param: click.Parameter, value: Optional[str]
) -> Optional[List[float]]:
    """Parse a comma-separated point such as ``0.1,0``."""
    if value is None:
        return None
    try:
        return [float(part) for part in value.split(",")]
    except ValueError:
        raise click.BadParameter(f"'{value}' is not a comma-separated list of numbers.")


def parse_solvers(ctx: click.Context, param: click.Parameter, value: str) -> List[str]:
    names = [name.strip() for name in value.split(",") if name.strip()]
    unknown = [name for name in names if name not in SOLVER_NAMES]
    if unknown or not names:
        raise click.BadParameter(
            f"Unknown solver(s) {', '.join(unknown) or '(none)'}; "
            f"choose from {', '.join(SOLVER_NAMES)}."
        )
    return names


def solver_settings(
    gamma: Optional[float] = None,
    delta0: Optional[float] = None,
    sbar: float = 1.0,
    direction: str = "newton_cg",
    max_iter: Optional[int] = None,
    trajectory: bool = False,
) -> SolverSettings:
    """Turn CLI options into per-method configurations; ``None`` keeps defaults."""
    shared: Dict[str, Any] = {"gamma0": gamma, "store_trajectory": trajectory}
    if max_iter is not None:
        shared["max_iter"] = max_iter
    ntra: Dict[str, Any] = dict(shared)
    if delta0 is not None:
        ntra["delta0"] = delta0
    return SolverSettings(
        ntra=NtraConfig(**ntra),
        pgcl=PgclConfig(sbar=sbar, direction_mode=direction, **shared),
        baseline=BaselineConfig(**shared),
    )


def method_options(func: F) -> F:
    """Options shared by every command that runs solvers."""
    options = [
        click.option(
            "--sbar",
            default=1.0,
            type=float,
            show_default=True,
            help="Scaling of PGCL's negative-curvature direction.",
        ),
        click.option(
            "--direction",
            default="newton_cg",
            type=click.Choice(["newton_cg", "lbfgs"]),
            show_default=True,
            help="PGCL fast direction.",
        ),
        click.option(
            "--max-iter",
            default=None,
            type=click.IntRange(min=1),
            help="Iteration budget (default: 2000 second-order, 10000 first-order).",
        ),
        click.option(
            "--out",
            "-o",
            default="results",
            show_default=True,
            type=click.Path(file_okay=False, path_type=Path),
            help="Directory receiving the result files.",
        ),
    ]
    return functools.reduce(lambda f, option: option(f), reversed(options), func)


def sweep_options(func: F) -> F:
    """Seed, solver and worker options of the experiment sweeps."""
    options = [
        click.option(
            "--seeds",
            default="1-20",
            show_default=True,
            callback=parse_seeds,
            help="Seeds as a list of integers and ranges, e.g. '1-20,25'.",
        ),
        click.option(
            "--solvers",
            default=",".join(SOLVER_NAMES),
            show_default=True,
            callback=parse_solvers,
            help="Comma-separated solvers to run on every instance.",
        ),
        click.option(
            "--workers",
            default=1,
            type=click.IntRange(min=1),
            envvar="SADDLEFREE_WORKERS",
            show_default=True,
            help="Runs executed concurrently.",
        ),
        click.option(
            "--trajectory",
            is_flag=True,
            help="Also write one trajectory CSV per run.",
        ),
    ]
    return method_options(
        functools.reduce(lambda f, option: option(f), reversed(options), func)
    )


def _fmt(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.6g}"


def report_table(reports: Sequence[RunReport]) -> Table:
    table = Table(title="Runs")
    for column in ("seed", "solver", "status", "iters", "phi", "|r|inf", "lambda_min"):
        table.add_column(column)
    for report in reports:
        table.add_row(
            str(report.seed),
            report.solver,
            report.status,
            str(report.iterations),
            _fmt(report.final_phi),
            _fmt(report.residual_inf),
            _fmt(report.lambda_min_estimate),
        )
    return table


def aggregate_table(summary: Aggregate) -> Table:
    table = Table(title=f"Aggregate over {summary.seeds} seed(s)")
    for column in ("solver", "runs", "errors", "2nd order", "best", "global"):
        table.add_column(column)
    for metric in ("iterations", "hvp_f", "mvp"):
        table.add_column(f"median {metric}")
    for entry in summary.solvers:
        medians = [entry.medians.get(m) for m in ("iterations", "hvp_f", "mvp")]
        table.add_row(
            entry.solver,
            str(entry.runs),
            str(entry.errors),
            str(entry.second_order),
            str(entry.count_best_objective),
            "-" if entry.count_global_optimal is None else str(entry.count_global_optimal),
            *("-" if m is None else format_value(m) for m in medians),
        )
    return table


def run_and_write(
    config: SweepConfig, out: Path, stem: str, trajectory: bool
) -> List[RunReport]:
    """
    Run a sweep and write ``<stem>.jsonl``, ``<stem>-aggregate.{csv,json}`` and,
    when asked, ``<stem>-<solver>-seed<seed>.csv`` trajectories into ``out``.
    """
    ensure_output_directory(out)
    reports = run_sweep(config)
    write_reports_jsonl(reports, out / f"{stem}.jsonl")
    if trajectory:
        for report in reports:
            if report.trajectory is not None:
                path = out / f"{stem}-{report.solver}-seed{report.seed}.csv"
                write_trajectory_csv(report, path)
    summary = aggregate(reports)
    write_aggregate(summary, out, f"{stem}-aggregate")

    console.print(report_table(reports))
    console.print(aggregate_table(summary))
    console.print(f"Results written to [bold]{out}[/bold]")
    return reports
