import sys

import rich_click as click
from rich.table import Table

from saddlefree.core.checks import run_checks
from saddlefree.utils.console import console


@click.command(name="check")
@click.option("--seed", default=0, type=int, show_default=True, help="Seed of the sampled points.")
def check(seed: int) -> None:
    """
    Run the invariant suite on the shipped problems.

    Covers the envelope bounds and derivatives, the generalized Hessian, the
    proximal operators, the subproblem solvers and the toy saddle escapes.
    Exits with status 1 if any check fails.
    """
    try:
        results = run_checks(seed)
    except Exception as e:
        click.echo(f"Error: {e}", err=True)
        sys.exit(1)

    table = Table(title="Invariant checks")
    for column in ("check", "target", "result", "worst", "detail"):
        table.add_column(column)
    for result in results:
        table.add_row(
            result.name,
            result.target,
            "[green]pass[/green]" if result.passed else "[red]FAIL[/red]",
            "-" if result.worst is None else f"{result.worst:.3e}",
            result.detail,
        )
    console.print(table)

    failed = [r for r in results if not r.passed]
    console.print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        sys.exit(1)
