import sys
from pathlib import Path
from typing import Optional

import rich_click as click

from saddlefree.commands.common import aggregate_table
from saddlefree.core.harness import aggregate, read_reports_jsonl, write_aggregate
from saddlefree.utils.console import console
from saddlefree.utils.validators import ensure_output_directory


@click.command(name="aggregate")
@click.option(
    "--in",
    "in_path",
    required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="JSON-lines file of run reports.",
)
@click.option(
    "--out",
    "-o",
    default=None,
    type=click.Path(file_okay=False, path_type=Path),
    help="Output directory (default: next to the input file).",
)
def aggregate_reports(in_path: Path, out: Optional[Path]) -> None:
    """
    Recompute medians and hit counts from a reports file.

    Writes ``<input stem>-aggregate.csv`` (columns solver, metric, value) and
    the matching JSON file. All reports must share one problem configuration.
    """
    try:
        reports = read_reports_jsonl(in_path)
        summary = aggregate(reports)
        out_dir = ensure_output_directory(out if out is not None else in_path.parent)
        csv_path = write_aggregate(summary, out_dir, f"{in_path.stem}-aggregate")
        console.print(aggregate_table(summary))
        console.print(f"Aggregate written to [bold]{csv_path}[/bold]")
    except Exception as e:
        click.echo(f"Error: {e}", err=True)
        sys.exit(1)
