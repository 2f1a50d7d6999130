import sys
from pathlib import Path
from typing import List, Optional

import rich_click as click

from saddlefree.commands.common import run_and_write, solver_settings, sweep_options
from saddlefree.core.harness import SweepConfig
from saddlefree.core.problems import ProblemDescriptor


@click.command(name="phase-retrieval")
@click.option("--n", default=100, type=click.IntRange(min=2), show_default=True, help="Dimension.")
@click.option(
    "--m",
    default=3000,
    type=click.IntRange(min=1),
    show_default=True,
    help="Number of quadratic measurements.",
)
@sweep_options
def phase_retrieval(
    n: int,
    m: int,
    seeds: List[int],
    solvers: List[str],
    workers: int,
    trajectory: bool,
    sbar: float,
    direction: str,
    max_iter: Optional[int],
    out: Path,
) -> None:
    """
    Noiseless real phase retrieval sweep on the unit ball.

    The global value is 0, so the aggregate also counts globally optimal runs.
    Writes ``phase-retrieval-n<n>-m<m>.jsonl`` and the aggregate CSV/JSON.
    """
    try:
        config = SweepConfig(
            problem=ProblemDescriptor(kind="phase_retrieval", n=n, m=m),
            solvers=solvers,  # type: ignore[arg-type]
            seeds=seeds,
            workers=workers,
            settings=solver_settings(
                sbar=sbar, direction=direction, max_iter=max_iter, trajectory=trajectory
            ),
        )
        run_and_write(config, out, f"phase-retrieval-n{n}-m{m}", trajectory)
    except Exception as e:
        click.echo(f"Error: {e}", err=True)
        sys.exit(1)
