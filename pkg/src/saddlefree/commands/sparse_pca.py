import sys
from pathlib import Path
from typing import List, Optional

import rich_click as click

from saddlefree.commands.common import run_and_write, solver_settings, sweep_options
from saddlefree.core.harness import SweepConfig
from saddlefree.core.problems import ProblemDescriptor


@click.command(name="sparse-pca")
@click.option("--n", default=200, type=click.IntRange(min=2), show_default=True, help="Dimension.")
@click.option(
    "--kappa", default=1e-2, type=float, show_default=True, help="Weight of the l1 term."
)
@click.option(
    "--density",
    default=0.1,
    type=float,
    show_default=True,
    help="Fraction of nonzeros in the 20n x n data matrix.",
)
@sweep_options
def sparse_pca(
    n: int,
    kappa: float,
    density: float,
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
    Sparse PCA sweep: -1/2 x'Sx + kappa |x|_1 on the unit ball.

    One random instance and one shared initial point per seed; every solver
    runs from that point. Writes ``sparse-pca-n<n>.jsonl`` and the aggregate
    CSV/JSON into the output directory.
    """
    try:
        config = SweepConfig(
            problem=ProblemDescriptor(
                kind="sparse_pca", n=n, kappa=kappa, density=density
            ),
            solvers=solvers,  # type: ignore[arg-type]
            seeds=seeds,
            workers=workers,
            settings=solver_settings(
                sbar=sbar, direction=direction, max_iter=max_iter, trajectory=trajectory
            ),
        )
        run_and_write(config, out, f"sparse-pca-n{n}", trajectory)
    except Exception as e:
        click.echo(f"Error: {e}", err=True)
        sys.exit(1)
