import rich_click as click

from saddlefree import __version__
from saddlefree.commands.aggregate import aggregate_reports
from saddlefree.commands.check import check
from saddlefree.commands.phase_retrieval import phase_retrieval
from saddlefree.commands.sparse_pca import sparse_pca
from saddlefree.commands.toy import toy
from saddlefree.utils.console import set_verbosity


@click.group(
    context_settings=dict(
        help_option_names=["-h", "--help"],
        auto_envvar_prefix="SADDLEFREE",
    )
)
@click.version_option(
    __version__,
    "--version",
    "-v",
    message="%(prog)s version %(version)s",
)
@click.option("--verbose", is_flag=True, help="Log every solver iteration.")
def cli(verbose: bool) -> None:
    """saddle-free: second-order proximal-gradient methods that escape saddle points."""
    set_verbosity(verbose)


cli.add_command(toy)
cli.add_command(sparse_pca)
cli.add_command(phase_retrieval)
cli.add_command(check)
cli.add_command(aggregate_reports)

if __name__ == "__main__":
    cli()
