import csv
import json
from pathlib import Path

import pytest
from click.testing import CliRunner
from pytest_mock import MockerFixture

from saddlefree import __version__
from saddlefree.cli import cli
from saddlefree.core.checks import CheckResult
from saddlefree.core.harness import read_reports_jsonl

# --- Tests for 'toy' ---


@pytest.mark.cli
def test_cli_toy_pgm_stops_at_the_saddle(tmp_path: Path) -> None:
    """PGM started next to the maximizer ends on the saddle (1, 0)."""
    runner = CliRunner()
    result = runner.invoke(cli, ["toy", "--solver", "pgm", "--out", str(tmp_path)])

    assert result.exit_code == 0, result.output
    (report,) = read_reports_jsonl(tmp_path / "toy-quadratic_box-pgm.jsonl")
    assert report.final_point == [1.0, 0.0]
    assert report.status == "first_order_stationary"
    assert (tmp_path / "toy-quadratic_box-pgm-trajectory.csv").exists()


@pytest.mark.cli
def test_cli_toy_ntra_reaches_a_minimizer(tmp_path: Path) -> None:
    runner = CliRunner()
    result = runner.invoke(cli, ["toy", "--solver", "ntra", "-o", str(tmp_path)])

    assert result.exit_code == 0, result.output
    (report,) = read_reports_jsonl(tmp_path / "toy-quadratic_box-ntra.jsonl")
    assert report.status == "second_order_stationary"
    assert report.final_point is not None
    assert report.final_point == pytest.approx([1.0, 1.0], abs=1e-6)
    assert "second_order_stationary" in result.output


@pytest.mark.cli
def test_cli_toy_trajectory_columns(tmp_path: Path) -> None:
    runner = CliRunner()
    result = runner.invoke(
        cli,
        [
            "toy",
            "--variant",
            "l1_box",
            "--solver",
            "pgcl",
            "--x0",
            "-0.4,0",
            "--out",
            str(tmp_path),
        ],
    )

    assert result.exit_code == 0, result.output
    path = tmp_path / "toy-l1_box-pgcl-trajectory.csv"
    with path.open(encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    assert list(rows[0]) == ["iter", "x1", "x2", "fbe", "res_inf"]
    assert rows[0]["x1"] == "-0.40000000000000002"
    assert [int(row["iter"]) for row in rows] == list(range(len(rows)))


@pytest.mark.cli
def test_cli_toy_rejects_a_point_of_the_wrong_size(tmp_path: Path) -> None:
    runner = CliRunner()
    result = runner.invoke(cli, ["toy", "--x0", "0.1,0,0", "--out", str(tmp_path)])

    assert result.exit_code == 1
    assert "Error:" in result.output


@pytest.mark.cli
def test_cli_unknown_flag_is_a_usage_error() -> None:
    runner = CliRunner()
    result = runner.invoke(cli, ["toy", "--no-such-flag"])
    assert result.exit_code == 2


# --- Tests for the sweeps ---


@pytest.mark.cli
@pytest.mark.parametrize("seeds", ["3-1", "a,b", "", "-2"])
def test_cli_bad_seed_lists(seeds: str, tmp_path: Path) -> None:
    runner = CliRunner()
    result = runner.invoke(
        cli, ["sparse-pca", "--n", "4", "--seeds", seeds, "--out", str(tmp_path)]
    )
    assert result.exit_code == 2


@pytest.mark.cli
def test_cli_unknown_solver(tmp_path: Path) -> None:
    runner = CliRunner()
    result = runner.invoke(
        cli, ["sparse-pca", "--solvers", "pgm,newton", "--out", str(tmp_path)]
    )
    assert result.exit_code == 2
    assert "newton" in result.output


@pytest.mark.cli
def test_cli_sparse_pca_sweep_writes_results(tmp_path: Path) -> None:
    # Setup
    runner = CliRunner()

    # Action
    result = runner.invoke(
        cli,
        [
            "sparse-pca",
            "--n",
            "6",
            "--seeds",
            "1-2",
            "--solvers",
            "pgm,ntra",
            "--max-iter",
            "200",
            "--trajectory",
            "--out",
            str(tmp_path),
        ],
    )

    # Assert
    assert result.exit_code == 0, result.output
    reports = read_reports_jsonl(tmp_path / "sparse-pca-n6.jsonl")
    assert [(r.seed, r.solver) for r in reports] == [
        (1, "pgm"),
        (1, "ntra"),
        (2, "pgm"),
        (2, "ntra"),
    ]
    assert (tmp_path / "sparse-pca-n6-aggregate.csv").exists()
    assert (tmp_path / "sparse-pca-n6-ntra-seed2.csv").exists()
    payload = json.loads(
        (tmp_path / "sparse-pca-n6-aggregate.json").read_text(encoding="utf-8")
    )
    assert [entry["solver"] for entry in payload["solvers"]] == ["pgm", "ntra"]


@pytest.mark.cli
def test_cli_workers_from_environment(tmp_path: Path) -> None:
    runner = CliRunner(env={"SADDLEFREE_WORKERS": "2"})
    result = runner.invoke(
        cli,
        [
            "phase-retrieval",
            "--n",
            "3",
            "--m",
            "20",
            "--seeds",
            "4",
            "--solvers",
            "pgm,pgcl",
            "--out",
            str(tmp_path),
        ],
    )

    assert result.exit_code == 0, result.output
    assert len(read_reports_jsonl(tmp_path / "phase-retrieval-n3-m20.jsonl")) == 2


# --- Tests for 'aggregate' ---


@pytest.mark.cli
def test_cli_aggregate_recomputes_the_summary(tmp_path: Path) -> None:
    runner = CliRunner()
    sweep = runner.invoke(
        cli,
        [
            "sparse-pca",
            "--n",
            "5",
            "--seeds",
            "1",
            "--solvers",
            "pgm",
            "--out",
            str(tmp_path),
        ],
    )
    assert sweep.exit_code == 0, sweep.output
    original = (tmp_path / "sparse-pca-n5-aggregate.csv").read_text(encoding="utf-8")
    out_dir = tmp_path / "again"

    result = runner.invoke(
        cli,
        ["aggregate", "--in", str(tmp_path / "sparse-pca-n5.jsonl"), "--out", str(out_dir)],
    )

    assert result.exit_code == 0, result.output
    recomputed = (out_dir / "sparse-pca-n5-aggregate.csv").read_text(encoding="utf-8")
    assert recomputed == original


@pytest.mark.cli
def test_cli_aggregate_of_an_empty_file_fails(tmp_path: Path) -> None:
    path = tmp_path / "empty.jsonl"
    path.write_text("", encoding="utf-8")

    runner = CliRunner()
    result = runner.invoke(cli, ["aggregate", "--in", str(path)])

    assert result.exit_code == 1
    assert "Error:" in result.output


# --- Tests for 'check' ---


@pytest.mark.cli
def test_cli_check_passes(mocker: MockerFixture) -> None:
    mocker.patch(
        "saddlefree.commands.check.run_checks",
        return_value=[CheckResult(name="prox", target="box", passed=True, worst=0.0)],
    )
    runner = CliRunner()
    result = runner.invoke(cli, ["check"])

    assert result.exit_code == 0, result.output
    assert "1/1 checks passed" in result.output


@pytest.mark.cli
def test_cli_check_fails_on_a_broken_invariant(mocker: MockerFixture) -> None:
    mocker.patch(
        "saddlefree.commands.check.run_checks",
        return_value=[
            CheckResult(name="prox", target="box", passed=True),
            CheckResult(name="symmetry", target="toy", passed=False, detail="asymmetric"),
        ],
    )
    runner = CliRunner()
    result = runner.invoke(cli, ["check", "--seed", "3"])

    assert result.exit_code == 1
    assert "1/2 checks passed" in result.output


@pytest.mark.cli
def test_cli_version() -> None:
    runner = CliRunner()
    result = runner.invoke(cli, ["--version"])
    assert result.exit_code == 0
    assert __version__ in result.output
