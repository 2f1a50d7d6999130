import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Sequence, Union

from pydantic import BaseModel, Field, PositiveInt, field_validator

from saddlefree.core.baselines import BaselineConfig, panoc_solve, pgm_solve
from saddlefree.core.errors import InhomogeneousReportsError
from saddlefree.core.ntra import NtraConfig, ntra_solve
from saddlefree.core.oracles import CallCounters, Vector
from saddlefree.core.pgcl import PgclConfig, pgcl_solve
from saddlefree.core.problems import (
    ProblemDescriptor,
    ProblemInstance,
    build_problem,
    sample_unit_ball,
)
from saddlefree.core.report import RunReport, error_report, point_hash
from saddlefree.utils.console import get_logger

logger = get_logger(__name__)

SolverName = Literal["pgm", "panoc", "ntra", "pgcl"]
SOLVER_NAMES: tuple[SolverName, ...] = ("pgm", "panoc", "ntra", "pgcl")

OBJECTIVE_TOL = 1e-3
COUNTER_FIELDS = tuple(CallCounters.model_fields)
MEDIAN_METRICS = ("iterations",) + COUNTER_FIELDS + ("final_phi", "residual_inf")


class SolverSettings(BaseModel):
    """Per-method configurations used by every run of a sweep."""

    ntra: NtraConfig = Field(default_factory=NtraConfig)
    pgcl: PgclConfig = Field(default_factory=PgclConfig)
    baseline: BaselineConfig = Field(default_factory=BaselineConfig)


SolverFn = Callable[
    [ProblemInstance, SolverSettings, int, Vector, CallCounters], RunReport
]

SOLVERS: Dict[str, SolverFn] = {
    "pgm": lambda p, s, seed, x0, c: pgm_solve(p, s.baseline, seed, x0, c),
    "panoc": lambda p, s, seed, x0, c: panoc_solve(p, s.baseline, seed, x0, c),
    "ntra": lambda p, s, seed, x0, c: ntra_solve(p, s.ntra, seed, x0, c),
    "pgcl": lambda p, s, seed, x0, c: pgcl_solve(p, s.pgcl, seed, x0, c),
}


class SweepConfig(BaseModel):
    """
    A seeded experiment: one problem family, several solvers, several seeds.

    :param problem: Problem descriptor; its seed is replaced per run.
    :param solvers: Solvers to run on every instance, in output order.
    :param seeds: Seeds; each gives one instance and one shared initial point.
    :param workers: Number of runs executed concurrently.
    :param settings: Method configurations.
    """

    problem: ProblemDescriptor
    solvers: List[SolverName] = Field(default_factory=lambda: list(SOLVER_NAMES))
    seeds: List[int] = Field(min_length=1)
    workers: PositiveInt = 1
    settings: SolverSettings = Field(default_factory=SolverSettings)

    @field_validator("solvers")
    def validate_solvers(cls: "SweepConfig", value: List[SolverName]) -> List[SolverName]:
        if not value:
            raise ValueError("At least one solver is required.")
        if len(set(value)) != len(value):
            raise ValueError("Solvers must not repeat.")
        return value


def run_solver(
    name: str,
    problem: ProblemInstance,
    settings: SolverSettings,
    seed: int,
    x0: Vector,
) -> RunReport:
    """
    Run one solver, turning any exception into an ``error`` report.

    The counter set is created here and handed to the solver; an error report
    carries the oracle calls made before the failure.

    :raises KeyError: If ``name`` is not a registered solver.
    """
    solver = SOLVERS[name]
    counters = CallCounters()
    started = time.perf_counter()
    try:
        return solver(problem, settings, seed, x0, counters)
    # any solver failure becomes a report; the sweep keeps going
    except Exception as e:
        logger.warning("%s on seed %d failed: %s", name, seed, e)
        return error_report(
            name,
            problem,
            seed,
            str(e) or type(e).__name__,
            counters=counters.model_copy(),
            wall_time_ms=(time.perf_counter() - started) * 1000.0,
            initial_point_hash=point_hash(x0),
        )


def run_sweep(config: SweepConfig) -> List[RunReport]:
    """
    Run every solver on every seed of ``config``.

    Instances and initial points are generated up front, one per seed, so all
    solvers of a seed see the same problem and the same x⁰. Reports come back
    ordered by seed, then by the order of ``config.solvers``.
    """
    tasks = []
    for seed in sorted(set(config.seeds)):
        problem = build_problem(config.problem.with_seed(seed))
        x0 = sample_unit_ball(problem.dim, seed)
        for name in config.solvers:
            tasks.append((name, problem, seed, x0))

    logger.info("sweep: %d runs on %d workers", len(tasks), config.workers)
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        futures = [
            pool.submit(run_solver, name, problem, config.settings, seed, x0)
            for name, problem, seed, x0 in tasks
        ]
        return [future.result() for future in futures]


def lower_median(values: Sequence[float]) -> float:
    """Median taking the lower middle element for even counts."""
    if not values:
        raise ValueError("Median of an empty sequence.")
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


class SolverAggregate(BaseModel):
    solver: str
    runs: int
    errors: int
    second_order: int
    count_best_objective: int
    count_global_optimal: Optional[int] = None
    medians: Dict[str, float] = Field(default_factory=dict)


class Aggregate(BaseModel):
    """Medians and hit counts per solver for one problem configuration."""

    problem: Dict[str, Union[str, int, float, None]]
    seeds: int
    solvers: List[SolverAggregate]


def _metric(report: RunReport, metric: str) -> Optional[float]:
    if metric in COUNTER_FIELDS:
        return float(getattr(report.counters, metric))
    value = getattr(report, metric)
    return None if value is None else float(value)


def aggregate(reports: Sequence[RunReport]) -> Aggregate:
    """
    Summarise a sweep.

    Medians use completed runs only. A run attains the best objective when its
    φ is within 1e-3 of the smallest φ reached on its seed by any solver, and
    is globally optimal when within 1e-3 of the known φ⋆.

    :raises ValueError: If ``reports`` is empty.
    :raises InhomogeneousReportsError: If the reports mix problem configurations.
    """
    if not reports:
        raise ValueError("Cannot aggregate an empty list of reports.")
    key = reports[0].problem.config_key()
    if any(report.problem.config_key() != key for report in reports):
        raise InhomogeneousReportsError()

    completed = [r for r in reports if r.status != "error" and r.final_phi is not None]
    best_by_seed: Dict[int, float] = {}
    for report in completed:
        assert report.final_phi is not None
        current = best_by_seed.get(report.seed, report.final_phi)
        best_by_seed[report.seed] = min(current, report.final_phi)

    solver_order: List[str] = []
    for report in reports:
        if report.solver not in solver_order:
            solver_order.append(report.solver)

    summaries = []
    for name in solver_order:
        mine = [r for r in reports if r.solver == name]
        done = [r for r in completed if r.solver == name]
        medians = {}
        for metric in MEDIAN_METRICS:
            values = [v for v in (_metric(r, metric) for r in done) if v is not None]
            if values:
                medians[metric] = lower_median(values)
        best = sum(
            1
            for r in done
            if r.final_phi is not None
            and r.final_phi <= best_by_seed[r.seed] + OBJECTIVE_TOL
        )
        global_count = None
        if any(r.phi_star is not None for r in done):
            global_count = sum(
                1
                for r in done
                if r.phi_star is not None
                and r.final_phi is not None
                and abs(r.final_phi - r.phi_star) <= OBJECTIVE_TOL
            )
        summaries.append(
            SolverAggregate(
                solver=name,
                runs=len(done),
                errors=len(mine) - len(done),
                second_order=sum(
                    1 for r in done if r.status == "second_order_stationary"
                ),
                count_best_objective=best,
                count_global_optimal=global_count,
                medians=medians,
            )
        )
    return Aggregate(
        problem=key,
        seeds=len({r.seed for r in reports}),
        solvers=summaries,
    )


def format_value(value: float) -> str:
    """Integers as integers, other floats with 17 significant digits."""
    if float(value).is_integer() and abs(value) < 2**53:
        return str(int(value))
    return f"{value:.17g}"


def aggregate_rows(summary: Aggregate) -> List[Dict[str, str]]:
    rows = []
    for entry in summary.solvers:
        metrics: Dict[str, Optional[float]] = {
            "runs": entry.runs,
            "errors": entry.errors,
            "second_order": entry.second_order,
            "count_best_objective": entry.count_best_objective,
            "count_global_optimal": entry.count_global_optimal,
        }
        metrics.update({f"median_{k}": v for k, v in entry.medians.items()})
        for metric, value in metrics.items():
            if value is None:
                continue
            rows.append(
                {"solver": entry.solver, "metric": metric, "value": format_value(value)}
            )
    return rows


def write_aggregate(summary: Aggregate, out_dir: Path, stem: str = "aggregate") -> Path:
    """
    Write ``<stem>.csv`` (columns solver, metric, value) and ``<stem>.json``.

    :return: Path of the CSV file.
    """
    csv_path = out_dir / f"{stem}.csv"
    with csv_path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(
            handle, fieldnames=["solver", "metric", "value"], lineterminator="\n"
        )
        writer.writeheader()
        writer.writerows(aggregate_rows(summary))
    json_path = out_dir / f"{stem}.json"
    json_path.write_text(
        json.dumps(summary.model_dump(mode="json"), sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    return csv_path


def write_reports_jsonl(reports: Sequence[RunReport], path: Path) -> Path:
    """One report per line, UTF-8, LF line endings."""
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for report in reports:
            handle.write(report.model_dump_json() + "\n")
    return path


def read_reports_jsonl(path: Path) -> List[RunReport]:
    lines = path.read_text(encoding="utf-8").splitlines()
    return [RunReport.model_validate_json(line) for line in lines if line.strip()]


def write_trajectory_csv(report: RunReport, path: Path) -> Path:
    """
    Columns iter, x1..xn, fbe, res_inf, one row per recorded iteration.

    :raises ValueError: If the report carries no trajectory.
    """
    if report.trajectory is None:
        raise ValueError("Report has no trajectory; rerun with trajectories enabled.")
    dim = len(report.final_point) if report.final_point is not None else 0
    if report.trajectory:
        dim = len(report.trajectory[0].x)
    fieldnames = ["iter"] + [f"x{i + 1}" for i in range(dim)] + ["fbe", "res_inf"]
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for point in report.trajectory:
            row = {"iter": str(point.iteration)}
            row.update({f"x{i + 1}": f"{v:.17g}" for i, v in enumerate(point.x)})
            row["fbe"] = f"{point.fbe:.17g}"
            row["res_inf"] = f"{point.residual_inf:.17g}"
            writer.writerow(row)
    return path
