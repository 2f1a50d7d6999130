import hashlib
import json
import time
from typing import Any, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field

from saddlefree.core.fbe import FbeState
from saddlefree.core.oracles import (
    CallCounters,
    CountingNonsmoothOracle,
    CountingSmoothOracle,
    Vector,
    wrap_counting,
)
from saddlefree.core.problems import ProblemDescriptor, ProblemInstance
from saddlefree.core.subsolvers import EigEstimate

RunStatus = Literal[
    "second_order_stationary", "first_order_stationary", "budget_exhausted", "error"
]


def point_hash(x: Vector) -> str:
    """SHA-256 of the little-endian float64 bytes of ``x``."""
    data = np.ascontiguousarray(np.asarray(x, dtype="<f8")).tobytes()
    return hashlib.sha256(data).hexdigest()


class Certificate(BaseModel):
    """Second-order certificate of the final iterate."""

    residual_inf: float
    lambda_min_estimate: float
    eig_residual: float

    @property
    def certified_lambda(self) -> float:
        return self.lambda_min_estimate - self.eig_residual


class TrajectoryPoint(BaseModel):
    """
    One outer iteration: the iterate xᵏ and the step taken from it.

    ``fbe_next`` is the envelope at the next iterate evaluated with the same γ,
    which is what the acceptance tests compare against.
    """

    iteration: int
    x: List[float]
    fbe: float
    residual_inf: float
    residual_sq: float
    gamma: float
    accepted: bool = True
    radius: Optional[float] = None
    tau: Optional[float] = None
    sigma: Optional[float] = None
    curvature: Optional[float] = None
    lambda_min: Optional[float] = None
    fbe_next: Optional[float] = None


class RunReport(BaseModel):
    """Per-run record written one JSON object per line."""

    solver: str
    problem: ProblemDescriptor
    seed: int
    status: RunStatus
    initial_point_hash: Optional[str] = None
    final_point_hash: Optional[str] = None
    final_point: Optional[List[float]] = None
    final_fbe: Optional[float] = None
    final_phi: Optional[float] = None
    phi_star: Optional[float] = None
    residual_inf: Optional[float] = None
    lambda_min_estimate: Optional[float] = None
    certificate: Optional[Certificate] = None
    gamma: Optional[float] = None
    iterations: int = 0
    counters: CallCounters = Field(default_factory=CallCounters)
    wall_time_ms: float = 0.0
    trajectory: Optional[List[TrajectoryPoint]] = None
    error: Optional[str] = None

    def canonical(self) -> dict[str, Any]:
        """The report without hardware-dependent fields."""
        return self.model_dump(mode="json", exclude={"wall_time_ms"})


def canonical_json(reports: List[RunReport]) -> str:
    """Byte-stable JSON of a list of reports, used for determinism comparisons."""
    payload = [report.canonical() for report in reports]
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


class RunContext:
    """
    Bookkeeping shared by every solver run.

    Owns the run's counters and counting oracles, the wall clock and the
    optional trajectory, and turns the final state into a ``RunReport``.
    """

    def __init__(
        self,
        solver: str,
        problem: ProblemInstance,
        seed: int,
        x0: Vector,
        store_trajectory: bool = False,
        counters: Optional[CallCounters] = None,
    ) -> None:
        self.solver = solver
        self.problem = problem
        self.seed = seed
        self.x0 = np.asarray(x0, dtype=float)
        if self.x0.shape != (problem.dim,):
            raise ValueError(
                f"Initial point has shape {self.x0.shape}, expected ({problem.dim},)."
            )
        # may be a counter set owned by the caller
        self.counters = counters if counters is not None else CallCounters()
        self.smooth: CountingSmoothOracle = wrap_counting(problem.smooth, self.counters)
        self.nonsmooth: CountingNonsmoothOracle = wrap_counting(
            problem.nonsmooth, self.counters
        )
        self.trajectory: Optional[List[TrajectoryPoint]] = (
            [] if store_trajectory else None
        )
        self._started = time.perf_counter()

    def record(self, point: TrajectoryPoint) -> None:
        if self.trajectory is not None:
            self.trajectory.append(point)

    def finish(
        self,
        status: RunStatus,
        state: FbeState,
        iterations: int,
        eig: Optional[EigEstimate] = None,
    ) -> RunReport:
        """
        Build the report for a run that ended at ``state``.

        The reported point is the backward point x̄, which is always feasible.
        φ(x̄) goes through the uncounted oracles. ``state`` also closes the
        trajectory.
        """
        xbar = state.xbar
        self.record(
            TrajectoryPoint(
                iteration=iterations,
                x=state.x.tolist(),
                fbe=state.fbe,
                residual_inf=state.residual_inf,
                residual_sq=state.residual_sq,
                gamma=state.gamma,
                lambda_min=eig.lambda_min if eig is not None else None,
            )
        )
        certificate = None
        if eig is not None:
            certificate = Certificate(
                residual_inf=state.residual_inf,
                lambda_min_estimate=eig.lambda_min,
                eig_residual=eig.residual,
            )
        reference = self.problem.reference
        return RunReport(
            solver=self.solver,
            problem=self.problem.descriptor,
            seed=self.seed,
            status=status,
            initial_point_hash=point_hash(self.x0),
            final_point_hash=point_hash(xbar),
            final_point=xbar.tolist(),
            final_fbe=state.fbe,
            final_phi=self.problem.phi(xbar),
            phi_star=reference.phi_star if reference is not None else None,
            residual_inf=state.residual_inf,
            lambda_min_estimate=eig.lambda_min if eig is not None else None,
            certificate=certificate,
            gamma=state.gamma,
            iterations=iterations,
            counters=self.counters.model_copy(),
            wall_time_ms=self.elapsed_ms(),
            trajectory=self.trajectory,
        )

    def elapsed_ms(self) -> float:
        return (time.perf_counter() - self._started) * 1000.0


def error_report(
    solver: str,
    problem: ProblemInstance,
    seed: int,
    message: str,
    counters: Optional[CallCounters] = None,
    wall_time_ms: float = 0.0,
    initial_point_hash: Optional[str] = None,
) -> RunReport:
    reference = problem.reference
    return RunReport(
        solver=solver,
        problem=problem.descriptor,
        seed=seed,
        status="error",
        initial_point_hash=initial_point_hash,
        phi_star=reference.phi_star if reference is not None else None,
        counters=counters or CallCounters(),
        wall_time_ms=wall_time_ms,
        error=message,
    )
