import math
from typing import Optional

from pydantic import BaseModel, PositiveFloat, PositiveInt, field_validator

from saddlefree.core.errors import NonFiniteObjectiveError
from saddlefree.core.fbe import (
    ADAPT_ALPHA,
    FbeState,
    adapt_gamma,
    bounded_trial,
    fbe_eval,
    initial_stepsize,
    roundoff_slack,
    sufficient_decrease_sigma,
)
from saddlefree.core.oracles import CallCounters, Vector
from saddlefree.core.problems import ProblemInstance, sample_unit_ball
from saddlefree.core.report import RunContext, RunReport, RunStatus, TrajectoryPoint
from saddlefree.core.subsolvers import LbfgsBuffer, lbfgs_direction
from saddlefree.utils.console import get_logger
from saddlefree.utils.validators import ensure_unit_interval

logger = get_logger(__name__)


class BaselineConfig(BaseModel):
    """
    Configuration shared by the first-order baselines.

    :param gamma0: Initial stepsize; ``None`` picks 0.9/L̂.
    :param tol_r: Stop when ‖r‖∞ drops to this value.
    :param max_iter: Iteration budget.
    :param lbfgs_capacity: PANOC's L-BFGS memory.
    :param sigma_factor: PANOC's σ factor, as for the curvilinear method.
    :param max_backtracks: PANOC's linesearch budget.
    """

    gamma0: Optional[PositiveFloat] = None
    tol_r: PositiveFloat = 1e-10
    max_iter: PositiveInt = 10000
    lbfgs_capacity: PositiveInt = 5
    sigma_factor: float = 1.0 / math.sqrt(2.0)
    max_backtracks: PositiveInt = 60
    gamma_alpha: float = ADAPT_ALPHA
    store_trajectory: bool = False

    _unit_interval = field_validator("sigma_factor", "gamma_alpha")(
        ensure_unit_interval
    )


def _finish(
    run: RunContext, status: RunStatus, state: FbeState, iteration: int
) -> RunReport:
    if status == "budget_exhausted":
        logger.warning("%s: iteration budget exhausted", run.solver)
    else:
        logger.info(
            "%s: first-order stationary after %d iterations, |r|=%.3e",
            run.solver,
            iteration,
            state.residual_inf,
        )
    return run.finish(status, state, iteration)


def pgm_solve(
    problem: ProblemInstance,
    config: Optional[BaselineConfig] = None,
    seed: int = 0,
    x0: Optional[Vector] = None,
    counters: Optional[CallCounters] = None,
) -> RunReport:
    """
    Proximal gradient method x⁺ = prox_{γg}(x − γ∇f(x)) with the adaptive stepsize.

    Stops on the residual only; the report carries no curvature certificate.
    """
    config = config or BaselineConfig()
    if x0 is None:
        x0 = sample_unit_ball(problem.dim, seed)
    run = RunContext(
        "pgm", problem, seed, x0, config.store_trajectory, counters
    )
    smooth, nonsmooth = run.smooth, run.nonsmooth

    gamma, _ = initial_stepsize(smooth, run.x0, seed, config.gamma0)
    x = run.x0
    iteration = 0
    status: RunStatus
    while True:
        new_gamma, state = adapt_gamma(x, gamma, smooth, nonsmooth, config.gamma_alpha)
        if new_gamma < gamma:
            logger.info("pgm: stepsize reduced %.3e -> %.3e", gamma, new_gamma)
        gamma = new_gamma
        logger.debug(
            "pgm it=%d fbe=%.12e |r|=%.3e", iteration, state.fbe, state.residual_inf
        )
        if state.residual_inf <= config.tol_r:
            status = "first_order_stationary"
            break
        if iteration >= config.max_iter:
            status = "budget_exhausted"
            break
        run.record(
            TrajectoryPoint(
                iteration=iteration,
                x=state.x.tolist(),
                fbe=state.fbe,
                residual_inf=state.residual_inf,
                residual_sq=state.residual_sq,
                gamma=gamma,
            )
        )
        x = state.xbar
        iteration += 1
    return _finish(run, status, state, iteration)


def panoc_solve(
    problem: ProblemInstance,
    config: Optional[BaselineConfig] = None,
    seed: int = 0,
    x0: Optional[Vector] = None,
    counters: Optional[CallCounters] = None,
) -> RunReport:
    """
    PANOC: backtrack between the forward-backward point and an L-BFGS step.

    x⁺ = (1 − τ)x̄ + τ(x + d) with d the L-BFGS direction on residual pairs
    (Δx, Δr), τ = 1, ½, ¼, … until φ_γ(x⁺) ≤ φ_γ(x) − σ‖r‖² and γ passes the
    upper-bound test at x⁺. The memory is cleared whenever γ shrinks.
    """
    config = config or BaselineConfig()
    if x0 is None:
        x0 = sample_unit_ball(problem.dim, seed)
    run = RunContext(
        "panoc", problem, seed, x0, config.store_trajectory, counters
    )
    smooth, nonsmooth = run.smooth, run.nonsmooth
    buffer = LbfgsBuffer(config.lbfgs_capacity)
    previous: Optional[FbeState] = None

    gamma, lipschitz = initial_stepsize(smooth, run.x0, seed, config.gamma0)
    x = run.x0
    trial: Optional[FbeState] = None
    iteration = 0
    status: RunStatus
    while True:
        new_gamma, state = adapt_gamma(
            x, gamma, smooth, nonsmooth, config.gamma_alpha, trial
        )
        if new_gamma < gamma:
            logger.info("panoc: stepsize reduced %.3e -> %.3e", gamma, new_gamma)
            buffer.clear()
            previous = None
        gamma = new_gamma
        logger.debug(
            "panoc it=%d fbe=%.12e |r|=%.3e", iteration, state.fbe, state.residual_inf
        )
        if state.residual_inf <= config.tol_r:
            status = "first_order_stationary"
            break
        if iteration >= config.max_iter:
            status = "budget_exhausted"
            break

        # --- Quasi-Newton direction on the residual ---
        if previous is not None:
            buffer.push(state.x - previous.x, state.r - previous.r)
        previous = state
        d = lbfgs_direction(buffer, state.r)
        sigma = sufficient_decrease_sigma(
            gamma, lipschitz, config.sigma_factor, config.gamma_alpha
        )
        target = state.fbe - sigma * state.residual_sq + roundoff_slack(state.fbe)

        # --- Backtrack from x + d toward x̄ ---
        tau = 1.0
        trial = None
        for _ in range(config.max_backtracks):
            candidate = (1.0 - tau) * state.xbar + tau * (state.x + d)
            try:
                attempt = fbe_eval(candidate, gamma, smooth, nonsmooth)
            except NonFiniteObjectiveError:
                attempt = None
            if attempt is not None and attempt.fbe <= target:
                # γ must also pass the upper-bound test at the candidate
                trial = bounded_trial(attempt, smooth, config.gamma_alpha)
                if trial is not None:
                    break
            tau /= 2.0
        # τ = 0 is the plain forward-backward step
        if trial is None:
            tau = 0.0
            trial = fbe_eval(state.xbar, gamma, smooth, nonsmooth)

        run.record(
            TrajectoryPoint(
                iteration=iteration,
                x=state.x.tolist(),
                fbe=state.fbe,
                residual_inf=state.residual_inf,
                residual_sq=state.residual_sq,
                gamma=gamma,
                tau=tau,
                sigma=sigma,
                fbe_next=trial.fbe,
            )
        )
        x = trial.x
        iteration += 1
    return _finish(run, status, state, iteration)
