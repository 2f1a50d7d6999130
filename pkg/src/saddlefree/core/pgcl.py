import math
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, PositiveFloat, PositiveInt, field_validator

from saddlefree.core.errors import NonFiniteObjectiveError
from saddlefree.core.fbe import (
    ADAPT_ALPHA,
    FbeState,
    GenHessOp,
    adapt_gamma,
    bounded_trial,
    fbe_eval,
    fbe_grad,
    initial_stepsize,
    roundoff_slack,
    sufficient_decrease_sigma,
)
from saddlefree.core.ntra import cg_tolerance
from saddlefree.core.oracles import (
    CallCounters,
    NonsmoothOracle,
    SmoothOracle,
    Vector,
)
from saddlefree.core.problems import ProblemInstance, sample_unit_ball
from saddlefree.core.report import RunContext, RunReport, RunStatus, TrajectoryPoint
from saddlefree.core.subsolvers import (
    EigEstimate,
    LbfgsBuffer,
    lanczos_min_eig,
    lanczos_seeds,
    lbfgs_direction,
    orient_descent,
    truncated_cg,
)
from saddlefree.utils.console import get_logger
from saddlefree.utils.validators import ensure_unit_interval

logger = get_logger(__name__)

DirectionMode = Literal["newton_cg", "lbfgs"]


class PgclConfig(BaseModel):
    """
    Configuration of the curvilinear-linesearch method.

    :param gamma0: Initial stepsize; ``None`` picks 0.9/L̂.
    :param sigma_factor: σ = sigma_factor·γ(1 − max(γL̂, α))/2.
    :param beta: Backtracking factor for τ.
    :param mu: Weight of the curvature term in the acceptance test.
    :param sbar: Scaling of the negative-curvature direction.
    :param direction_mode: Fast direction, truncated Newton-CG or L-BFGS.
    :param tol_r: Residual tolerance of the stop test.
    :param tol_lambda: Curvature tolerance of the stop test; also the
        activation threshold for the negative-curvature direction.
    :param max_iter: Outer iteration budget.
    :param max_backtracks: Number of τ values tried before falling back to x̄.
    :param lbfgs_capacity: Memory of the L-BFGS direction.
    """

    gamma0: Optional[PositiveFloat] = None
    sigma_factor: float = 1.0 / math.sqrt(2.0)
    beta: float = 1.0 / math.sqrt(2.0)
    mu: float = 0.1
    sbar: PositiveFloat = 1.0
    direction_mode: DirectionMode = "newton_cg"
    tol_r: PositiveFloat = 1e-10
    tol_lambda: PositiveFloat = 1e-10
    max_iter: PositiveInt = 2000
    max_backtracks: PositiveInt = 60
    lbfgs_capacity: PositiveInt = 5
    gamma_alpha: float = ADAPT_ALPHA
    lanczos_max_iter: PositiveInt = 50
    lanczos_tol: PositiveFloat = 1e-8
    cg_max_iter: Optional[PositiveInt] = None
    store_trajectory: bool = False

    _unit_interval = field_validator("sigma_factor", "beta", "mu", "gamma_alpha")(
        ensure_unit_interval
    )


@dataclass(frozen=True)
class DirectionPair:
    """
    Fast direction ``d`` and negative-curvature direction ``s`` at x̄ᵏ.

    ``curvature`` is ⟨Bs, s⟩; the flags record ⟨Q r̄, d⟩ ≤ 0 and ⟨Q r̄, s⟩ ≤ 0.
    """

    d: Vector
    s: Vector
    curvature: float
    d_descent: bool
    s_descent: bool

    @property
    def is_zero(self) -> bool:
        return not np.any(self.d) and not np.any(self.s)


def pgcl_directions(
    state_bar: FbeState,
    op: GenHessOp,
    config: PgclConfig,
    *,
    grad_bar: Vector,
    eig: EigEstimate,
    buffer: Optional[LbfgsBuffer] = None,
) -> DirectionPair:
    """
    Build the direction pair from the generalized Hessian at x̄ᵏ.

    s = ±ρv with ρ = s̄·√(−λ̂)·min(1, 1/‖Q r̄‖) when the certified λ_min is
    below −tol_lambda, else 0. The curvature ⟨Bs, s⟩ is ρ²λ̂ since λ̂ is the
    Rayleigh quotient of v. ``d`` is flipped (Newton-CG) or zeroed (L-BFGS)
    when it is not a descent direction for the envelope.
    """
    dim = op.dim
    grad_norm = float(np.linalg.norm(grad_bar))
    if eig.certified < -config.tol_lambda and eig.lambda_min < 0:
        scale = config.sbar * math.sqrt(-eig.lambda_min)
        if grad_norm > 1.0:
            scale /= grad_norm
        s = scale * orient_descent(eig.v, grad_bar)
        curvature = scale**2 * eig.lambda_min
    else:
        s = np.zeros(dim)
        curvature = 0.0

    if config.direction_mode == "newton_cg":
        max_iter = config.cg_max_iter or 2 * dim
        d = truncated_cg(grad_bar, op, cg_tolerance(grad_bar), max_iter)
        if float(grad_bar @ d) > 0:
            d = -d
    else:
        d = lbfgs_direction(buffer if buffer is not None else LbfgsBuffer(), grad_bar)
        if float(grad_bar @ d) > 0:
            d = np.zeros(dim)

    return DirectionPair(
        d=d,
        s=s,
        curvature=curvature,
        d_descent=float(grad_bar @ d) <= 0,
        s_descent=float(grad_bar @ s) <= 0,
    )


def pgcl_linesearch(
    state: FbeState,
    state_bar: FbeState,
    pair: DirectionPair,
    config: PgclConfig,
    sigma: float,
    smooth: SmoothOracle,
    nonsmooth: NonsmoothOracle,
) -> tuple[Vector, float, FbeState]:
    """
    Backtrack along x(τ) = x̄ + τ²d + τs for τ = 1, β, β², ….

    τ is accepted when φ_γ(x(τ)) ≤ φ_γ(x) − σ‖r‖² + (μ/2)τ²⟨Bs, s⟩ up to
    roundoff and γ passes the upper-bound test at x(τ). Points where the
    envelope is not finite count as failures.
    When every τ fails the forward-backward point x̄ is returned with τ = 0.

    :return: The next iterate, the accepted τ and the envelope state there.
    """
    if pair.is_zero:
        return state_bar.x, 1.0, state_bar
    target = state.fbe - sigma * state.residual_sq + roundoff_slack(state.fbe)
    tau = 1.0
    for _ in range(config.max_backtracks):
        candidate = state_bar.x + tau**2 * pair.d + tau * pair.s
        try:
            trial = fbe_eval(candidate, state.gamma, smooth, nonsmooth)
        except NonFiniteObjectiveError:
            trial = None
        if trial is not None:
            bound = target + 0.5 * config.mu * tau**2 * pair.curvature
            if trial.fbe <= bound:
                bounded = bounded_trial(trial, smooth, config.gamma_alpha)
                if bounded is not None:
                    return candidate, tau, bounded
        tau *= config.beta
    logger.debug("pgcl: linesearch exhausted, taking the forward-backward step")
    return state_bar.x, 0.0, state_bar


def pgcl_solve(
    problem: ProblemInstance,
    config: Optional[PgclConfig] = None,
    seed: int = 0,
    x0: Optional[Vector] = None,
    counters: Optional[CallCounters] = None,
) -> RunReport:
    """
    Run the proximal gradient method with curvilinear linesearch.

    Per iteration: adapted envelope state at xᵏ, state at x̄ᵏ, stop test on
    ‖r̄‖∞ and the certified λ_min of B at x̄ᵏ, directions, linesearch.

    :param problem: Problem instance.
    :param config: Method parameters, defaults if omitted.
    :param seed: Run seed.
    :param x0: Initial point; a uniform sample of the unit ball if omitted.
    :param counters: Counter set to charge; a fresh one if omitted.
    :return: The run report; the reported state is the one at x̄ᵏ.
    :raises StepsizeUnderflowError: If the stepsize test cannot be met.
    """
    config = config or PgclConfig()
    if x0 is None:
        x0 = sample_unit_ball(problem.dim, seed)
    run = RunContext(
        "pgcl", problem, seed, x0, config.store_trajectory, counters
    )
    smooth, nonsmooth = run.smooth, run.nonsmooth
    seeds = lanczos_seeds(seed)
    krylov = min(problem.dim, config.lanczos_max_iter)
    buffer = LbfgsBuffer(config.lbfgs_capacity)
    previous: Optional[tuple[Vector, Vector]] = None

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
            logger.info("pgcl: stepsize reduced %.3e -> %.3e", gamma, new_gamma)
            buffer.clear()
            previous = None
        gamma = new_gamma

        # stop test and curvature live at the backward point
        state_bar = fbe_eval(state.xbar, gamma, smooth, nonsmooth)
        op = GenHessOp(state_bar, smooth, nonsmooth)
        grad_bar = fbe_grad(state_bar, smooth)
        eig = lanczos_min_eig(op, op.dim, krylov, config.lanczos_tol, next(seeds))
        logger.debug(
            "pgcl it=%d fbe=%.12e |r|=%.3e lambda=%.3e",
            iteration,
            state.fbe,
            state_bar.residual_inf,
            eig.lambda_min,
        )
        if (
            state_bar.residual_inf <= config.tol_r
            and eig.certified >= -config.tol_lambda
        ):
            status = "second_order_stationary"
            break
        if iteration >= config.max_iter:
            status = "budget_exhausted"
            break

        # --- Directions and curvilinear linesearch ---
        if previous is not None and config.direction_mode == "lbfgs":
            buffer.push(state_bar.x - previous[0], grad_bar - previous[1])
        previous = (state_bar.x, grad_bar)

        pair = pgcl_directions(
            state_bar, op, config, grad_bar=grad_bar, eig=eig, buffer=buffer
        )
        sigma = sufficient_decrease_sigma(
            gamma, lipschitz, config.sigma_factor, config.gamma_alpha
        )
        x, tau, trial = pgcl_linesearch(
            state, state_bar, pair, config, sigma, smooth, nonsmooth
        )
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
                curvature=pair.curvature,
                lambda_min=eig.lambda_min,
                fbe_next=trial.fbe,
            )
        )
        iteration += 1

    if status == "budget_exhausted":
        logger.warning("pgcl: iteration budget of %d exhausted", config.max_iter)
    else:
        logger.info(
            "pgcl: second-order stationary after %d iterations, |r|=%.3e",
            iteration,
            state_bar.residual_inf,
        )
    return run.finish(status, state_bar, iteration, eig)
