import math
from typing import NamedTuple, Optional

import numpy as np
from pydantic import (
    BaseModel,
    PositiveFloat,
    PositiveInt,
    field_validator,
    model_validator,
)

from saddlefree.core.errors import NonFiniteObjectiveError, SubsolverContractError
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
)
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
    TrStep,
    curvature_safeguard,
    lanczos_min_eig,
    lanczos_seeds,
    steihaug_cg,
)
from saddlefree.utils.console import get_logger
from saddlefree.utils.validators import ensure_unit_interval

logger = get_logger(__name__)

CG_TOL_FLOOR = 1e-14


class NtraConfig(BaseModel):
    """
    Configuration of the nonsmooth trust-region method.

    :param gamma0: Initial stepsize; ``None`` picks 0.9/L̂.
    :param delta0: Initial trust-region radius.
    :param delta_max: Upper cap on the radius.
    :param mu1: Acceptance threshold on the ratio ρ.
    :param mu2: Ratio above which the radius grows.
    :param c1: Shrink factor for rejected steps.
    :param c2: Factor for accepted steps with μ1 ≤ ρ < μ2.
    :param c3: Growth factor for very successful steps.
    :param tol_r: Stop when ‖r‖∞ is at most this...
    :param tol_lambda: ...and the certified λ_min is at least −tol_lambda.
    :param max_iter: Outer iteration budget.
    :param beta2: Negative-curvature safeguard constant.
    :param gamma_alpha: α of the adaptive stepsize test.
    :param lanczos_max_iter: Krylov dimension cap (the dimension caps it too).
    :param lanczos_tol: Relative Ritz residual tolerance.
    :param cg_max_iter: Steihaug budget; ``None`` means twice the dimension.
    :param store_trajectory: Keep one ``TrajectoryPoint`` per iteration.
    """

    gamma0: Optional[PositiveFloat] = None
    delta0: PositiveFloat = 1.0
    delta_max: PositiveFloat = 1e8
    mu1: float = 0.5
    mu2: float = 0.7
    c1: float = 0.35
    c2: float = 1.0
    c3: float = 1.5
    tol_r: PositiveFloat = 1e-10
    tol_lambda: PositiveFloat = 1e-10
    max_iter: PositiveInt = 2000
    beta2: PositiveFloat = 0.25
    gamma_alpha: float = ADAPT_ALPHA
    lanczos_max_iter: PositiveInt = 50
    lanczos_tol: PositiveFloat = 1e-8
    cg_max_iter: Optional[PositiveInt] = None
    store_trajectory: bool = False

    _alpha_in_unit_interval = field_validator("gamma_alpha")(ensure_unit_interval)

    @model_validator(mode="after")
    def check_ordering(self) -> "NtraConfig":
        if not 0.0 < self.mu1 < self.mu2 < 1.0:
            raise ValueError("Ratio thresholds must satisfy 0 < mu1 < mu2 < 1.")
        if not (0.0 < self.c1 < self.c2 <= 1.0 < self.c3):
            raise ValueError("Radius factors must satisfy 0 < c1 < c2 <= 1 < c3.")
        if self.delta0 > self.delta_max:
            raise ValueError("delta0 cannot exceed delta_max.")
        return self


class NtraStep(NamedTuple):
    candidate: Vector
    rho: float
    accepted: bool
    delta: float
    trial_state: Optional[FbeState]
    step: TrStep


def cg_tolerance(grad: Vector) -> float:
    """ε_CG = min(½‖g‖∞, ‖g‖∞^{3/2}), floored away from zero."""
    g_inf = float(np.max(np.abs(grad)))
    return max(min(0.5 * g_inf, g_inf**1.5), CG_TOL_FLOOR)


def update_radius(rho: float, delta: float, config: NtraConfig) -> float:
    if rho < config.mu1:
        factor = config.c1
    elif rho < config.mu2:
        factor = config.c2
    else:
        factor = config.c3
    return min(factor * delta, config.delta_max)


def ntra_step(
    state: FbeState,
    op: GenHessOp,
    delta: float,
    config: NtraConfig,
    *,
    grad: Vector,
    eig: EigEstimate,
    smooth: SmoothOracle,
    nonsmooth: NonsmoothOracle,
) -> NtraStep:
    """
    One trust-region iteration from ``state``.

    Solves the model subproblem with Steihaug CG plus the curvature safeguard,
    evaluates the envelope at x + d and applies the ratio test and radius rule.
    A trial at which γ fails the upper-bound test is rejected with ρ = −∞.

    :param state: Envelope state at the current iterate.
    :param op: Generalized Hessian at the current iterate.
    :param delta: Current radius.
    :param config: Method parameters.
    :param grad: ∇φ_γ at the current iterate.
    :param eig: Smallest Ritz pair of ``op``.
    :return: The candidate (x + d if accepted, else x), ρ, the decision, the
        new radius, the trial state and the step.
    :raises SubsolverContractError: If the model does not decrease.
    """
    max_iter = config.cg_max_iter or 2 * op.dim
    step = steihaug_cg(grad, op, delta, cg_tolerance(grad), max_iter)
    step = curvature_safeguard(step, grad, op, delta, eig, config.beta2)
    if not step.model_decrease > 0:
        raise SubsolverContractError()

    trial: Optional[FbeState]
    try:
        trial = fbe_eval(state.x + step.d, state.gamma, smooth, nonsmooth)
    except NonFiniteObjectiveError:
        trial = None

    if trial is None:
        rho = -math.inf
    else:
        slack = roundoff_slack(state.fbe)
        rho = (state.fbe - trial.fbe + slack) / (step.model_decrease + slack)
    if rho >= config.mu1 and trial is not None:
        # a step where γ fails the upper-bound test counts as a failed step
        bounded = bounded_trial(trial, smooth, config.gamma_alpha)
        if bounded is None:
            rho = -math.inf
        else:
            trial = bounded
    accepted = rho >= config.mu1
    return NtraStep(
        candidate=trial.x if accepted and trial is not None else state.x,
        rho=rho,
        accepted=accepted,
        delta=update_radius(rho, delta, config),
        trial_state=trial,
        step=step,
    )


def _local_model(
    state: FbeState,
    smooth: SmoothOracle,
    nonsmooth: NonsmoothOracle,
    krylov: int,
    config: NtraConfig,
    lanczos_seed: int,
) -> tuple[GenHessOp, Vector, EigEstimate]:
    op = GenHessOp(state, smooth, nonsmooth)
    grad = fbe_grad(state, smooth)
    eig = lanczos_min_eig(op, op.dim, krylov, config.lanczos_tol, lanczos_seed)
    return op, grad, eig


def ntra_solve(
    problem: ProblemInstance,
    config: Optional[NtraConfig] = None,
    seed: int = 0,
    x0: Optional[Vector] = None,
    counters: Optional[CallCounters] = None,
) -> RunReport:
    """
    Run the nonsmooth trust-region method on ``problem``.

    Each iterate gets an adapted stepsize, its generalized Hessian and a
    Lanczos estimate of λ_min. The run stops once ‖r‖∞ ≤ tol_r and the
    certified λ_min ≥ −tol_lambda. Rejected steps reuse the operator and the
    eigen-estimate; only the radius shrinks.

    :param problem: Problem instance (its oracles are wrapped for counting).
    :param config: Method parameters, defaults if omitted.
    :param seed: Run seed for the Lipschitz directions and Lanczos start vectors.
    :param x0: Initial point; a uniform sample of the unit ball if omitted.
    :param counters: Counter set to charge; a fresh one if omitted.
    :return: The run report.
    :raises StepsizeUnderflowError: If the stepsize test cannot be met.
    """
    config = config or NtraConfig()
    if x0 is None:
        x0 = sample_unit_ball(problem.dim, seed)
    run = RunContext(
        "ntra", problem, seed, x0, config.store_trajectory, counters
    )
    smooth, nonsmooth = run.smooth, run.nonsmooth
    seeds = lanczos_seeds(seed)
    krylov = min(problem.dim, config.lanczos_max_iter)

    # --- Stepsize and local model at x⁰ ---
    gamma, _ = initial_stepsize(smooth, run.x0, seed, config.gamma0)
    gamma, state = adapt_gamma(run.x0, gamma, smooth, nonsmooth, config.gamma_alpha)
    delta = config.delta0
    iteration = 0
    op, grad, eig = _local_model(state, smooth, nonsmooth, krylov, config, next(seeds))
    status: RunStatus
    while True:
        logger.debug(
            "ntra it=%d fbe=%.12e |r|=%.3e delta=%.3e lambda=%.3e",
            iteration,
            state.fbe,
            state.residual_inf,
            delta,
            eig.lambda_min,
        )
        if state.residual_inf <= config.tol_r and eig.certified >= -config.tol_lambda:
            status = "second_order_stationary"
            break
        if iteration >= config.max_iter:
            status = "budget_exhausted"
            break

        # --- Trust-region step ---
        outcome = ntra_step(
            state,
            op,
            delta,
            config,
            grad=grad,
            eig=eig,
            smooth=smooth,
            nonsmooth=nonsmooth,
        )
        trial = outcome.trial_state
        run.record(
            TrajectoryPoint(
                iteration=iteration,
                x=state.x.tolist(),
                fbe=state.fbe,
                residual_inf=state.residual_inf,
                residual_sq=state.residual_sq,
                gamma=state.gamma,
                accepted=outcome.accepted,
                radius=delta,
                lambda_min=eig.lambda_min,
                fbe_next=trial.fbe if trial is not None else None,
            )
        )
        iteration += 1
        delta = outcome.delta
        if not outcome.accepted:
            continue

        # --- Accepted: re-adapt γ at the new iterate and rebuild the model ---
        new_gamma, state = adapt_gamma(
            outcome.candidate, gamma, smooth, nonsmooth, config.gamma_alpha, trial
        )
        if new_gamma < gamma:
            logger.info("ntra: stepsize reduced %.3e -> %.3e", gamma, new_gamma)
        gamma = new_gamma
        op, grad, eig = _local_model(
            state, smooth, nonsmooth, krylov, config, next(seeds)
        )

    if status == "budget_exhausted":
        logger.warning("ntra: iteration budget of %d exhausted", config.max_iter)
    else:
        logger.info(
            "ntra: second-order stationary after %d iterations, |r|=%.3e",
            iteration,
            state.residual_inf,
        )
    return run.finish(status, state, iteration, eig)
