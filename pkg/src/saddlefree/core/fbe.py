import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from saddlefree.core.errors import NonFiniteObjectiveError, StepsizeUnderflowError
from saddlefree.core.oracles import (
    NonsmoothOracle,
    SmoothOracle,
    Vector,
    estimate_lipschitz,
)

ADAPT_ALPHA = 0.95
MAX_HALVINGS = 60
INITIAL_GAMMA_FACTOR = 0.9
ROUNDOFF_FACTOR = 10.0


@dataclass(frozen=True)
class FbeState:
    """
    Cached forward-backward quantities of one iterate at one stepsize.

    ``y`` is the forward point x − γ∇f(x), ``xbar`` the backward point
    prox_{γg}(y), ``r`` the fixed-point residual (x − xbar)/γ and ``fbe`` the
    envelope value. ``f_xbar`` is filled in by ``adapt_gamma``.
    """

    x: Vector
    gamma: float
    fx: float
    gradfx: Vector
    y: Vector
    xbar: Vector
    g_xbar: float
    r: Vector
    fbe: float
    f_xbar: Optional[float] = None

    @property
    def residual_inf(self) -> float:
        return float(np.max(np.abs(self.r)))

    @property
    def residual_sq(self) -> float:
        return float(self.r @ self.r)

    @property
    def phi_xbar(self) -> Optional[float]:
        if self.f_xbar is None:
            return None
        return self.f_xbar + self.g_xbar


def roundoff_slack(value: float) -> float:
    """Floating-point noise level of an envelope value of magnitude ``value``."""
    return ROUNDOFF_FACTOR * float(np.finfo(float).eps) * max(1.0, abs(value))


def fbe_eval(
    x: Vector, gamma: float, smooth: SmoothOracle, nonsmooth: NonsmoothOracle
) -> FbeState:
    """
    Evaluate the forward-backward envelope at ``x``.

    The value is the prox-point form f(x) + g(x̄) + ⟨∇f(x), x̄ − x⟩ + ‖x̄ − x‖²/(2γ),
    which costs one call each of f, ∇f, prox and g.

    :raises NonFiniteObjectiveError: If f, ∇f or g(x̄) is not finite.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive.")
    x = np.asarray(x, dtype=float)
    fx = smooth.value(x)
    gradfx = smooth.grad(x)
    if not math.isfinite(fx) or not np.all(np.isfinite(gradfx)):
        raise NonFiniteObjectiveError()
    y = x - gamma * gradfx
    xbar = nonsmooth.prox(y, gamma)
    g_xbar = nonsmooth.value(xbar)
    if not math.isfinite(g_xbar):
        raise NonFiniteObjectiveError()
    # prox-point form, no extra f call at x̄
    step = xbar - x
    fbe = fx + g_xbar + float(gradfx @ step) + float(step @ step) / (2.0 * gamma)
    return FbeState(
        x=x,
        gamma=gamma,
        fx=fx,
        gradfx=gradfx,
        y=y,
        xbar=xbar,
        g_xbar=g_xbar,
        r=(x - xbar) / gamma,
        fbe=fbe,
    )


def fbe_grad(state: FbeState, smooth: SmoothOracle) -> Vector:
    """∇φ_γ(x) = Q r = r − γ∇²f(x) r, one Hessian-vector product."""
    return state.r - state.gamma * smooth.hvp(state.x, state.r)


@dataclass(frozen=True)
class GenHessOp:
    """
    Matrix-free generalized Hessian B = γ⁻¹Q(I − PQ) of the envelope at ``state.x``.

    Q = I − γ∇²f(x) and P is the Clarke Jacobian element of the prox at the
    forward point ``state.y``. Neither is formed.
    """

    state: FbeState
    smooth: SmoothOracle
    nonsmooth: NonsmoothOracle

    @property
    def dim(self) -> int:
        return int(self.state.x.shape[0])

    def matvec(self, v: Vector) -> Vector:
        gamma, x = self.state.gamma, self.state.x
        qv = v - gamma * self.smooth.hvp(x, v)
        u = v - self.nonsmooth.prox_jvp(self.state.y, gamma, qv)
        return (u - gamma * self.smooth.hvp(x, u)) / gamma

    def __call__(self, v: Vector) -> Vector:
        return self.matvec(v)


def genhess_vp(op: GenHessOp, v: Vector) -> Vector:
    """Bv with exactly two Hessian-vector products and one prox Jacobian product."""
    return op.matvec(np.asarray(v, dtype=float))


def upper_bound_state(
    state: FbeState, smooth: SmoothOracle, alpha: float = ADAPT_ALPHA
) -> Optional[FbeState]:
    """
    Test the quadratic upper bound of f at the backward point of ``state``.

    The test is f(x̄) ≤ f(x) + ⟨∇f(x), x̄ − x⟩ + α/(2γ)‖x̄ − x‖², up to roundoff.
    f(x̄) is only evaluated when ``state`` does not carry it yet. The linesearches
    apply the same test at their trial points before accepting one.

    :return: ``state`` with ``f_xbar`` populated if the bound holds, else ``None``.
    :raises NonFiniteObjectiveError: If f(x̄) is not finite.
    """
    f_xbar = state.f_xbar if state.f_xbar is not None else smooth.value(state.xbar)
    if not math.isfinite(f_xbar):
        raise NonFiniteObjectiveError()
    step = state.xbar - state.x
    bound = (
        state.fx
        + float(state.gradfx @ step)
        + alpha / (2.0 * state.gamma) * float(step @ step)
    )
    if f_xbar > bound + roundoff_slack(state.fx):
        return None
    return replace(state, f_xbar=f_xbar)


def bounded_trial(
    state: FbeState, smooth: SmoothOracle, alpha: float = ADAPT_ALPHA
) -> Optional[FbeState]:
    """``upper_bound_state`` for a linesearch trial; a non-finite f(x̄) rejects it."""
    try:
        return upper_bound_state(state, smooth, alpha)
    except NonFiniteObjectiveError:
        return None


def adapt_gamma(
    x: Vector,
    gamma: float,
    smooth: SmoothOracle,
    nonsmooth: NonsmoothOracle,
    alpha: float = ADAPT_ALPHA,
    state: Optional[FbeState] = None,
) -> tuple[float, FbeState]:
    """
    Halve γ until the quadratic upper bound holds at the backward point.

    A precomputed ``state`` at the same ``x`` and ``gamma`` is reused, and so
    is its f(x̄) when the linesearch already evaluated it.

    :return: The accepted stepsize and the envelope state at ``x`` for it, with
        ``f_xbar`` populated.
    :raises StepsizeUnderflowError: After 60 halvings.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive.")
    for _ in range(MAX_HALVINGS + 1):
        # a passed-in state is reused only at the same γ
        if state is None or state.gamma != gamma:
            state = fbe_eval(x, gamma, smooth, nonsmooth)
        accepted = upper_bound_state(state, smooth, alpha)
        if accepted is not None:
            return gamma, accepted
        gamma /= 2.0
        state = None
    raise StepsizeUnderflowError()


def initial_stepsize(
    smooth: SmoothOracle, x0: Vector, seed: int, gamma0: Optional[float]
) -> tuple[float, float]:
    """
    Pick the starting stepsize and the Lipschitz estimate that goes with it.

    :return: (γ, L̂) with γ = ``gamma0`` when given, else 0.9/L̂.
    """
    lipschitz = estimate_lipschitz(smooth, x0, seed)
    gamma = gamma0 if gamma0 is not None else INITIAL_GAMMA_FACTOR / lipschitz
    return gamma, lipschitz


def sufficient_decrease_sigma(
    gamma: float, lipschitz: float, factor: float, alpha: float = ADAPT_ALPHA
) -> float:
    """
    σ = factor·γ(1 − max(γL̂, α))/2 for the linesearch methods.

    Once ``adapt_gamma`` has accepted γ, the backward point decreases the
    envelope by at least γ(1 − α)/2·‖r‖², so the pure forward-backward step
    always passes a test built on this σ.
    """
    return factor * gamma * (1.0 - max(gamma * lipschitz, alpha)) / 2.0
