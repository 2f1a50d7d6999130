from abc import ABC, abstractmethod
from typing import ClassVar, Mapping, Optional, overload

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel

from saddlefree.core.errors import OracleError

Vector = NDArray[np.float64]

LIPSCHITZ_FD_STEP = 1e-3
LIPSCHITZ_DIRECTIONS = 5
LIPSCHITZ_FLOOR = 1e-12


class SmoothOracle(ABC):
    """
    First- and second-order oracle for the smooth term f.

    Implementations are immutable after construction and deterministic, so one
    instance can be shared by every solver run of a sweep.

    :param dim: Problem dimension.
    :param lipschitz_hint: Optional estimate of the Lipschitz constant of ∇f.
    """

    # Matrix-vector products performed by one call of each method.
    matvec_cost: ClassVar[Mapping[str, int]] = {}

    def __init__(self, dim: int, lipschitz_hint: Optional[float] = None) -> None:
        if dim < 1:
            raise ValueError("Oracle dimension must be positive.")
        if lipschitz_hint is not None and lipschitz_hint < 0:
            raise ValueError("Lipschitz hint must be nonnegative.")
        self.dim = dim
        self.lipschitz_hint = lipschitz_hint

    @abstractmethod
    def value(self, x: Vector) -> float: ...

    @abstractmethod
    def grad(self, x: Vector) -> Vector: ...

    @abstractmethod
    def hvp(self, x: Vector, v: Vector) -> Vector: ...


class NonsmoothOracle(ABC):
    """
    Proximal oracle for the nonsmooth term g.

    ``value`` may return ``inf`` outside dom g. ``prox_jvp`` applies one fixed
    element of the Clarke Jacobian of ``prox(·, gamma)`` at ``y``.
    """

    def __init__(self, dim: int, weak_convexity: float = 0.0) -> None:
        if dim < 1:
            raise ValueError("Oracle dimension must be positive.")
        if weak_convexity < 0:
            raise ValueError("Weak convexity modulus must be nonnegative.")
        self.dim = dim
        self.weak_convexity = weak_convexity

    @abstractmethod
    def value(self, x: Vector) -> float: ...

    @abstractmethod
    def prox(self, y: Vector, gamma: float) -> Vector: ...

    @abstractmethod
    def prox_jvp(self, y: Vector, gamma: float, v: Vector) -> Vector: ...


class CallCounters(BaseModel):
    """
    Per-run oracle call counters.

    ``mvp`` accumulates the matrix-vector cost declared by the smooth oracle; the
    other six fields count invocations, one increment per call.
    """

    eval_f: int = 0
    eval_g: int = 0
    grad_f: int = 0
    prox_g: int = 0
    jprox_g: int = 0
    hvp_f: int = 0
    mvp: int = 0

    def total_calls(self) -> int:
        return (
            self.eval_f
            + self.eval_g
            + self.grad_f
            + self.prox_g
            + self.jprox_g
            + self.hvp_f
        )


class QuadraticOracle(SmoothOracle):
    """f(x) = ½ xᵀHx + cᵀx with a dense symmetric H."""

    matvec_cost: ClassVar[Mapping[str, int]] = {"value": 1, "grad": 1, "hvp": 1}

    def __init__(self, hessian: Vector, linear: Optional[Vector] = None) -> None:
        hessian = np.asarray(hessian, dtype=float)
        if hessian.ndim != 2 or hessian.shape[0] != hessian.shape[1]:
            raise ValueError("Hessian must be a square matrix.")
        if not np.allclose(hessian, hessian.T):
            raise ValueError("Hessian must be symmetric.")
        dim = hessian.shape[0]
        super().__init__(dim, lipschitz_hint=float(np.linalg.norm(hessian, 2)))
        self.hessian = hessian
        self.linear = (
            np.zeros(dim) if linear is None else np.asarray(linear, dtype=float)
        )

    def value(self, x: Vector) -> float:
        return float(0.5 * x @ (self.hessian @ x) + self.linear @ x)

    def grad(self, x: Vector) -> Vector:
        return self.hessian @ x + self.linear

    def hvp(self, x: Vector, v: Vector) -> Vector:
        return self.hessian @ v


class CountingSmoothOracle(SmoothOracle):
    """Forwarding wrapper that records every call in a ``CallCounters``."""

    def __init__(self, inner: SmoothOracle, counters: CallCounters) -> None:
        super().__init__(inner.dim, inner.lipschitz_hint)
        self.inner = inner
        self.counters = counters

    def _charge(self, method: str) -> None:
        self.counters.mvp += self.inner.matvec_cost.get(method, 0)

    def value(self, x: Vector) -> float:
        self.counters.eval_f += 1
        self._charge("value")
        return self.inner.value(x)

    def grad(self, x: Vector) -> Vector:
        self.counters.grad_f += 1
        self._charge("grad")
        return self.inner.grad(x)

    def hvp(self, x: Vector, v: Vector) -> Vector:
        self.counters.hvp_f += 1
        self._charge("hvp")
        return self.inner.hvp(x, v)


class CountingNonsmoothOracle(NonsmoothOracle):
    def __init__(self, inner: NonsmoothOracle, counters: CallCounters) -> None:
        super().__init__(inner.dim, inner.weak_convexity)
        self.inner = inner
        self.counters = counters

    def value(self, x: Vector) -> float:
        self.counters.eval_g += 1
        return self.inner.value(x)

    def prox(self, y: Vector, gamma: float) -> Vector:
        self.counters.prox_g += 1
        return self.inner.prox(y, gamma)

    def prox_jvp(self, y: Vector, gamma: float, v: Vector) -> Vector:
        self.counters.jprox_g += 1
        return self.inner.prox_jvp(y, gamma, v)


@overload
def wrap_counting(
    oracle: SmoothOracle, counters: CallCounters
) -> CountingSmoothOracle: ...


@overload
def wrap_counting(
    oracle: NonsmoothOracle, counters: CallCounters
) -> CountingNonsmoothOracle: ...


def wrap_counting(
    oracle: SmoothOracle | NonsmoothOracle, counters: CallCounters
) -> CountingSmoothOracle | CountingNonsmoothOracle:
    """
    Wrap an oracle so that each call increments the matching counter.

    Results are returned untouched, so wrapped and unwrapped oracles agree bit
    for bit.

    :param oracle: Smooth or nonsmooth oracle to wrap.
    :param counters: Counter set owned by one solver run.
    :return: The counting wrapper.
    """
    if isinstance(oracle, SmoothOracle):
        return CountingSmoothOracle(oracle, counters)
    if isinstance(oracle, NonsmoothOracle):
        return CountingNonsmoothOracle(oracle, counters)
    raise TypeError(f"Cannot wrap {type(oracle).__name__} for call counting.")


def estimate_lipschitz(oracle: SmoothOracle, x0: Vector, seed: int) -> float:
    """
    Estimate the Lipschitz constant of ∇f around ``x0``.

    Takes the largest of the oracle's hint and five finite-difference quotients
    ‖∇f(x0 + δu) − ∇f(x0)‖/δ along random unit directions u, δ = 1e-3.

    :param oracle: Smooth oracle.
    :param x0: Base point.
    :param seed: Seed of the random directions.
    :return: A strictly positive estimate (floored at 1e-12).
    :raises OracleError: If the oracle returns a non-finite gradient.
    """
    rng = np.random.default_rng(seed)
    x0 = np.asarray(x0, dtype=float)
    g0 = oracle.grad(x0)
    if not np.all(np.isfinite(g0)):
        raise OracleError()

    estimate = oracle.lipschitz_hint or 0.0
    for _ in range(LIPSCHITZ_DIRECTIONS):
        u = rng.standard_normal(oracle.dim)
        u /= np.linalg.norm(u)
        g = oracle.grad(x0 + LIPSCHITZ_FD_STEP * u)
        if not np.all(np.isfinite(g)):
            raise OracleError()
        estimate = max(estimate, float(np.linalg.norm(g - g0)) / LIPSCHITZ_FD_STEP)
    return max(estimate, LIPSCHITZ_FLOOR)
