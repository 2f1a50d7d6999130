import math
from typing import List, Literal, Optional, Union

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, model_validator

from saddlefree.core.errors import EmptyBoxError
from saddlefree.core.oracles import NonsmoothOracle, Vector

ProxKind = Literal["l1", "box", "ball", "l1_ball", "l1_box"]
Param = Union[float, List[float]]

# Slack used when deciding membership of dom g.
FEASIBILITY_TOL = 1e-10
# Points whose norm exceeds the radius by a few ulps are left in place, so that
# projecting twice returns the same array.
_BALL_ULPS = 16 * np.finfo(float).eps


class ProxSpec(BaseModel):
    """
    Description of a nonsmooth term with a closed-form proximal mapping.

    :param kind: One of ``l1``, ``box``, ``ball``, ``l1_ball``, ``l1_box``.
    :param kappa: ℓ1 weight, a scalar or one weight per coordinate.
    :param lo: Lower box bound (scalar or per coordinate).
    :param hi: Upper box bound (scalar or per coordinate).
    :param radius: Euclidean ball radius.
    """

    model_config = ConfigDict(frozen=True)

    kind: ProxKind
    kappa: Param = 0.0
    lo: Optional[Param] = None
    hi: Optional[Param] = None
    radius: Optional[float] = None

    @model_validator(mode="after")
    def check_parameters(self) -> "ProxSpec":
        if np.any(np.asarray(self.kappa, dtype=float) < 0):
            raise ValueError("kappa must be nonnegative.")
        if self.kind in ("box", "l1_box"):
            if self.lo is None or self.hi is None:
                raise ValueError(f"'{self.kind}' requires both lo and hi.")
            if np.any(np.asarray(self.lo, dtype=float) > np.asarray(self.hi, dtype=float)):
                raise EmptyBoxError()
        if self.kind in ("ball", "l1_ball"):
            if self.radius is None or not self.radius > 0:
                raise ValueError("radius must be positive.")
        return self

    @classmethod
    def l1(cls, kappa: Param) -> "ProxSpec":
        return cls(kind="l1", kappa=kappa)

    @classmethod
    def box(cls, lo: Param, hi: Param) -> "ProxSpec":
        return cls(kind="box", lo=lo, hi=hi)

    @classmethod
    def ball(cls, radius: float) -> "ProxSpec":
        return cls(kind="ball", radius=radius)

    @classmethod
    def l1_ball(cls, kappa: Param, radius: float) -> "ProxSpec":
        return cls(kind="l1_ball", kappa=kappa, radius=radius)

    @classmethod
    def l1_box(cls, kappa: Param, lo: Param, hi: Param) -> "ProxSpec":
        return cls(kind="l1_box", kappa=kappa, lo=lo, hi=hi)

    def kappa_vector(self) -> Vector:
        return np.asarray(self.kappa, dtype=float)

    def bounds(self) -> tuple[Vector, Vector]:
        assert self.lo is not None and self.hi is not None
        return np.asarray(self.lo, dtype=float), np.asarray(self.hi, dtype=float)


def soft_threshold(x: Vector, tau: ArrayLike) -> Vector:
    """Componentwise sign(xᵢ)·max(|xᵢ| − τᵢ, 0); ``tau`` may be a scalar or a vector."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - np.asarray(tau, dtype=float), 0.0)


def proj_box(x: Vector, lo: ArrayLike, hi: ArrayLike) -> Vector:
    """
    Componentwise clamp onto [lo, hi].

    :raises EmptyBoxError: If lo > hi in any component.
    """
    lo_arr = np.asarray(lo, dtype=float)
    hi_arr = np.asarray(hi, dtype=float)
    if np.any(lo_arr > hi_arr):
        raise EmptyBoxError()
    return np.clip(np.asarray(x, dtype=float), lo_arr, hi_arr)


def proj_ball(x: Vector, r: float) -> Vector:
    """Projection onto the closed Euclidean ball of radius ``r`` centred at 0."""
    x = np.asarray(x, dtype=float)
    nrm = float(np.linalg.norm(x))
    if nrm <= r * (1.0 + _BALL_ULPS):
        return x.copy()
    return (r / nrm) * x


def prox_l1_ball(x: Vector, tau: ArrayLike, r: float) -> Vector:
    """Prox of τ‖·‖₁ + δ_B(0;r): soft-threshold, then radial projection."""
    return proj_ball(soft_threshold(x, tau), r)


def prox_l1_box(x: Vector, tau: ArrayLike, lo: ArrayLike, hi: ArrayLike) -> Vector:
    """Prox of τ‖·‖₁ + δ_[lo,hi]; separable, so clamping the soft-threshold is exact."""
    return proj_box(soft_threshold(x, tau), lo, hi)


def prox_apply(spec: ProxSpec, y: Vector, gamma: float) -> Vector:
    """Evaluate prox_{γg}(y) for the term described by ``spec``."""
    tau = gamma * spec.kappa_vector()
    if spec.kind == "l1":
        return soft_threshold(y, tau)
    if spec.kind == "box":
        return proj_box(y, *spec.bounds())
    if spec.kind == "ball":
        assert spec.radius is not None
        return proj_ball(y, spec.radius)
    if spec.kind == "l1_ball":
        assert spec.radius is not None
        return prox_l1_ball(y, tau, spec.radius)
    return prox_l1_box(y, tau, *spec.bounds())


def prox_value(spec: ProxSpec, x: Vector) -> float:
    """g(x), ``inf`` outside the constraint set (up to ``FEASIBILITY_TOL``)."""
    x = np.asarray(x, dtype=float)
    value = 0.0
    if spec.kind in ("l1", "l1_ball", "l1_box"):
        value = float(np.sum(np.broadcast_to(spec.kappa_vector(), x.shape) * np.abs(x)))
    if spec.kind in ("box", "l1_box"):
        lo, hi = spec.bounds()
        if np.any(x < lo - FEASIBILITY_TOL) or np.any(x > hi + FEASIBILITY_TOL):
            return math.inf
    if spec.kind in ("ball", "l1_ball"):
        assert spec.radius is not None
        if np.linalg.norm(x) > spec.radius + FEASIBILITY_TOL * max(1.0, spec.radius):
            return math.inf
    return value


def _ball_jvp(s: Vector, r: float, v: Vector) -> Vector:
    nrm = float(np.linalg.norm(s))
    if nrm < r:
        return v.copy()
    # On the sphere we take the clipped element (r/‖s‖)(I − ssᵀ/‖s‖²).
    return (r / nrm) * (v - s * (s @ v) / nrm**2)


def prox_jvp(spec: ProxSpec, y: Vector, gamma: float, v: Vector) -> Vector:
    """
    Apply one element P of the Clarke Jacobian of prox_{γg} at ``y`` to ``v``.

    At kinks the most clipped element is used (derivative 0 for the ℓ1 and box
    masks, the sphere-projection form for the ball), so runs are deterministic.
    Compositions use the chain rule at the intermediate soft-thresholded point.
    """
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    threshold = np.broadcast_to(gamma * spec.kappa_vector(), y.shape)
    # Unweighted coordinates pass through the soft-threshold unchanged.
    active = (np.abs(y) > threshold) | (threshold == 0)
    if spec.kind == "l1":
        return np.where(active, v, 0.0)
    if spec.kind == "box":
        lo, hi = spec.bounds()
        return np.where((y > lo) & (y < hi), v, 0.0)
    if spec.kind == "ball":
        assert spec.radius is not None
        return _ball_jvp(y, spec.radius, v)

    t = soft_threshold(y, threshold)
    if spec.kind == "l1_ball":
        assert spec.radius is not None
        return _ball_jvp(t, spec.radius, np.where(active, v, 0.0))
    lo, hi = spec.bounds()
    return np.where(active & (t > lo) & (t < hi), v, 0.0)


def kink_distance(spec: ProxSpec, y: Vector, gamma: float) -> float:
    """
    Distance from ``y`` to the nearest point where prox_{γg} is not differentiable.

    Only the kinks of terms that are present count; ℓ1 coordinates with zero
    weight have none.
    """
    y = np.asarray(y, dtype=float)
    distances = [math.inf]
    threshold = np.broadcast_to(gamma * spec.kappa_vector(), y.shape)
    weighted = threshold > 0
    active = (np.abs(y) > threshold) | ~weighted
    t = soft_threshold(y, threshold)

    if spec.kind in ("l1", "l1_ball", "l1_box") and np.any(weighted):
        distances.append(float(np.min(np.abs(np.abs(y[weighted]) - threshold[weighted]))))
    if spec.kind == "box":
        lo, hi = (np.broadcast_to(b, y.shape) for b in spec.bounds())
        distances.append(float(np.min(np.minimum(np.abs(y - lo), np.abs(y - hi)))))
    if spec.kind == "l1_box" and np.any(active):
        lo, hi = (np.broadcast_to(b, y.shape) for b in spec.bounds())
        gap = np.minimum(np.abs(t - lo), np.abs(t - hi))
        distances.append(float(np.min(gap[active])))
    if spec.kind == "ball":
        assert spec.radius is not None
        distances.append(abs(float(np.linalg.norm(y)) - spec.radius))
    if spec.kind == "l1_ball":
        assert spec.radius is not None
        distances.append(abs(float(np.linalg.norm(t)) - spec.radius))
    return min(distances)


class ProxOperator(NonsmoothOracle):
    """Adapts a ``ProxSpec`` to the ``NonsmoothOracle`` interface (ρ = 0, convex g)."""

    def __init__(self, spec: ProxSpec, dim: int) -> None:
        super().__init__(dim, weak_convexity=0.0)
        for name in ("kappa", "lo", "hi"):
            param = getattr(spec, name)
            if isinstance(param, list) and len(param) != dim:
                raise ValueError(f"{name} has length {len(param)}, expected {dim}.")
        self.spec = spec

    def value(self, x: Vector) -> float:
        return prox_value(self.spec, x)

    def prox(self, y: Vector, gamma: float) -> Vector:
        return prox_apply(self.spec, y, gamma)

    def prox_jvp(self, y: Vector, gamma: float, v: Vector) -> Vector:
        return prox_jvp(self.spec, y, gamma, v)
