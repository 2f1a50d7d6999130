import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, Deque, Iterator, Literal

import numpy as np
from scipy.linalg import eigh_tridiagonal

from saddlefree.core.oracles import Vector

MatVec = Callable[[Vector], Vector]
TrStatus = Literal[
    "interior_newton",
    "boundary_cg",
    "boundary_negcurv",
    "curvature_fallback",
    "truncated",
]

CURVATURE_GUARD = 1e-12
INTERIOR_MARGIN = 1e-8
# Inner products below this fraction of ‖g‖‖v‖ count as orthogonal.
ORTHOGONALITY_TOL = 1e-10
LANCZOS_STREAM = 2


def lanczos_seeds(seed: int) -> Iterator[int]:
    """Per-call Lanczos seeds of one run, on their own stream of the run seed."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, LANCZOS_STREAM]))
    while True:
        yield int(rng.integers(0, 2**32))


@dataclass(frozen=True)
class TrStep:
    """Approximate trust-region step with its model decrease m(0) − m(d)."""

    d: Vector
    model_decrease: float
    status: TrStatus


@dataclass(frozen=True)
class EigEstimate:
    """Smallest Ritz pair; ``residual`` is ‖Bv − λv‖ from the Lanczos recurrence."""

    lambda_min: float
    v: Vector
    residual: float
    iterations: int = 0

    @property
    def certified(self) -> float:
        """Conservative lower estimate λ̂ − residual."""
        return self.lambda_min - self.residual


def _boundary_root(d: Vector, p: Vector, delta: float) -> float:
    # Positive τ with ‖d + τp‖ = δ.
    pp = float(p @ p)
    dp = float(d @ p)
    slack = max(delta**2 - float(d @ d), 0.0)
    return (-dp + math.sqrt(dp * dp + pp * slack)) / pp


def orient_descent(v: Vector, grad: Vector) -> Vector:
    """
    Return ±v so that ⟨grad, ±v⟩ ≤ 0.

    Numerically orthogonal pairs keep the + sign.
    """
    inner = float(grad @ v)
    scale = ORTHOGONALITY_TOL * float(np.linalg.norm(grad) * np.linalg.norm(v))
    if inner > scale:
        return -v
    return v


def steihaug_cg(
    grad: Vector, bop: MatVec, delta: float, eps: float, max_iter: int
) -> TrStep:
    """
    Steihaug's truncated conjugate gradient method for min ⟨g, d⟩ + ½⟨Bd, d⟩, ‖d‖ ≤ δ.

    Leaves through the boundary on nonpositive curvature or when the next CG
    iterate would cross it. The model value is tracked through the CG residual
    (m(d) = ½⟨g + r, d⟩), so no extra operator products are spent on it.

    :param grad: Model gradient g.
    :param bop: Symmetric operator v ↦ Bv.
    :param delta: Trust-region radius.
    :param eps: Stop when the CG residual ‖g + Bd‖ drops to ``eps``.
    :param max_iter: CG iteration budget.
    :return: The step, its model decrease, and how CG terminated.
    """
    if not delta > 0 or not eps > 0:
        raise ValueError("delta and eps must be positive.")
    d = np.zeros_like(grad)
    res = grad.copy()
    if np.linalg.norm(res) <= eps:
        return TrStep(d=d, model_decrease=0.0, status="interior_newton")

    p = -res
    rr = float(res @ res)
    status: TrStatus = "truncated"
    for _ in range(max_iter):
        bp = bop(p)
        curvature = float(p @ bp)
        # negative curvature: go to the boundary along p
        if curvature <= 0:
            tau = _boundary_root(d, p, delta)
            d, res = d + tau * p, res + tau * bp
            status = "boundary_negcurv"
            break
        alpha = rr / curvature
        d_next = d + alpha * p
        if np.linalg.norm(d_next) >= delta:
            tau = _boundary_root(d, p, delta)
            d, res = d + tau * p, res + tau * bp
            status = "boundary_cg"
            break
        d, res = d_next, res + alpha * bp
        rr_next = float(res @ res)
        if math.sqrt(rr_next) <= eps:
            inside = np.linalg.norm(d) < delta * (1 - INTERIOR_MARGIN)
            status = "interior_newton" if inside else "boundary_cg"
            break
        p = -res + (rr_next / rr) * p
        rr = rr_next

    # res = g + Bd, so ½⟨g + res, d⟩ = ⟨g, d⟩ + ½⟨d, Bd⟩
    model_value = 0.5 * float((grad + res) @ d)
    return TrStep(d=d, model_decrease=max(-model_value, 0.0), status=status)


def curvature_safeguard(
    step: TrStep,
    grad: Vector,
    bop: MatVec,
    delta: float,
    eig: EigEstimate,
    beta2: float,
) -> TrStep:
    """
    Enforce m(0) − m(d) ≥ β₂(−λ_min)δ² when the model has negative curvature.

    Compares the step against d_c = ±δv (oriented downhill) and keeps whichever
    decreases the model more. Costs one operator product when it triggers.
    """
    lam = eig.certified
    if lam >= 0 or eig.lambda_min >= 0:
        return step
    if step.model_decrease >= beta2 * (-eig.lambda_min) * delta**2:
        return step
    d_c = delta * orient_descent(eig.v, grad)
    decrease_c = -(float(grad @ d_c) + 0.5 * float(d_c @ bop(d_c)))
    if decrease_c > step.model_decrease:
        return TrStep(d=d_c, model_decrease=decrease_c, status="curvature_fallback")
    return step


def truncated_cg(grad: Vector, bop: MatVec, eps: float, max_iter: int) -> Vector:
    """
    Newton-CG direction: CG on Bd = −g without a radius.

    Stops at residual ``eps``. On the first direction of nonpositive curvature
    it returns the current iterate, or −g when that is still zero.
    """
    d = np.zeros_like(grad)
    res = grad.copy()
    if np.linalg.norm(res) <= eps:
        return d
    p = -res
    rr = float(res @ res)
    for _ in range(max_iter):
        bp = bop(p)
        curvature = float(p @ bp)
        if curvature <= 0:
            return -grad if not np.any(d) else d
        alpha = rr / curvature
        d = d + alpha * p
        res = res + alpha * bp
        rr_next = float(res @ res)
        if math.sqrt(rr_next) <= eps:
            break
        p = -res + (rr_next / rr) * p
        rr = rr_next
    return d


def lanczos_min_eig(
    bop: MatVec, dim: int, max_iter: int, tol: float, seed: int
) -> EigEstimate:
    """
    Smallest eigenpair of a symmetric operator by Lanczos with full reorthogonalization.

    The start vector is drawn in the positive orthant from ``seed``. Iteration
    stops once the Ritz residual |β_k s_k| is at most tol·‖B‖_est, when the
    Krylov space becomes invariant, or after min(dim, max_iter) steps. The Ritz
    vector is sign-normalised so its largest-magnitude entry is positive.
    """
    if dim < 1:
        raise ValueError("dim must be positive.")
    rng = np.random.default_rng(seed)
    steps = max(1, min(dim, max_iter))
    basis = np.zeros((dim, steps))
    alphas: list[float] = []
    betas: list[float] = []

    q = np.abs(rng.standard_normal(dim)) + 1e-3
    q /= np.linalg.norm(q)
    beta = 0.0
    q_prev = np.zeros(dim)
    theta, coeffs, residual = 0.0, np.ones(1), math.inf

    for k in range(steps):
        basis[:, k] = q
        w = bop(q)
        alpha = float(q @ w)
        alphas.append(alpha)
        w = w - alpha * q - beta * q_prev
        w -= basis[:, : k + 1] @ (basis[:, : k + 1].T @ w)
        beta = float(np.linalg.norm(w))

        if k == 0:
            theta, coeffs = alpha, np.ones(1)
        else:
            evals, evecs = eigh_tridiagonal(
                np.array(alphas), np.array(betas), select="i", select_range=(0, 0)
            )
            theta, coeffs = float(evals[0]), evecs[:, 0]
        # ‖B‖ is at least the largest |diagonal| of T
        norm_est = max(max(abs(a) for a in alphas), abs(theta), 1e-300)
        residual = abs(beta * float(coeffs[-1]))
        if residual <= tol * norm_est or beta <= 1e-14 * norm_est:
            break
        betas.append(beta)
        q_prev, q = q, w / beta

    size = coeffs.shape[0]
    v = basis[:, :size] @ coeffs
    v /= np.linalg.norm(v)
    if v[int(np.argmax(np.abs(v)))] < 0:
        v = -v
    return EigEstimate(lambda_min=theta, v=v, residual=residual, iterations=size)


class LbfgsBuffer:
    """
    Ring buffer of curvature pairs for the L-BFGS two-loop recursion.

    Pairs with ⟨s, y⟩ ≤ 1e-12‖s‖‖y‖ are rejected.
    """

    def __init__(self, capacity: int = 5) -> None:
        if capacity < 1:
            raise ValueError("L-BFGS capacity must be positive.")
        self.capacity = capacity
        self.pairs: Deque[tuple[Vector, Vector, float]] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.pairs)

    def push(self, s: Vector, y: Vector) -> bool:
        sy = float(s @ y)
        if sy <= CURVATURE_GUARD * float(np.linalg.norm(s) * np.linalg.norm(y)):
            return False
        self.pairs.append((s.copy(), y.copy(), 1.0 / sy))
        return True

    def clear(self) -> None:
        self.pairs.clear()


def lbfgs_direction(buffer: LbfgsBuffer, grad: Vector) -> Vector:
    """Two-loop recursion −H g, initial scaling ⟨s,y⟩/⟨y,y⟩ of the newest pair."""
    if not buffer.pairs:
        return -grad
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(buffer.pairs):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    s_new, y_new, _ = buffer.pairs[-1]
    q *= float(s_new @ y_new) / float(y_new @ y_new)
    for (s, y, rho), a in zip(buffer.pairs, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q
