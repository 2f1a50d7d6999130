"""
Runtime invariant suite behind ``saddlefree check``.

Every check returns a ``CheckResult`` instead of raising, so one broken
invariant does not hide the others.
"""

import math
from functools import partial
from typing import Callable, List, Optional

import numpy as np
from pydantic import BaseModel

from saddlefree.core.baselines import pgm_solve
from saddlefree.core.fbe import (
    ADAPT_ALPHA,
    FbeState,
    GenHessOp,
    adapt_gamma,
    fbe_eval,
    fbe_grad,
    genhess_vp,
    roundoff_slack,
)
from saddlefree.core.ntra import NtraConfig, ntra_solve
from saddlefree.core.oracles import Vector, estimate_lipschitz
from saddlefree.core.pgcl import PgclConfig, pgcl_solve
from saddlefree.core.problems import (
    ProblemInstance,
    is_near_any,
    phase_retrieval,
    sparse_pca,
    toy_box,
)
from saddlefree.core.prox import (
    ProxSpec,
    kink_distance,
    proj_ball,
    proj_box,
    prox_apply,
    prox_jvp,
    prox_value,
)
from saddlefree.core.report import RunReport
from saddlefree.core.subsolvers import (
    LbfgsBuffer,
    lanczos_min_eig,
    lbfgs_direction,
    steihaug_cg,
)
from saddlefree.utils.create_test_helpers import (
    central_difference,
    dense_operator,
    densify,
    directional_difference,
    random_spd,
    random_symmetric,
    scaled_error,
)

KINK_MARGIN = 1e-3
FD_STEP = 1e-6
# B is formed column by column only up to this dimension
DENSE_DIM_LIMIT = 16


class CheckResult(BaseModel):
    name: str
    target: str
    passed: bool
    worst: Optional[float] = None
    detail: str = ""


def shipped_problems(seed: int = 0) -> List[ProblemInstance]:
    """Small instances of every shipped problem family."""
    return [
        toy_box("quadratic_box"),
        toy_box("l1_box"),
        sparse_pca(20, seed=seed),
        phase_retrieval(8, 64, seed=seed),
    ]


def _guarded(
    name: str, target: str, body: Callable[[], tuple[bool, Optional[float], str]]
) -> CheckResult:
    try:
        passed, worst, detail = body()
    except Exception as e:
        return CheckResult(name=name, target=target, passed=False, detail=str(e))
    return CheckResult(
        name=name, target=target, passed=passed, worst=worst, detail=detail
    )


def _sample_points(dim: int, rng: np.random.Generator, count: int) -> List[Vector]:
    # uniform in the ball of radius 1.2, so some points sit outside dom g
    points = []
    for _ in range(count):
        u = rng.standard_normal(dim)
        u /= np.linalg.norm(u)
        points.append(1.2 * rng.random() ** (1.0 / dim) * u)
    return points


def _dense_hessian_norm(problem: ProblemInstance, x: Vector) -> float:
    hess = densify(lambda v: problem.smooth.hvp(x, v), problem.dim)
    return float(np.linalg.norm(hess, 2))


def _local_stepsize(problem: ProblemInstance, x: Vector) -> float:
    """0.9/L with the global hint when there is one, else a local curvature bound."""
    hint = problem.smooth.lipschitz_hint
    if hint:
        return 0.9 / hint
    local = max(estimate_lipschitz(problem.smooth, x, 0), _dense_hessian_norm(problem, x))
    return 0.9 / local


def _spec(problem: ProblemInstance) -> ProxSpec:
    spec = getattr(problem.nonsmooth, "spec", None)
    if not isinstance(spec, ProxSpec):
        raise TypeError("Kink checks need a ProxSpec-backed nonsmooth term.")
    return spec


def _kink_free(problem: ProblemInstance, state: FbeState) -> bool:
    return kink_distance(_spec(problem), state.y, state.gamma) >= KINK_MARGIN


def check_envelope_bounds(
    problem: ProblemInstance, rng: np.random.Generator, count: int = 200
) -> CheckResult:
    """φ_γ ≤ φ on dom g and φ(x̄) ≤ φ_γ(x) − c‖x − x̄‖² everywhere."""

    def body() -> tuple[bool, Optional[float], str]:
        worst = -math.inf
        for x in _sample_points(problem.dim, rng, count):
            hint = problem.smooth.lipschitz_hint
            if hint:
                gamma = 0.9 / hint
                state = fbe_eval(x, gamma, problem.smooth, problem.nonsmooth)
                coeff = (1.0 - gamma * hint) / (2.0 * gamma)
            else:
                gamma, state = adapt_gamma(
                    x, _local_stepsize(problem, x), problem.smooth, problem.nonsmooth
                )
                coeff = (1.0 - ADAPT_ALPHA) / (2.0 * gamma)
            phi_x = problem.phi(x)
            tol = 1e-9 * max(1.0, abs(state.fbe))
            if math.isfinite(phi_x):
                worst = max(worst, state.fbe - phi_x - tol)
            step = state.xbar - state.x
            phi_bar = problem.phi(state.xbar)
            worst = max(worst, phi_bar - state.fbe + coeff * float(step @ step) - tol)
        return worst <= 0, worst, ""

    return _guarded("envelope bounds", problem.name, body)


def check_envelope_gradient(
    problem: ProblemInstance, rng: np.random.Generator, count: int = 50
) -> CheckResult:
    """∇φ_γ against central differences of φ_γ at kink-free points."""

    def body() -> tuple[bool, Optional[float], str]:
        worst, tested = 0.0, 0
        for x in _sample_points(problem.dim, rng, count):
            gamma = _local_stepsize(problem, x)
            state = fbe_eval(x, gamma, problem.smooth, problem.nonsmooth)
            if not _kink_free(problem, state):
                continue
            fd = central_difference(
                lambda z: fbe_eval(z, gamma, problem.smooth, problem.nonsmooth).fbe,
                x,
                FD_STEP,
            )
            worst = max(worst, scaled_error(fbe_grad(state, problem.smooth), fd))
            tested += 1
        return tested > 0 and worst <= 1e-5, worst, f"{tested} points"

    return _guarded("envelope gradient", problem.name, body)


def check_exact_hessian(
    problem: ProblemInstance, rng: np.random.Generator, count: int = 50
) -> CheckResult:
    """For quadratic f, Bv equals the derivative of ∇φ_γ along v."""

    def body() -> tuple[bool, Optional[float], str]:
        worst, tested = 0.0, 0
        for x in _sample_points(problem.dim, rng, count):
            gamma = _local_stepsize(problem, x)
            state = fbe_eval(x, gamma, problem.smooth, problem.nonsmooth)
            if not _kink_free(problem, state):
                continue
            v = rng.standard_normal(problem.dim)
            v /= np.linalg.norm(v)
            op = GenHessOp(state, problem.smooth, problem.nonsmooth)
            fd = directional_difference(
                lambda z: fbe_grad(
                    fbe_eval(z, gamma, problem.smooth, problem.nonsmooth),
                    problem.smooth,
                ),
                x,
                v,
                FD_STEP,
            )
            worst = max(worst, scaled_error(genhess_vp(op, v), fd))
            tested += 1
        return tested > 0 and worst <= 1e-4, worst, f"{tested} points"

    return _guarded("exact hessian", problem.name, body)


def check_operator_bound(
    problem: ProblemInstance, rng: np.random.Generator, count: int = 20
) -> CheckResult:
    """
    ‖B‖ ≤ 6/γ for γ below the inverse local curvature.

    ‖B‖ is exact up to dimension 16 and a power-iteration estimate above.
    """

    def body() -> tuple[bool, Optional[float], str]:
        worst = -math.inf
        for x in _sample_points(problem.dim, rng, count):
            gamma = 0.9 / max(
                problem.smooth.lipschitz_hint or 0.0, _dense_hessian_norm(problem, x)
            )
            state = fbe_eval(x, gamma, problem.smooth, problem.nonsmooth)
            op = GenHessOp(state, problem.smooth, problem.nonsmooth)
            if problem.dim <= DENSE_DIM_LIMIT:
                norm = float(np.linalg.norm(densify(op, problem.dim), 2))
            else:
                norm = _power_norm(op, problem.dim, rng)
            worst = max(worst, norm - 6.0 / gamma)
        return worst <= 1e-6, worst, ""

    return _guarded("operator bound", problem.name, body)


def _power_norm(
    op: Callable[[Vector], Vector], dim: int, rng: np.random.Generator, iters: int = 200
) -> float:
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    norm = 0.0
    for _ in range(iters):
        w = op(v)
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        v = w / norm
    return norm


def check_symmetry(
    problem: ProblemInstance, rng: np.random.Generator, count: int = 20
) -> CheckResult:
    """Symmetry of the Hessian-vector product and of B at kink-free points."""

    def body() -> tuple[bool, Optional[float], str]:
        worst = 0.0
        for x in _sample_points(problem.dim, rng, count):
            u = rng.standard_normal(problem.dim)
            v = rng.standard_normal(problem.dim)
            hu, hv = problem.smooth.hvp(x, u), problem.smooth.hvp(x, v)
            scale = max(
                1.0,
                float(np.linalg.norm(hu) * np.linalg.norm(v)),
                float(np.linalg.norm(hv) * np.linalg.norm(u)),
            )
            worst = max(worst, abs(float(hu @ v) - float(u @ hv)) / scale / 1e-10)

            gamma = _local_stepsize(problem, x)
            state = fbe_eval(x, gamma, problem.smooth, problem.nonsmooth)
            if not _kink_free(problem, state):
                continue
            op = GenHessOp(state, problem.smooth, problem.nonsmooth)
            bu, bv = op(u), op(v)
            scale = max(
                1.0,
                float(np.linalg.norm(bu) * np.linalg.norm(v)),
                float(np.linalg.norm(bv) * np.linalg.norm(u)),
            )
            worst = max(worst, abs(float(bu @ v) - float(u @ bv)) / scale / 1e-8)
        # worst is measured in units of the respective tolerance
        return worst <= 1.0, worst, ""

    return _guarded("symmetry", problem.name, body)


def check_oracle_derivatives(
    problem: ProblemInstance, rng: np.random.Generator, count: int = 5
) -> CheckResult:
    """∇f and ∇²f·v against finite differences at random points."""

    def body() -> tuple[bool, Optional[float], str]:
        grad_err = hvp_err = 0.0
        for x in _sample_points(problem.dim, rng, count):
            fd = central_difference(problem.smooth.value, x, FD_STEP)
            grad_err = max(grad_err, scaled_error(problem.smooth.grad(x), fd))
            v = rng.standard_normal(problem.dim)
            fd_h = directional_difference(problem.smooth.grad, x, v, FD_STEP)
            hvp_err = max(hvp_err, scaled_error(problem.smooth.hvp(x, v), fd_h))
        passed = grad_err <= 1e-5 and hvp_err <= 1e-4
        return passed, max(grad_err, hvp_err), f"grad {grad_err:.2e}, hvp {hvp_err:.2e}"

    return _guarded("oracle derivatives", problem.name, body)


PROX_SPECS = {
    "l1": ProxSpec.l1(0.3),
    "box": ProxSpec.box(-1.0, 1.0),
    "ball": ProxSpec.ball(1.0),
    "l1_ball": ProxSpec.l1_ball(0.3, 1.0),
    "l1_box": ProxSpec.l1_box([1.0, 0.0, 0.5], -1.0, 1.0),
}


def _feasible(spec: ProxSpec, z: Vector) -> Vector:
    if spec.kind in ("box", "l1_box"):
        return proj_box(z, *spec.bounds())
    if spec.kind in ("ball", "l1_ball"):
        assert spec.radius is not None
        return proj_ball(z, spec.radius)
    return z


def check_prox(
    label: str, spec: ProxSpec, rng: np.random.Generator, count: int = 20
) -> CheckResult:
    """Optimality against random candidates, nonexpansiveness, Jacobian bounds and differences."""
    dim = 3

    def body() -> tuple[bool, Optional[float], str]:
        optimality = jac_fd = 0.0
        nonexpansive = True
        for _ in range(count):
            y = 2.0 * rng.standard_normal(dim)
            gamma = float(rng.uniform(0.05, 2.0))
            p = prox_apply(spec, y, gamma)

            def objective(z: Vector) -> float:
                return prox_value(spec, z) + float((z - y) @ (z - y)) / (2.0 * gamma)

            best = objective(p)
            scales = 10.0 ** rng.uniform(-6, 0, size=1000)
            for scale in scales:
                z = _feasible(spec, p + scale * rng.standard_normal(dim))
                optimality = max(optimality, best - objective(z))

            y2 = y + rng.standard_normal(dim)
            gap = np.linalg.norm(prox_apply(spec, y, gamma) - prox_apply(spec, y2, gamma))
            nonexpansive &= bool(gap <= np.linalg.norm(y - y2) * (1 + 1e-12) + 1e-15)
            v = rng.standard_normal(dim)
            jv = prox_jvp(spec, y, gamma, v)
            nonexpansive &= bool(np.linalg.norm(jv) <= np.linalg.norm(v) * (1 + 1e-12))
            if kink_distance(spec, y, gamma) >= KINK_MARGIN:
                fd = directional_difference(
                    lambda z: prox_apply(spec, z, gamma), y, v, FD_STEP
                )
                jac_fd = max(jac_fd, scaled_error(jv, fd))

        x = 3.0 * rng.standard_normal(dim)
        idempotent = True
        if spec.kind in ("box", "ball"):
            once = _feasible(spec, x)
            idempotent = bool(np.array_equal(_feasible(spec, once), once))
        passed = optimality <= 1e-10 and jac_fd <= 1e-4 and nonexpansive and idempotent
        detail = f"optimality gap {optimality:.2e}, jacobian {jac_fd:.2e}"
        return passed, max(optimality, jac_fd), detail

    return _guarded("prox", label, body)


def check_subsolvers(rng: np.random.Generator) -> List[CheckResult]:
    """Steihaug, Lanczos and L-BFGS against dense linear algebra."""

    def steihaug() -> tuple[bool, Optional[float], str]:
        worst = 0.0
        for dim in (4, 8):
            hess = random_spd(dim, rng)
            grad = rng.standard_normal(dim)
            step = steihaug_cg(grad, dense_operator(hess), 1e6, 1e-12, 10 * dim)
            worst = max(worst, scaled_error(step.d, -np.linalg.solve(hess, grad)))
            indefinite = random_symmetric(dim, rng)
            step = steihaug_cg(grad, dense_operator(indefinite), 1.0, 1e-12, 10 * dim)
            model = float(grad @ step.d) + 0.5 * float(step.d @ indefinite @ step.d)
            if np.linalg.norm(step.d) > 1.0 + 1e-12:
                return False, None, "step left the trust region"
            if abs(-model - step.model_decrease) > 1e-10 or step.model_decrease < 0:
                return False, None, "model decrease misreported"
        return worst <= 1e-6, worst, ""

    def lanczos() -> tuple[bool, Optional[float], str]:
        worst = 0.0
        for dim in (5, 12, 16):
            mat = random_symmetric(dim, rng)
            seed = int(rng.integers(1 << 31))
            eig = lanczos_min_eig(dense_operator(mat), dim, dim, 1e-12, seed)
            exact = float(np.linalg.eigvalsh(mat)[0])
            norm = float(np.linalg.norm(mat, 2))
            worst = max(worst, abs(eig.lambda_min - exact) / norm)
            if eig.lambda_min < exact - 1e-8:
                return False, None, "Ritz value below the smallest eigenvalue"
        return worst <= 1e-8, worst, ""

    def lbfgs() -> tuple[bool, Optional[float], str]:
        dim = 5
        hess = random_spd(dim, rng)
        chol = np.linalg.cholesky(hess)
        steps = np.linalg.solve(chol.T, np.eye(dim))
        buffer = LbfgsBuffer(dim)
        for i in range(dim):
            buffer.push(steps[:, i], hess @ steps[:, i])
        grad = rng.standard_normal(dim)
        d = lbfgs_direction(buffer, grad)
        err = scaled_error(d, -np.linalg.solve(hess, grad))
        return err <= 1e-8 and float(d @ grad) < 0, err, ""

    return [
        _guarded("steihaug", "dense", steihaug),
        _guarded("lanczos", "dense", lanczos),
        _guarded("lbfgs", "dense", lbfgs),
    ]


def _monotone(report: RunReport) -> float:
    """Largest increase of φ_γ over an accepted step, relative to roundoff."""
    worst = -math.inf
    for point in report.trajectory or []:
        if point.fbe_next is None or not point.accepted:
            continue
        worst = max(worst, point.fbe_next - point.fbe - roundoff_slack(point.fbe))
    return worst


def _curvilinear_decrease(report: RunReport, mu: float) -> float:
    worst = -math.inf
    for point in report.trajectory or []:
        if point.fbe_next is None or point.tau is None or point.sigma is None:
            continue
        bound = (
            point.fbe
            - point.sigma * point.residual_sq
            + 0.5 * mu * point.tau**2 * (point.curvature or 0.0)
        )
        worst = max(worst, point.fbe_next - bound - roundoff_slack(point.fbe))
    return worst


TOY_STARTS = {"quadratic_box": (0.1, 0.0), "l1_box": (-0.4, 0.0)}


def _pgm_stalls(
    problem: ProblemInstance, x0: Vector, seed: int
) -> tuple[bool, Optional[float], str]:
    assert problem.reference is not None
    report = pgm_solve(problem, seed=seed, x0=x0)
    assert report.final_point is not None
    near = is_near_any(np.array(report.final_point), problem.reference.saddles, 1e-6)
    return near, None, f"ended at {report.final_point}"


def _ntra_escapes(
    problem: ProblemInstance, x0: Vector, seed: int
) -> tuple[bool, Optional[float], str]:
    report = ntra_solve(problem, NtraConfig(store_trajectory=True), seed=seed, x0=x0)
    return _second_order_ok(problem, report, _monotone(report))


def _pgcl_escapes(
    problem: ProblemInstance, x0: Vector, seed: int
) -> tuple[bool, Optional[float], str]:
    config = PgclConfig(store_trajectory=True)
    report = pgcl_solve(problem, config, seed=seed, x0=x0)
    return _second_order_ok(problem, report, _curvilinear_decrease(report, config.mu))


def _second_order_ok(
    problem: ProblemInstance, report: RunReport, decrease_worst: float
) -> tuple[bool, Optional[float], str]:
    assert problem.reference is not None and report.final_point is not None
    near = is_near_any(
        np.array(report.final_point), problem.reference.minimizers, 1e-6
    )
    certified = (
        report.certificate is not None
        and report.certificate.lambda_min_estimate >= -1e-10
    )
    ok = (
        report.status == "second_order_stationary"
        and near
        and certified
        and decrease_worst <= 0
    )
    return ok, decrease_worst, f"ended at {report.final_point}"


def check_toy_runs(seed: int = 0) -> List[CheckResult]:
    """Saddle escape on the toys, with decrease properties re-read from trajectories."""
    runs = [
        ("pgm stops at a saddle", _pgm_stalls),
        ("ntra escapes", _ntra_escapes),
        ("pgcl escapes", _pgcl_escapes),
    ]
    results = []
    for variant, start in TOY_STARTS.items():
        problem = toy_box(variant)
        x0 = np.array(start)
        for name, run in runs:
            results.append(_guarded(name, problem.name, partial(run, problem, x0, seed)))
    return results


def check_lipschitz_estimates(seed: int = 0) -> List[CheckResult]:
    def toy() -> tuple[bool, Optional[float], str]:
        estimate = estimate_lipschitz(toy_box("quadratic_box").smooth, np.zeros(2), seed)
        return abs(estimate - 2.0) <= 2e-6, estimate, ""

    def pca() -> tuple[bool, Optional[float], str]:
        problem = sparse_pca(20, seed=seed)
        rng = np.random.default_rng(seed)
        x0 = rng.standard_normal(problem.dim)
        estimate = estimate_lipschitz(problem.smooth, x0, seed)
        power = _power_norm(lambda v: problem.smooth.hvp(x0, v), problem.dim, rng, 500)
        return abs(estimate - power) <= 0.05 * power, estimate, f"power {power:.6g}"

    return [
        _guarded("lipschitz estimate", "toy-quadratic_box", toy),
        _guarded("lipschitz estimate", "sparse-pca-n20", pca),
    ]


def run_checks(seed: int = 0) -> List[CheckResult]:
    """Run the whole suite on the shipped problems."""
    rng = np.random.default_rng(seed)
    results: List[CheckResult] = []
    for problem in shipped_problems(seed):
        results.append(check_envelope_bounds(problem, rng))
        results.append(check_envelope_gradient(problem, rng))
        results.append(check_operator_bound(problem, rng))
        results.append(check_symmetry(problem, rng))
        if problem.descriptor.kind != "toy":
            results.append(check_oracle_derivatives(problem, rng))
        if problem.descriptor.kind == "sparse_pca":
            results.append(check_exact_hessian(problem, rng))
    for label, spec in PROX_SPECS.items():
        results.append(check_prox(label, spec, rng))
    results.extend(check_subsolvers(rng))
    results.extend(check_lipschitz_estimates(seed))
    results.extend(check_toy_runs(seed))
    return results
