import math

import numpy as np
import pytest
from pydantic import ValidationError
from pytest_mock import MockerFixture

from saddlefree.core import pgcl
from saddlefree.core.fbe import GenHessOp, fbe_eval, fbe_grad, roundoff_slack
from saddlefree.core.pgcl import (
    DirectionPair,
    PgclConfig,
    pgcl_directions,
    pgcl_linesearch,
    pgcl_solve,
)
from saddlefree.core.problems import is_near_any, phase_retrieval, toy_box
from saddlefree.core.subsolvers import LbfgsBuffer, lanczos_min_eig


def _interior_model():  # type: ignore[no-untyped-def]
    problem = toy_box("quadratic_box")
    state = fbe_eval(np.array([0.5, 0.2]), 0.25, problem.smooth, problem.nonsmooth)
    op = GenHessOp(state, problem.smooth, problem.nonsmooth)
    eig = lanczos_min_eig(op, 2, 2, 1e-10, 0)
    return problem, state, op, fbe_grad(state, problem.smooth), eig


@pytest.mark.pgcl
def test_config_validates_unit_interval_parameters() -> None:
    with pytest.raises(ValidationError, match="strictly between 0 and 1"):
        PgclConfig(beta=1.0)
    with pytest.raises(ValidationError):
        PgclConfig(sbar=0.0)
    with pytest.raises(ValidationError):
        PgclConfig(direction_mode="bfgs")  # type: ignore[arg-type]


@pytest.mark.pgcl
def test_negative_curvature_direction_is_scaled() -> None:
    # Setup: B = −3I and ∇φ_γ = (−1.5, −0.6)
    _, state, op, grad, eig = _interior_model()
    config = PgclConfig(sbar=1.0)

    # Action
    pair = pgcl_directions(state, op, config, grad_bar=grad, eig=eig)

    # Assert
    scale = math.sqrt(3.0) / float(np.linalg.norm(grad))
    assert np.linalg.norm(pair.s) == pytest.approx(scale)
    assert pair.curvature == pytest.approx(-3.0 * scale**2)
    assert pair.s_descent and pair.d_descent
    # the first CG direction already has negative curvature
    np.testing.assert_allclose(pair.d, -grad)


@pytest.mark.pgcl
def test_sbar_scales_the_curvature_direction() -> None:
    _, state, op, grad, eig = _interior_model()
    small = pgcl_directions(state, op, PgclConfig(sbar=1e-2), grad_bar=grad, eig=eig)
    large = pgcl_directions(state, op, PgclConfig(sbar=1.0), grad_bar=grad, eig=eig)
    np.testing.assert_allclose(small.s, 1e-2 * large.s)


@pytest.mark.pgcl
def test_no_curvature_direction_at_a_minimizer() -> None:
    problem = toy_box("quadratic_box")
    state = fbe_eval(np.array([1.0, 1.0]), 0.25, problem.smooth, problem.nonsmooth)
    op = GenHessOp(state, problem.smooth, problem.nonsmooth)
    eig = lanczos_min_eig(op, 2, 2, 1e-10, 0)

    pair = pgcl_directions(
        state, op, PgclConfig(), grad_bar=fbe_grad(state, problem.smooth), eig=eig
    )

    np.testing.assert_array_equal(pair.s, np.zeros(2))
    assert pair.curvature == 0.0
    assert pair.is_zero


@pytest.mark.pgcl
def test_lbfgs_direction_mode_uses_the_buffer() -> None:
    _, state, op, grad, eig = _interior_model()
    config = PgclConfig(direction_mode="lbfgs")

    pair = pgcl_directions(state, op, config, grad_bar=grad, eig=eig, buffer=LbfgsBuffer())

    np.testing.assert_array_equal(pair.d, -grad)
    assert pair.d_descent


@pytest.mark.pgcl
def test_linesearch_with_zero_directions_takes_the_backward_point() -> None:
    problem = toy_box("quadratic_box")
    state = fbe_eval(np.array([0.9, 0.9]), 0.25, problem.smooth, problem.nonsmooth)
    state_bar = fbe_eval(state.xbar, 0.25, problem.smooth, problem.nonsmooth)
    pair = DirectionPair(
        d=np.zeros(2), s=np.zeros(2), curvature=0.0, d_descent=True, s_descent=True
    )

    x, tau, trial = pgcl_linesearch(
        state, state_bar, pair, PgclConfig(), 0.01, problem.smooth, problem.nonsmooth
    )

    assert tau == 1.0
    np.testing.assert_array_equal(x, state.xbar)
    assert trial is state_bar


@pytest.mark.pgcl
def test_linesearch_accepts_a_curvilinear_step() -> None:
    problem, state, op, grad, eig = _interior_model()
    state_bar = fbe_eval(state.xbar, 0.25, problem.smooth, problem.nonsmooth)
    config = PgclConfig()
    pair = pgcl_directions(
        state_bar,
        GenHessOp(state_bar, problem.smooth, problem.nonsmooth),
        config,
        grad_bar=fbe_grad(state_bar, problem.smooth),
        eig=eig,
    )
    sigma = 0.01

    x, tau, trial = pgcl_linesearch(
        state, state_bar, pair, config, sigma, problem.smooth, problem.nonsmooth
    )

    bound = (
        state.fbe
        - sigma * state.residual_sq
        + 0.5 * config.mu * tau**2 * pair.curvature
        + roundoff_slack(state.fbe)
    )
    assert 0.0 < tau <= 1.0
    assert trial.fbe <= bound
    np.testing.assert_array_equal(trial.x, x)


@pytest.mark.pgcl
@pytest.mark.parametrize("direction", ["newton_cg", "lbfgs"])
def test_escapes_saddle_of_quadratic_toy(direction: str) -> None:
    report = pgcl_solve(
        toy_box("quadratic_box"),
        PgclConfig(direction_mode=direction),  # type: ignore[arg-type]
        x0=np.array([0.1, 0.0]),
    )

    assert report.status == "second_order_stationary"
    assert report.final_point is not None
    assert is_near_any(np.array(report.final_point), [[1.0, 1.0]], 1e-6)
    assert report.certificate is not None
    assert report.certificate.lambda_min_estimate >= -1e-10


@pytest.mark.pgcl
def test_escapes_saddle_of_l1_toy() -> None:
    problem = toy_box("l1_box")
    assert problem.reference is not None

    report = pgcl_solve(problem, x0=np.array([-0.4, 0.0]))

    assert report.status == "second_order_stationary"
    assert report.final_point is not None
    assert is_near_any(np.array(report.final_point), problem.reference.minimizers, 1e-6)


@pytest.mark.pgcl
def test_trajectory_satisfies_curvilinear_decrease() -> None:
    config = PgclConfig(store_trajectory=True)
    report = pgcl_solve(toy_box("quadratic_box"), config, x0=np.array([0.1, 0.0]))

    assert report.trajectory is not None
    steps = [p for p in report.trajectory if p.fbe_next is not None]
    assert steps
    for point in steps:
        assert point.tau is not None and point.sigma is not None
        bound = (
            point.fbe
            - point.sigma * point.residual_sq
            + 0.5 * config.mu * point.tau**2 * (point.curvature or 0.0)
            + roundoff_slack(point.fbe)
        )
        assert point.fbe_next is not None and point.fbe_next <= bound
    fbe = [point.fbe for point in report.trajectory]
    assert all(b <= a + 1e-12 for a, b in zip(fbe, fbe[1:]))


@pytest.mark.pgcl
def test_stops_immediately_at_a_minimizer() -> None:
    report = pgcl_solve(toy_box("quadratic_box"), x0=np.array([1.0, 1.0]))
    assert report.iterations == 0
    assert report.final_point == [1.0, 1.0]


@pytest.mark.pgcl
def test_phase_retrieval_run_ends_with_a_certificate() -> None:
    problem = phase_retrieval(5, 60, seed=1)

    report = pgcl_solve(problem, seed=1)

    assert report.status in ("second_order_stationary", "budget_exhausted")
    if report.status == "second_order_stationary":
        assert report.residual_inf is not None and report.residual_inf <= 1e-10
        assert report.lambda_min_estimate is not None
        assert report.lambda_min_estimate >= -1e-10


@pytest.mark.pgcl
def test_direction_pair_at_the_exact_saddle() -> None:
    # Setup: at (1, 0) with γ = 0.25, r = 0 and B = diag(6, −3)
    problem = toy_box("quadratic_box")
    state = fbe_eval(np.array([1.0, 0.0]), 0.25, problem.smooth, problem.nonsmooth)
    op = GenHessOp(state, problem.smooth, problem.nonsmooth)
    grad = fbe_grad(state, problem.smooth)
    eig = lanczos_min_eig(op, 2, 2, 1e-10, 0)

    # Action
    pair = pgcl_directions(state, op, PgclConfig(), grad_bar=grad, eig=eig)

    # Assert
    np.testing.assert_allclose(grad, 0.0, atol=1e-12)
    assert eig.lambda_min == pytest.approx(-3.0)
    np.testing.assert_allclose(pair.s, [0.0, math.sqrt(3.0)], atol=1e-8)
    assert pair.curvature == pytest.approx(-9.0)
    np.testing.assert_allclose(pair.d, 0.0)


@pytest.mark.pgcl
@pytest.mark.parametrize("direction", ["newton_cg", "lbfgs"])
def test_escapes_from_the_exact_saddle(direction: str) -> None:
    problem = toy_box("quadratic_box")
    assert problem.reference is not None

    report = pgcl_solve(
        problem, PgclConfig(direction_mode=direction), x0=np.array([1.0, 0.0])
    )

    assert report.status == "second_order_stationary"
    assert report.iterations >= 1
    assert report.final_point is not None
    assert is_near_any(np.array(report.final_point), problem.reference.minimizers, 1e-6)


@pytest.mark.pgcl
def test_linesearch_rejects_trials_failing_the_upper_bound(
    mocker: MockerFixture,
) -> None:
    # Setup: a step the envelope test alone would accept
    problem, state, op, grad, eig = _interior_model()
    config = PgclConfig()
    pair = pgcl_directions(state, op, config, grad_bar=grad, eig=eig)
    mocker.patch.object(pgcl, "bounded_trial", return_value=None)

    # Action
    x_next, tau, trial = pgcl_linesearch(
        state, state, pair, config, 0.0, problem.smooth, problem.nonsmooth
    )

    # Assert
    assert tau == 0.0
    np.testing.assert_array_equal(x_next, state.x)
    assert trial is state
