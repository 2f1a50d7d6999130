import math

import numpy as np
import pytest
from pydantic import ValidationError
from pytest_mock import MockerFixture

from saddlefree.core import ntra
from saddlefree.core.errors import SubsolverContractError
from saddlefree.core.fbe import GenHessOp, fbe_eval, fbe_grad
from saddlefree.core.ntra import (
    NtraConfig,
    cg_tolerance,
    ntra_solve,
    ntra_step,
    update_radius,
)
from saddlefree.core.problems import is_near_any, phase_retrieval, sparse_pca, toy_box
from saddlefree.core.subsolvers import TrStep, lanczos_min_eig


@pytest.mark.ntra
def test_radius_grows_on_very_successful_steps() -> None:
    assert update_radius(0.9, 2.0, NtraConfig()) == pytest.approx(3.0)


@pytest.mark.ntra
def test_radius_shrinks_on_rejected_steps() -> None:
    assert update_radius(0.3, 2.0, NtraConfig()) == pytest.approx(0.7)


@pytest.mark.ntra
def test_radius_kept_on_successful_steps() -> None:
    assert update_radius(0.6, 2.0, NtraConfig()) == 2.0


@pytest.mark.ntra
def test_radius_is_capped() -> None:
    config = NtraConfig(delta0=1.0, delta_max=2.0)
    assert update_radius(0.95, 1.8, config) == 2.0


@pytest.mark.ntra
def test_config_rejects_bad_orderings() -> None:
    with pytest.raises(ValidationError, match="mu1 < mu2"):
        NtraConfig(mu1=0.8, mu2=0.7)
    with pytest.raises(ValidationError, match="c1 < c2"):
        NtraConfig(c3=0.9)
    with pytest.raises(ValidationError):
        NtraConfig(delta0=-1.0)


@pytest.mark.ntra
def test_cg_tolerance_schedule() -> None:
    assert cg_tolerance(np.array([4.0, -1.0])) == pytest.approx(2.0)
    assert cg_tolerance(np.array([0.01, 0.0])) == pytest.approx(1e-3)
    assert cg_tolerance(np.zeros(3)) > 0


@pytest.mark.ntra
def test_step_on_exact_quadratic_model() -> None:
    # Setup: inside the box the envelope of the first toy is exactly −1.5‖x‖²
    problem = toy_box("quadratic_box")
    state = fbe_eval(np.array([0.5, 0.2]), 0.25, problem.smooth, problem.nonsmooth)
    op = GenHessOp(state, problem.smooth, problem.nonsmooth)
    grad = fbe_grad(state, problem.smooth)
    eig = lanczos_min_eig(op, 2, 2, 1e-10, 0)
    config = NtraConfig()

    # Action
    outcome = ntra_step(
        state,
        op,
        0.1,
        config,
        grad=grad,
        eig=eig,
        smooth=problem.smooth,
        nonsmooth=problem.nonsmooth,
    )

    # Assert
    assert outcome.rho == pytest.approx(1.0, abs=1e-8)
    assert outcome.accepted
    assert outcome.delta == pytest.approx(0.15)
    assert np.linalg.norm(outcome.candidate - state.x) == pytest.approx(0.1)
    assert outcome.step.status == "boundary_negcurv"


@pytest.mark.ntra
def test_rejected_step_keeps_the_iterate(mocker: MockerFixture) -> None:
    # Setup: a model that promises far more than the envelope delivers
    problem = toy_box("quadratic_box")
    state = fbe_eval(np.array([0.5, 0.2]), 0.25, problem.smooth, problem.nonsmooth)
    op = GenHessOp(state, problem.smooth, problem.nonsmooth)
    eig = lanczos_min_eig(op, 2, 2, 1e-10, 0)
    mocker.patch.object(
        ntra,
        "steihaug_cg",
        return_value=TrStep(
            d=np.array([0.01, 0.0]), model_decrease=100.0, status="interior_newton"
        ),
    )

    # Action
    outcome = ntra_step(
        state,
        op,
        1.0,
        NtraConfig(),
        grad=fbe_grad(state, problem.smooth),
        eig=eig,
        smooth=problem.smooth,
        nonsmooth=problem.nonsmooth,
    )

    # Assert
    assert not outcome.accepted
    np.testing.assert_array_equal(outcome.candidate, state.x)
    assert outcome.delta == pytest.approx(0.35)


@pytest.mark.ntra
def test_step_without_model_decrease_violates_contract() -> None:
    problem = toy_box("quadratic_box")
    state = fbe_eval(np.array([1.0, 1.0]), 0.25, problem.smooth, problem.nonsmooth)
    op = GenHessOp(state, problem.smooth, problem.nonsmooth)
    eig = lanczos_min_eig(op, 2, 2, 1e-10, 0)

    with pytest.raises(SubsolverContractError, match="subsolver contract violated"):
        ntra_step(
            state,
            op,
            1.0,
            NtraConfig(),
            grad=fbe_grad(state, problem.smooth),
            eig=eig,
            smooth=problem.smooth,
            nonsmooth=problem.nonsmooth,
        )


@pytest.mark.ntra
def test_escapes_saddle_of_quadratic_toy() -> None:
    problem = toy_box("quadratic_box")

    report = ntra_solve(problem, x0=np.array([0.1, 0.0]))

    assert report.status == "second_order_stationary"
    assert report.final_point is not None
    assert is_near_any(np.array(report.final_point), [[1.0, 1.0]], 1e-6)
    assert report.certificate is not None
    assert report.certificate.lambda_min_estimate >= -1e-10


@pytest.mark.ntra
def test_escapes_saddle_of_l1_toy() -> None:
    problem = toy_box("l1_box")
    assert problem.reference is not None

    report = ntra_solve(problem, NtraConfig(store_trajectory=True), x0=np.array([-0.4, 0.0]))

    assert report.status == "second_order_stationary"
    assert report.final_point is not None
    assert is_near_any(np.array(report.final_point), problem.reference.minimizers, 1e-6)
    # rejected steps never move the iterate
    assert report.trajectory is not None
    assert any(not point.accepted for point in report.trajectory)


@pytest.mark.ntra
def test_accepted_steps_never_increase_the_envelope() -> None:
    report = ntra_solve(
        toy_box("quadratic_box"),
        NtraConfig(store_trajectory=True),
        x0=np.array([0.1, 0.0]),
    )
    assert report.trajectory is not None
    fbe = [point.fbe for point in report.trajectory]
    assert all(b <= a + 1e-12 for a, b in zip(fbe, fbe[1:]))


@pytest.mark.ntra
def test_stops_immediately_at_a_minimizer() -> None:
    report = ntra_solve(toy_box("quadratic_box"), x0=np.array([1.0, 1.0]))
    assert report.iterations == 0
    assert report.status == "second_order_stationary"


@pytest.mark.ntra
def test_budget_exhaustion_is_reported() -> None:
    report = ntra_solve(
        toy_box("quadratic_box"), NtraConfig(max_iter=1), x0=np.array([0.1, 0.0])
    )
    assert report.status == "budget_exhausted"
    assert report.iterations == 1


@pytest.mark.ntra
def test_sparse_pca_run_is_deterministic_and_counted() -> None:
    problem = sparse_pca(15, seed=2)

    first = ntra_solve(problem, seed=5)
    second = ntra_solve(problem, seed=5)

    assert first.canonical() == second.canonical()
    assert first.counters.hvp_f > 0
    assert first.counters.total_calls() > 0
    assert first.final_phi is not None


@pytest.mark.ntra
def test_escapes_from_the_exact_saddle() -> None:
    # Setup: r = 0 at (1, 0), only the curvature safeguard can move the iterate
    problem = toy_box("quadratic_box")
    assert problem.reference is not None

    # Action
    report = ntra_solve(problem, x0=np.array([1.0, 0.0]))

    # Assert
    assert report.status == "second_order_stationary"
    assert report.iterations >= 1
    assert report.final_point is not None
    assert is_near_any(np.array(report.final_point), problem.reference.minimizers, 1e-6)


@pytest.mark.ntra
def test_certificate_holds_for_a_fresh_lanczos_start() -> None:
    # Setup
    problem = sparse_pca(12, seed=3)
    report = ntra_solve(problem, seed=4)
    assert report.status == "second_order_stationary"
    assert report.final_point is not None and report.gamma is not None
    assert report.lambda_min_estimate is not None
    state = fbe_eval(
        np.array(report.final_point), report.gamma, problem.smooth, problem.nonsmooth
    )
    op = GenHessOp(state, problem.smooth, problem.nonsmooth)

    # Action
    eig = lanczos_min_eig(op, problem.dim, problem.dim, 1e-8, seed=987654)

    # Assert
    assert eig.certified >= -1e-6
    assert eig.lambda_min == pytest.approx(report.lambda_min_estimate, abs=1e-6)


@pytest.mark.ntra
def test_step_failing_the_upper_bound_is_rejected(mocker: MockerFixture) -> None:
    # Setup: the exact model step of the interior toy, with the bound test failing
    problem = toy_box("quadratic_box")
    state = fbe_eval(np.array([0.5, 0.2]), 0.25, problem.smooth, problem.nonsmooth)
    op = GenHessOp(state, problem.smooth, problem.nonsmooth)
    eig = lanczos_min_eig(op, 2, 2, 1e-10, 0)
    mocker.patch.object(ntra, "bounded_trial", return_value=None)

    # Action
    outcome = ntra_step(
        state,
        op,
        0.2,
        NtraConfig(),
        grad=fbe_grad(state, problem.smooth),
        eig=eig,
        smooth=problem.smooth,
        nonsmooth=problem.nonsmooth,
    )

    # Assert
    assert not outcome.accepted
    assert outcome.rho == -math.inf
    np.testing.assert_array_equal(outcome.candidate, state.x)
    assert outcome.delta == pytest.approx(0.07)


@pytest.mark.ntra
def test_phase_retrieval_iterates_stay_near_the_ball() -> None:
    # Setup
    problem = phase_retrieval(10, 80, seed=3)

    # Action
    report = ntra_solve(problem, NtraConfig(store_trajectory=True), seed=3)

    # Assert
    assert report.status == "second_order_stationary"
    assert report.trajectory is not None
    assert max(np.linalg.norm(point.x) for point in report.trajectory) <= 10.0
    assert report.residual_inf is not None and report.residual_inf <= 1e-10
