import math

import numpy as np
import pytest

from saddlefree.core.errors import NonFiniteObjectiveError
from saddlefree.core.fbe import (
    ADAPT_ALPHA,
    GenHessOp,
    adapt_gamma,
    bounded_trial,
    fbe_eval,
    fbe_grad,
    genhess_vp,
    initial_stepsize,
    roundoff_slack,
    sufficient_decrease_sigma,
    upper_bound_state,
)
from saddlefree.core.oracles import CallCounters, QuadraticOracle, wrap_counting
from saddlefree.core.problems import (
    ProblemInstance,
    phase_retrieval,
    sparse_pca,
    toy_box,
)
from saddlefree.core.prox import ProxOperator, ProxSpec
from saddlefree.utils.create_test_helpers import (
    central_difference,
    densify,
    directional_difference,
    scaled_error,
)


@pytest.fixture
def toy() -> ProblemInstance:
    return toy_box("quadratic_box")


@pytest.mark.fbe
def test_fbe_at_toy_minimizer_equals_objective(toy: ProblemInstance) -> None:
    state = fbe_eval(np.array([1.0, 1.0]), 0.25, toy.smooth, toy.nonsmooth)
    np.testing.assert_array_equal(state.xbar, [1.0, 1.0])
    np.testing.assert_array_equal(state.r, [0.0, 0.0])
    assert state.fbe == pytest.approx(-2.0)
    assert state.fbe == pytest.approx(toy.phi(np.array([1.0, 1.0])))


@pytest.mark.fbe
def test_fbe_interior_trace(toy: ProblemInstance) -> None:
    state = fbe_eval(np.array([0.5, 0.2]), 0.25, toy.smooth, toy.nonsmooth)
    np.testing.assert_allclose(state.y, [0.75, 0.3])
    np.testing.assert_allclose(state.xbar, [0.75, 0.3])
    np.testing.assert_allclose(state.r, [-1.0, -0.4])
    # φ_γ = −1.5‖x‖² inside the box
    assert state.fbe == pytest.approx(-1.5 * 0.29)
    assert state.residual_inf == pytest.approx(1.0)
    assert state.residual_sq == pytest.approx(1.16)


@pytest.mark.fbe
def test_fbe_with_zero_nonsmooth_term() -> None:
    rng = np.random.default_rng(0)
    hessian = rng.standard_normal((4, 4))
    smooth = QuadraticOracle(hessian + hessian.T, rng.standard_normal(4))
    nonsmooth = ProxOperator(ProxSpec.l1(0.0), 4)
    x, gamma = rng.standard_normal(4), 0.1

    state = fbe_eval(x, gamma, smooth, nonsmooth)

    grad = smooth.grad(x)
    expected = smooth.value(x) - gamma / 2 * float(grad @ grad)
    assert state.fbe == pytest.approx(expected, rel=1e-12)


@pytest.mark.fbe
def test_fbe_eval_costs_one_call_of_each(toy: ProblemInstance) -> None:
    counters = CallCounters()
    smooth = wrap_counting(toy.smooth, counters)
    nonsmooth = wrap_counting(toy.nonsmooth, counters)

    fbe_eval(np.array([0.3, 0.1]), 0.25, smooth, nonsmooth)

    assert (counters.eval_f, counters.grad_f, counters.prox_g, counters.eval_g) == (
        1,
        1,
        1,
        1,
    )
    assert counters.hvp_f == 0


@pytest.mark.fbe
def test_fbe_eval_rejects_bad_input(toy: ProblemInstance) -> None:
    with pytest.raises(ValueError, match="gamma"):
        fbe_eval(np.zeros(2), 0.0, toy.smooth, toy.nonsmooth)
    with pytest.raises(NonFiniteObjectiveError, match="objective not finite"):
        fbe_eval(np.array([math.inf, 0.0]), 0.25, toy.smooth, toy.nonsmooth)


@pytest.mark.fbe
def test_fbe_grad_trace(toy: ProblemInstance) -> None:
    state = fbe_eval(np.array([0.5, 0.2]), 0.25, toy.smooth, toy.nonsmooth)
    np.testing.assert_allclose(fbe_grad(state, toy.smooth), [-1.5, -0.6])


@pytest.mark.fbe
def test_fbe_grad_vanishes_at_fixed_points(toy: ProblemInstance) -> None:
    state = fbe_eval(np.array([1.0, 0.0]), 0.25, toy.smooth, toy.nonsmooth)
    np.testing.assert_array_equal(fbe_grad(state, toy.smooth), [0.0, 0.0])


@pytest.mark.fbe
def test_fbe_grad_matches_finite_differences() -> None:
    # Setup: points of the sparse PCA instance away from the prox kinks
    problem = sparse_pca(12, seed=4)
    gamma = 0.9 / problem.smooth.lipschitz_hint
    x = np.full(12, 0.05)

    # Action
    state = fbe_eval(x, gamma, problem.smooth, problem.nonsmooth)
    fd = central_difference(
        lambda z: fbe_eval(z, gamma, problem.smooth, problem.nonsmooth).fbe, x
    )

    # Assert
    assert scaled_error(fbe_grad(state, problem.smooth), fd) <= 1e-5


@pytest.mark.fbe
def test_genhess_negative_curvature_inside_box(toy: ProblemInstance) -> None:
    state = fbe_eval(np.array([0.5, 0.2]), 0.25, toy.smooth, toy.nonsmooth)
    op = GenHessOp(state, toy.smooth, toy.nonsmooth)
    np.testing.assert_allclose(genhess_vp(op, np.array([1.0, 0.0])), [-3.0, 0.0])
    np.testing.assert_allclose(densify(op, 2), -3.0 * np.eye(2))


@pytest.mark.fbe
def test_genhess_positive_definite_at_minimizer(toy: ProblemInstance) -> None:
    state = fbe_eval(np.array([1.0, 1.0]), 0.25, toy.smooth, toy.nonsmooth)
    op = GenHessOp(state, toy.smooth, toy.nonsmooth)
    np.testing.assert_allclose(genhess_vp(op, np.array([0.0, 1.0])), [0.0, 6.0])
    np.testing.assert_array_equal(genhess_vp(op, np.zeros(2)), [0.0, 0.0])


@pytest.mark.fbe
def test_genhess_costs_two_hvps_and_one_jacobian(toy: ProblemInstance) -> None:
    counters = CallCounters()
    smooth = wrap_counting(toy.smooth, counters)
    nonsmooth = wrap_counting(toy.nonsmooth, counters)
    state = fbe_eval(np.array([0.5, 0.2]), 0.25, toy.smooth, toy.nonsmooth)

    genhess_vp(GenHessOp(state, smooth, nonsmooth), np.array([1.0, 0.0]))

    assert counters.hvp_f == 2
    assert counters.jprox_g == 1


@pytest.mark.fbe
def test_genhess_is_exact_for_quadratic_f() -> None:
    problem = sparse_pca(12, seed=4)
    gamma = 0.9 / problem.smooth.lipschitz_hint
    x = np.full(12, 0.05)
    v = np.linspace(-1.0, 1.0, 12) / 3.0
    state = fbe_eval(x, gamma, problem.smooth, problem.nonsmooth)
    op = GenHessOp(state, problem.smooth, problem.nonsmooth)

    fd = directional_difference(
        lambda z: fbe_grad(
            fbe_eval(z, gamma, problem.smooth, problem.nonsmooth), problem.smooth
        ),
        x,
        v,
    )

    assert scaled_error(genhess_vp(op, v), fd) <= 1e-4


@pytest.mark.fbe
def test_adapt_gamma_keeps_a_safe_stepsize(toy: ProblemInstance) -> None:
    gamma, state = adapt_gamma(np.array([0.3, 0.1]), 0.45, toy.smooth, toy.nonsmooth)
    assert gamma == 0.45
    assert state.f_xbar is not None
    assert state.phi_xbar == pytest.approx(toy.phi(state.xbar))


@pytest.mark.fbe
def test_adapt_gamma_halves_exactly_once() -> None:
    lipschitz = 4.0
    smooth = QuadraticOracle(lipschitz * np.eye(3))
    nonsmooth = ProxOperator(ProxSpec.l1(0.0), 3)
    gamma0 = 2 * ADAPT_ALPHA / lipschitz

    gamma, _ = adapt_gamma(np.array([1.0, -2.0, 0.5]), gamma0, smooth, nonsmooth)

    assert gamma == pytest.approx(ADAPT_ALPHA / lipschitz)


@pytest.mark.fbe
def test_adapt_gamma_shrinks_optimistic_stepsize() -> None:
    problem = phase_retrieval(6, 40, seed=2)
    x = np.full(6, 0.4)

    gamma, state = adapt_gamma(x, 10.0, problem.smooth, problem.nonsmooth)

    assert gamma < 10.0
    assert state.gamma == gamma


@pytest.mark.fbe
def test_adapt_gamma_reuses_a_matching_state(toy: ProblemInstance) -> None:
    counters = CallCounters()
    smooth = wrap_counting(toy.smooth, counters)
    nonsmooth = wrap_counting(toy.nonsmooth, counters)
    x = np.array([0.3, 0.1])
    state = fbe_eval(x, 0.45, toy.smooth, toy.nonsmooth)

    adapt_gamma(x, 0.45, smooth, nonsmooth, state=state)

    # only f(x̄) is evaluated
    assert counters.eval_f == 1
    assert counters.grad_f == 0
    assert counters.prox_g == 0


@pytest.mark.fbe
def test_initial_stepsize(toy: ProblemInstance) -> None:
    gamma, lipschitz = initial_stepsize(toy.smooth, np.zeros(2), 0, None)
    assert lipschitz == pytest.approx(2.0)
    assert gamma == pytest.approx(0.45)
    assert initial_stepsize(toy.smooth, np.zeros(2), 0, 0.1)[0] == 0.1


@pytest.mark.fbe
def test_sufficient_decrease_sigma() -> None:
    assert sufficient_decrease_sigma(0.45, 2.0, 1.0) == pytest.approx(0.45 * 0.05 / 2)
    # γL̂ above α
    assert sufficient_decrease_sigma(0.1, 9.8, 0.5) == pytest.approx(
        0.5 * 0.1 * 0.02 / 2
    )


@pytest.mark.fbe
def test_roundoff_slack_scales_with_magnitude() -> None:
    assert roundoff_slack(0.0) == roundoff_slack(1.0)
    assert roundoff_slack(1e6) == pytest.approx(1e6 * roundoff_slack(1.0))


@pytest.mark.fbe
def test_upper_bound_fails_for_a_too_large_stepsize() -> None:
    problem = phase_retrieval(6, 40, seed=2)
    state = fbe_eval(np.full(6, 0.4), 10.0, problem.smooth, problem.nonsmooth)

    assert upper_bound_state(state, problem.smooth) is None


@pytest.mark.fbe
def test_upper_bound_reuses_a_known_f_xbar(toy: ProblemInstance) -> None:
    # Setup
    _, state = adapt_gamma(np.array([0.3, 0.1]), 0.45, toy.smooth, toy.nonsmooth)
    counters = CallCounters()
    smooth = wrap_counting(toy.smooth, counters)

    # Action
    checked = upper_bound_state(state, smooth)

    # Assert
    assert checked is not None
    assert checked.f_xbar == state.f_xbar
    assert counters.eval_f == 0


@pytest.mark.fbe
def test_bounded_trial_rejects_a_far_point_outside_the_ball() -> None:
    # outside the ball, with a stepsize far above the local 1/L
    problem = phase_retrieval(6, 40, seed=2)
    trial = fbe_eval(np.full(6, 3.0), 10.0, problem.smooth, problem.nonsmooth)

    assert bounded_trial(trial, problem.smooth) is None


@pytest.mark.fbe
def test_adapt_gamma_skips_f_when_the_state_is_already_bounded(
    toy: ProblemInstance,
) -> None:
    _, state = adapt_gamma(np.array([0.3, 0.1]), 0.45, toy.smooth, toy.nonsmooth)
    counters = CallCounters()
    smooth = wrap_counting(toy.smooth, counters)
    nonsmooth = wrap_counting(toy.nonsmooth, counters)

    gamma, again = adapt_gamma(state.x, 0.45, smooth, nonsmooth, state=state)

    assert gamma == 0.45
    assert again.f_xbar == state.f_xbar
    assert counters.total_calls() == 0
