from dataclasses import replace

import numpy as np
import pytest

from marigold.bilevel import (AuxiliaryState, MarigoldOptions, TaskLoss, WorstCaseDecrement,
                              auxiliary_step, exact_surrogate_hypergrad_fd, generalized_step,
                              hypergrad, init_auxiliary_state, init_marigold_state, marigold_step,
                              marigold_weights, surrogate_value, worst_case_decrement)
from marigold.core import is_simplex, make_rng, softmax, softmax_vjp
from marigold.errors import DimensionError, DomainError, InvalidValueError
from marigold.metrics import pareto_stationarity_gap
from marigold.optimizers import SGD, Adam
from marigold.problems import (FULL, MlpSpec, QuadraticSpec, aligned_aux_quadratics,
                               conflicting_quadratics, make_mlp_problem, make_quadratic_suite)


def state_with(m, u=None, v=None, **kw):
    s = init_marigold_state(m, **kw)
    return replace(s, u=s.u if u is None else np.asarray(u, float),
                   v=s.v if v is None else np.asarray(v, float))


def test_weights_examples():
    lam, rho = marigold_weights(init_marigold_state(3), [2.0, 2.0, 2.0])
    assert np.allclose(lam, 1 / 3) and np.allclose(rho, 1 / 3)
    lam, _ = marigold_weights(state_with(2, u=[1.0, 0.0]), [1.0, 1.0])
    assert np.allclose(lam, [np.e / (1 + np.e), 1 / (1 + np.e)])
    u = np.array([0.3, -1.0, 2.0])
    for beta in (0.01, 1.0, 30.0):
        lam, _ = marigold_weights(state_with(3, u=u, beta=beta), [1.0, 2.0, 0.5])
        assert np.argmax(lam) == 2


def test_weights_need_positive_losses():
    with pytest.raises(DomainError):
        marigold_weights(init_marigold_state(2), [1.0, 0.0])
    with pytest.raises(DimensionError):
        marigold_weights(init_marigold_state(2), [1.0, 1.0, 1.0])
    with pytest.raises(InvalidValueError):
        init_marigold_state(2, r=0.0)


def test_worst_case_decrement_examples():
    p = conflicting_quadratics(2, 2)
    theta = np.array([0.3, 0.7])
    assert worst_case_decrement([0.5, 0.5], theta, p, FULL, SGD(0.0)) == 0
    single = make_quadratic_suite(QuadraticSpec(np.array([[1.0, 1.0]])))
    before = single.eval_losses(theta)[0]
    from marigold.optimizers import apply_update
    after = single.eval_losses(apply_update(SGD(0.1), [1.0], theta, single, FULL)[0])[0]
    assert worst_case_decrement([1.0], theta, single, FULL, SGD(0.1)) == pytest.approx(after - before)
    shared = make_quadratic_suite(QuadraticSpec(np.array([[1.0, -1.0], [1.0, -1.0]])))
    assert worst_case_decrement([0.3, 0.7], theta, shared, FULL, SGD(0.1)) < 0


def test_surrogate_value_examples(rng):
    p = conflicting_quadratics(3, 3)
    theta = rng.standard_normal(3)
    lam = np.array([0.2, 0.5, 0.3])
    from marigold.bilevel import _loss_change
    change = _loss_change(lam, theta, p, FULL, SGD(0.1))
    for j in range(3):
        assert surrogate_value(lam, np.eye(3)[j], theta, p, FULL, SGD(0.1)) == pytest.approx(change[j], abs=1e-15)
    assert surrogate_value(lam, [0.1, 0.1, 0.8], theta, p, FULL, SGD(0.0)) == 0


@pytest.mark.parametrize("m", [2, 8, 64])
def test_hypergrad_cost_is_independent_of_m(m):
    p = conflicting_quadratics(m, max(m, 2))
    theta = make_rng(m).standard_normal(p.d) + 2.0
    hypergrad(init_marigold_state(m), theta, p, FULL, SGD(0.05), make_rng(0))
    assert p.counter.snapshot() == {"loss_evals": 2, "pertask_gevals": 0, "weighted_gevals": 1}


@pytest.mark.parametrize("m", [2, 8, 64])
def test_marigold_step_cost_is_independent_of_m(m):
    p = conflicting_quadratics(m, max(m, 2))
    theta = make_rng(m).standard_normal(p.d) + 2.0
    state, opt, rng = init_marigold_state(m), SGD(0.05), make_rng(0)
    for _ in range(3):
        res = marigold_step(state, theta, p, opt, rng)
        state, theta, opt = res.state, res.theta, res.optimizer
    assert p.counter.snapshot() == {"loss_evals": 9, "pertask_gevals": 0, "weighted_gevals": 6}


def test_rho_estimate_vanishes_without_movement(rng):
    p = conflicting_quadratics(3, 3)
    est = hypergrad(init_marigold_state(3), rng.standard_normal(3), p, FULL, SGD(0.0), rng)
    assert np.all(est.g_rho == 0) and np.all(est.g_v == 0)


def test_rho_estimate_sign_on_common_minimizer(rng):
    c = np.array([1.0, -2.0, 0.5])
    p = make_quadratic_suite(QuadraticSpec(np.tile(c, (4, 1)), np.stack([np.diag([1.0, 2.0, 3.0])] * 4)))
    for _ in range(50):
        s = state_with(4, u=rng.standard_normal(4), v=rng.standard_normal(4), r=0.1)
        est = hypergrad(s, c + rng.standard_normal(3), p, FULL, SGD(0.01), rng)
        assert np.all(est.g_rho <= 0)


def _analytic_hypergrad(u, v, beta, theta, p, alpha):
    f = p.eval_losses(theta)
    lam, rho = softmax(beta * u / f), softmax(beta * v / f)
    G = p.eval_gradients(theta)
    theta_new = theta - alpha * lam @ G
    g_lam = -alpha * G @ (rho @ p.eval_gradients(theta_new))
    return (beta / f) * softmax_vjp(lam, g_lam)


def test_fd_oracle_matches_chain_rule(rng):
    p = make_quadratic_suite(QuadraticSpec(rng.standard_normal((3, 4)),
                                           np.stack([np.diag(rng.uniform(1, 3, 4)) for _ in range(3)])))
    theta, u, v = rng.standard_normal(4), rng.standard_normal(3), rng.standard_normal(3)
    exact = _analytic_hypergrad(u, v, 0.7, theta, p, 0.05)
    assert np.max(np.abs(exact_surrogate_hypergrad_fd(u, v, 0.7, theta, p, FULL, SGD(0.05)) - exact)) <= 1e-6


def test_fd_oracle_step_halving_order(rng):
    # on quadratics the surrogate is a softmax composition, so the O(h^2) constant is visible
    p = make_quadratic_suite(QuadraticSpec(rng.standard_normal((3, 4))))
    theta, u, v = rng.standard_normal(4), rng.standard_normal(3), rng.standard_normal(3)
    exact = _analytic_hypergrad(u, v, 1.0, theta, p, 0.1)
    e1 = np.linalg.norm(exact_surrogate_hypergrad_fd(u, v, 1.0, theta, p, FULL, SGD(0.1), h=1e-4) - exact)
    e2 = np.linalg.norm(exact_surrogate_hypergrad_fd(u, v, 1.0, theta, p, FULL, SGD(0.1), h=5e-5) - exact)
    assert 3.0 <= e1 / e2 <= 5.0


def test_fd_oracle_gradient_is_zero_sum_for_equal_losses():
    p = make_quadratic_suite(QuadraticSpec(np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])))
    theta = np.zeros(2)   # all three losses equal 0.5
    g = exact_surrogate_hypergrad_fd(np.zeros(3), np.zeros(3), 1.0, theta, p, FULL, SGD(0.1))
    assert abs(g.sum()) <= 1e-10


@pytest.mark.slow
def test_hypergrad_mean_relative_error_shrinks_with_r():
    p = conflicting_quadratics(3, 3)
    rng = make_rng(8)
    theta, u, v = rng.standard_normal(3), 0.5 * rng.standard_normal(3), 0.5 * rng.standard_normal(3)
    opt = SGD(0.05)
    fd = exact_surrogate_hypergrad_fd(u, v, 1.0, theta, p, FULL, opt)

    def rel_err(r, n):
        s = state_with(3, u=u, v=v, r=r)
        g = np.mean([hypergrad(s, theta, p, FULL, opt, rng, antithetic=True).g_u for _ in range(n)], axis=0)
        return np.linalg.norm(g - fd) / np.linalg.norm(fd)

    c = max(rel_err(1e-1, 20_000) / 1e-1, rel_err(1e-2, 20_000) / 1e-2)
    assert rel_err(1e-2, 100_000) <= 0.05 + c * 1e-2


def test_marigold_step_is_deterministic():
    p = make_mlp_problem(MlpSpec(pool_size=50, n_tasks=3))
    theta = p.init_params(make_rng(0))
    opts = MarigoldOptions(batch_size=10)
    outs = []
    for _ in range(2):
        res = marigold_step(init_marigold_state(3, r=1e-2), theta, p, Adam(1e-2), make_rng(5), opts)
        outs.append(np.concatenate([res.theta, res.state.u, res.state.v, res.lam]).tobytes())
    assert outs[0] == outs[1]


@pytest.mark.parametrize("mode, policy, schedule", [
    ("logit", "reuse", "simultaneous"), ("direct", "reuse", "simultaneous"),
    ("logit", "resample", "alternating"), ("direct", "resample", "alternating")])
def test_weights_stay_on_simplex(mode, policy, schedule):
    p = make_mlp_problem(MlpSpec(pool_size=64, n_tasks=4, correlation=-0.5))
    theta, rng = p.init_params(make_rng(1)), make_rng(2)
    state, opt = init_marigold_state(4, r=0.05, upper_lr_u=0.05, upper_lr_v=0.05), SGD(0.05)
    opts = MarigoldOptions(16, mode, policy, schedule)
    for _ in range(100):
        res = marigold_step(state, theta, p, opt, rng, opts)
        state, theta, opt = res.state, res.theta, res.optimizer
        assert is_simplex(res.lam) and is_simplex(res.rho)
    assert state.iteration == 100


def test_alternating_schedule_updates_one_player_per_step():
    p = conflicting_quadratics(3, 3)
    theta, rng = np.array([2.0, 1.0, -1.0]), make_rng(3)
    state = init_marigold_state(3, r=0.1, upper_lr_u=0.1, upper_lr_v=0.1)
    opts = MarigoldOptions(update_schedule="alternating")
    res = marigold_step(state, theta, p, SGD(0.05), rng, opts)
    assert np.any(res.state.u != 0) and np.all(res.state.v == 0)
    res2 = marigold_step(res.state, res.theta, p, SGD(0.05), rng, opts)
    assert np.array_equal(res2.state.u, res.state.u) and np.any(res2.state.v != 0)


def test_options_validation():
    with pytest.raises(InvalidValueError):
        MarigoldOptions(perturb_mode="sideways")
    with pytest.raises(InvalidValueError):
        MarigoldOptions(batch_policy="sometimes")
    with pytest.raises(InvalidValueError):
        MarigoldOptions(update_schedule="random")


def test_resample_policy_draws_a_second_batch():
    p = make_mlp_problem(MlpSpec(pool_size=64))
    theta = p.init_params(make_rng(0))
    a = marigold_step(init_marigold_state(2), theta, p, SGD(0.1), make_rng(4), MarigoldOptions(8, batch_policy="reuse"))
    b = marigold_step(init_marigold_state(2), theta, p, SGD(0.1), make_rng(4), MarigoldOptions(8, batch_policy="resample"))
    assert not np.array_equal(a.theta, b.theta)
    assert np.array_equal(a.base_losses, b.base_losses)


@pytest.mark.slow
def test_conflicting_quadratics_reach_pareto_stationarity():
    p = conflicting_quadratics(2, 2)
    for seed in range(3):
        rng = make_rng(seed)
        theta = 3 * rng.standard_normal(2)
        state = init_marigold_state(2, beta=1.0, r=1e-2, upper_lr_u=1e-2, upper_lr_v=1e-2)
        opt = SGD(0.05)
        for _ in range(5000):
            res = marigold_step(state, theta, p, opt, rng)
            state, theta, opt = res.state, res.theta, res.optimizer
        assert pareto_stationarity_gap(p.eval_gradients(theta)) < 1e-3
        assert p.distance_to_pareto_set(theta) < 1e-3


def test_generalized_step_matches_marigold_step():
    p = make_mlp_problem(MlpSpec(pool_size=40, n_tasks=3))
    theta0 = p.init_params(make_rng(0))
    opts = MarigoldOptions(8, antithetic=True, update_schedule="alternating")
    traces = []
    for general in (False, True):
        rng, state, theta, opt = make_rng(9), init_marigold_state(3, r=0.05), theta0, Adam(0.01)
        out = []
        for _ in range(50):
            res = (generalized_step(state, theta, WorstCaseDecrement(), p, opt, rng, opts) if general
                   else marigold_step(state, theta, p, opt, rng, opts))
            state, theta, opt = res.state, res.theta, res.optimizer
            out.append(np.concatenate([theta, state.u, state.v]))
        traces.append(np.array(out).tobytes())
    assert traces[0] == traces[1]


def test_task_loss_objective_drops_max_player():
    p = conflicting_quadratics(3, 3)
    theta, rng = np.array([1.0, 2.0, -1.0]), make_rng(0)
    state = init_marigold_state(3, r=0.1, upper_lr_u=0.1)
    res = generalized_step(state, theta, TaskLoss(1), p, SGD(0.1), rng)
    assert res.rho is None and np.all(res.state.v == 0) and np.any(res.state.u != 0)
    assert p.counter.weighted_gevals == 2 and p.counter.loss_evals == 3


def test_auxiliary_step_structure():
    p = aligned_aux_quadratics()
    theta, rng = np.array([0.5, 0.5, 0.5]), make_rng(0)
    state = init_auxiliary_state(omega=0.0, r=0.5, lr=0.1, upper_optimizer="sgd")
    res = generalized_step(state, theta, TaskLoss(0), p, SGD(0.1), rng)
    assert isinstance(res.state, AuxiliaryState)
    assert res.state.omega != 0.0
    assert np.allclose(res.lam, p.lower_weights(res.state.omega))
    assert p.counter.snapshot() == {"loss_evals": 3, "pertask_gevals": 0, "weighted_gevals": 2}
    with pytest.raises(InvalidValueError):
        generalized_step(state, theta, WorstCaseDecrement(), p, SGD(0.1), rng)
    with pytest.raises(InvalidValueError):
        auxiliary_step(state, theta, conflicting_quadratics(), SGD(0.1), rng)


def test_auxiliary_gradient_is_exact_in_expectation():
    # the target loss after one SGD step is quadratic in omega, so the mirrored
    # single-point estimate equals the derivative and its sign is deterministic
    p = aligned_aux_quadratics()
    theta = np.array([0.2, 0.6, 0.6])
    opts = MarigoldOptions(antithetic=True)
    state = init_auxiliary_state(omega=0.0, r=0.3, lr=1.0, upper_optimizer="sgd")
    res = auxiliary_step(state, theta, p, SGD(0.1), make_rng(0), opts)
    h = 1e-6
    from marigold.optimizers import PROBE, apply_weighted_update

    def target(om):
        t, _ = apply_weighted_update(SGD(0.1), p.lower_weights(om), theta, p, FULL, PROBE)
        return p.eval_losses(t)[0]

    deriv = (target(h) - target(-h)) / (2 * h)
    assert res.state.omega == pytest.approx(-deriv, rel=1e-6)
    assert res.state.omega > 0
