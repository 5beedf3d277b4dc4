"""Zeroth-order bi-level task balancing.

Task weights are ``lam = softmax(beta * u / f)`` and ``rho = softmax(beta * v / f)``
where ``u, v`` are trainable logits and ``f`` are the most recent (positive)
batch losses. Each iteration:

1. ``hypergrad`` samples one unit direction in logit space, probes the update
   map at the perturbed weights (one weighted gradient, no state change) and
   forms single-point estimates of the surrogate's gradients:
   ``g_u = (m/r) * (rho . f(A(lam', theta))) * dir`` for the min player and the
   loss-change vector ``f(A(lam', theta)) - f(theta)`` for the max player.
2. ``u`` takes a descent step, ``v`` an ascent step (upper-level optimizers).
3. ``theta`` takes one committed optimizer step at the new ``lam``.

The surrogate being optimized is
``Phi_k(lam, rho) = sum_i rho_i (f_i(A(lam, theta_k)) - f_i(theta_k))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import (as_vector, check_simplex, sample_unit_sphere, softmax, softmax_vjp,
                   zo_gradient_estimate)
from .errors import DimensionError, DomainError, InvalidValueError
from .optimizers import (COMMIT, PROBE, Adam, Optimizer, apply_update,
                         apply_weighted_update, make_optimizer)
from .problems import AuxProblem, MooProblem

PERTURB_MODES = ("logit", "direct")
BATCH_POLICIES = ("reuse", "resample")
SCHEDULES = ("simultaneous", "alternating")


@dataclass(frozen=True)
class MarigoldState:
    u: np.ndarray
    v: np.ndarray
    beta: float
    r: float
    opt_u: Optimizer
    opt_v: Optimizer
    losses: np.ndarray | None = None
    iteration: int = 0

    def __post_init__(self):
        if not self.beta > 0:
            raise InvalidValueError(f"temperature beta must be positive, got {self.beta}")
        if not self.r > 0:
            raise InvalidValueError(f"perturbation scale r must be positive, got {self.r}")


def init_marigold_state(m: int, beta: float = 1.0, r: float = 1e-3, upper_lr_u: float = 1e-4,
                        upper_lr_v: float = 1e-4, upper_optimizer: str = "adam") -> MarigoldState:
    """Zero logits (uniform weights) and fresh upper-level optimizers."""
    return MarigoldState(np.zeros(m), np.zeros(m), float(beta), float(r),
                         make_optimizer(upper_optimizer, upper_lr_u),
                         make_optimizer(upper_optimizer, upper_lr_v))


@dataclass
class MarigoldOptions:
    batch_size: int | None = None
    perturb_mode: str = "logit"
    batch_policy: str = "reuse"
    update_schedule: str = "simultaneous"
    antithetic: bool = False

    def __post_init__(self):
        for value, allowed, name in ((self.perturb_mode, PERTURB_MODES, "perturb_mode"),
                                     (self.batch_policy, BATCH_POLICIES, "batch_policy"),
                                     (self.update_schedule, SCHEDULES, "update_schedule")):
            if value not in allowed:
                raise InvalidValueError(f"{name} must be one of {allowed}, got {value!r}")


@dataclass
class HypergradEstimate:
    g_u: np.ndarray            # min-player estimate, logit coordinates
    g_v: np.ndarray            # max-player gradient pulled back to the v logits
    g_rho: np.ndarray          # loss changes f(A(lam', theta)) - f(theta)
    direction: np.ndarray      # sampled unit direction
    perturbed_losses: np.ndarray
    base_losses: np.ndarray
    lam: np.ndarray
    rho: np.ndarray
    g_lambda: np.ndarray | None = None  # raw simplex-coordinate estimate (direct mode)


@dataclass
class StepResult:
    state: object
    theta: np.ndarray
    optimizer: Optimizer
    lam: np.ndarray
    rho: np.ndarray | None
    base_losses: np.ndarray
    post_losses: np.ndarray

    @property
    def decrement(self) -> float:
        """Realized worst-case loss change on the probe batch."""
        return float(np.max(self.post_losses - self.base_losses))


def _positive_losses(losses) -> np.ndarray:
    f = as_vector(losses, "losses")
    if np.any(f <= 0):
        raise DomainError("the weight parameterization needs strictly positive losses")
    return f


def marigold_weights(state: MarigoldState, losses):
    """``(lam, rho) = (softmax(beta u / f), softmax(beta v / f))``."""
    f = _positive_losses(losses)
    if f.shape != state.u.shape:
        raise DimensionError("losses and logits differ in length")
    return softmax(state.beta * state.u / f), softmax(state.beta * state.v / f)


# ---------------------------------------------------------------------------
# exact surrogate quantities

def _loss_change(lam, theta, problem, batch, optimizer, base=None):
    if base is None:
        base = problem.eval_losses(theta, batch)
    theta_new, _ = apply_update(optimizer, lam, theta, problem, batch, PROBE)
    return problem.eval_losses(theta_new, batch) - base


def surrogate_value(lam, rho, theta, problem: MooProblem, batch, optimizer) -> float:
    """``sum_i rho_i (f_i(A(lam, theta)) - f_i(theta))``."""
    rho = check_simplex(rho, "rho")
    return float(rho @ _loss_change(lam, theta, problem, batch, optimizer))


def worst_case_decrement(lam, theta, problem: MooProblem, batch, optimizer) -> float:
    """``max_i (f_i(A(lam, theta)) - f_i(theta))`` with ``A`` probed, never committed."""
    return float(np.max(_loss_change(lam, theta, problem, batch, optimizer)))


def surrogate_in_logits(u, v, beta, theta, problem, batch, optimizer, losses=None) -> float:
    """The surrogate as a function of the logits, denominators ``f`` held fixed."""
    base = problem.eval_losses(theta, batch) if losses is None else np.asarray(losses)
    f = _positive_losses(base)
    lam, rho = softmax(beta * np.asarray(u) / f), softmax(beta * np.asarray(v) / f)
    return float(rho @ _loss_change(lam, theta, problem, batch, optimizer, base))


def exact_surrogate_hypergrad_fd(u, v, beta, theta, problem, batch, optimizer,
                                 h: float = 1e-5, losses=None) -> np.ndarray:
    """Central finite-difference gradient of the surrogate w.r.t. ``u`` (test oracle)."""
    if not h > 0:
        raise InvalidValueError("finite-difference step must be positive")
    u = as_vector(u, "u")
    with problem.counter.paused():
        base = problem.eval_losses(theta, batch) if losses is None else np.asarray(losses)
        grad = np.empty(u.size)
        for k in range(u.size):
            e = np.zeros(u.size)
            e[k] = h
            up = surrogate_in_logits(u + e, v, beta, theta, problem, batch, optimizer, base)
            dn = surrogate_in_logits(u - e, v, beta, theta, problem, batch, optimizer, base)
            grad[k] = (up - dn) / (2 * h)
    return grad


# ---------------------------------------------------------------------------
# hypergradient estimate

def _perturbed_weights(mode, state, lam, f, r, direction):
    if mode == "logit":
        return softmax(state.beta * (state.u + r * direction) / f)
    # direct mode: step off the simplex, clip, renormalize
    w = np.maximum(lam + r * direction, 0.0)
    total = w.sum()
    if total <= 0:
        raise InvalidValueError("direct perturbation left no positive weight; reduce r")
    return w / total


def hypergrad(state: MarigoldState, theta, problem: MooProblem, batch, optimizer,
              rng: np.random.Generator, perturb_mode: str = "logit",
              antithetic: bool = False) -> HypergradEstimate:
    """Single-point zeroth-order estimate of both surrogate gradients.

    Cost: one probe of the update map (one weighted gradient) and two
    loss-vector evaluations, whatever the number of tasks. ``antithetic``
    adds a mirrored probe.
    """
    m = problem.m
    if m < 2:
        raise DimensionError("task balancing needs at least two tasks")
    if perturb_mode not in PERTURB_MODES:
        raise InvalidValueError(f"unknown perturb_mode {perturb_mode!r}")
    r = state.r
    base = _positive_losses(problem.eval_losses(theta, batch))
    lam, rho = marigold_weights(state, base)
    direction = sample_unit_sphere(rng, m)

    lam_p = _perturbed_weights(perturb_mode, state, lam, base, r, direction)
    theta_p, _ = apply_update(optimizer, lam_p, theta, problem, batch, PROBE)
    pert = problem.eval_losses(theta_p, batch)
    if antithetic:
        lam_m = _perturbed_weights(perturb_mode, state, lam, base, r, -direction)
        theta_m, _ = apply_update(optimizer, lam_m, theta, problem, batch, PROBE)
        value = 0.5 * (rho @ pert - rho @ problem.eval_losses(theta_m, batch))
    else:
        value = rho @ pert
    g = (m / r) * value * direction

    g_rho = pert - base
    g_v = (state.beta / base) * softmax_vjp(rho, g_rho)
    if perturb_mode == "logit":
        return HypergradEstimate(g, g_v, g_rho, direction, pert, base, lam, rho)
    g_u = (state.beta / base) * softmax_vjp(lam, g)
    return HypergradEstimate(g_u, g_v, g_rho, direction, pert, base, lam, rho, g_lambda=g)


# ---------------------------------------------------------------------------
# training loop

def _which_updates(state, schedule):
    if schedule == "simultaneous":
        return True, True
    even = state.iteration % 2 == 0
    return even, not even


def _upper_update(state, g_u, g_v, f, schedule):
    do_u, do_v = _which_updates(state, schedule)
    opt_u, u = state.opt_u.step(state.u, g_u) if do_u else (state.opt_u, state.u)
    # the max player ascends
    opt_v, v = state.opt_v.step(state.v, -g_v) if do_v and g_v is not None else (state.opt_v, state.v)
    return replace(state, u=u, v=v, opt_u=opt_u, opt_v=opt_v, losses=f,
                   iteration=state.iteration + 1)


def marigold_step(state: MarigoldState, theta, problem: MooProblem, optimizer,
                  rng: np.random.Generator, options: MarigoldOptions | None = None) -> StepResult:
    """One outer iteration: hypergradient, weight update, committed model step.

    Charges two weighted-gradient and three loss-vector evaluations (the third
    measures the realized loss change on the probe batch).
    """
    opts = options or MarigoldOptions()
    batch = problem.sample_batch(rng, opts.batch_size)
    est = hypergrad(state, theta, problem, batch, optimizer, rng, opts.perturb_mode, opts.antithetic)
    new_state = _upper_update(state, est.g_u, est.g_v, est.base_losses, opts.update_schedule)
    lam, rho = marigold_weights(new_state, est.base_losses)
    commit_batch = batch if opts.batch_policy == "reuse" else problem.sample_batch(rng, opts.batch_size)
    theta_new, opt_new = apply_update(optimizer, lam, theta, problem, commit_batch, COMMIT)
    post = problem.eval_losses(theta_new, batch)
    return StepResult(new_state, theta_new, opt_new, lam, rho, est.base_losses, post)


# ---------------------------------------------------------------------------
# generalized upper objectives

@dataclass(frozen=True)
class WorstCaseDecrement:
    """Min-max over (lam, rho) of the weighted loss change; the default objective."""
    minmax = True

    def probe_value(self, rho, perturbed, base):
        return rho @ perturbed


@dataclass(frozen=True)
class TaskLoss:
    """Upper level minimizes one task's loss after the update: ``f_task(A(lam, theta))``."""
    task: int
    minmax = False

    def probe_value(self, rho, perturbed, base):
        return perturbed[self.task]


@dataclass(frozen=True)
class AuxiliaryState:
    """Auxiliary-task weight ``omega`` (unconstrained) with its optimizer."""
    omega: float
    opt: Optimizer
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise InvalidValueError(f"perturbation scale r must be positive, got {self.r}")


def init_auxiliary_state(omega: float = 0.0, r: float = 1e-3, lr: float = 1e-4,
                         upper_optimizer: str = "adam") -> AuxiliaryState:
    return AuxiliaryState(float(omega), make_optimizer(upper_optimizer, lr), float(r))


def generalized_step(state, theta, objective, problem: MooProblem, optimizer,
                     rng: np.random.Generator, options: MarigoldOptions | None = None) -> StepResult:
    """Outer iteration with a user-chosen upper objective ``R(lam, theta)``.

    ``WorstCaseDecrement`` reproduces ``marigold_step`` exactly; ``TaskLoss``
    drops the max player. With an ``AuxiliaryState`` on an ``AuxProblem`` the
    upper variable is the auxiliary weight ``omega`` instead of simplex logits.
    """
    opts = options or MarigoldOptions()
    if isinstance(state, AuxiliaryState):
        if not isinstance(objective, TaskLoss):
            raise InvalidValueError("auxiliary learning needs a TaskLoss objective")
        return auxiliary_step(state, theta, problem, optimizer, rng, opts, objective.task)

    m = problem.m
    if m < 2:
        raise DimensionError("task balancing needs at least two tasks")
    r = state.r
    batch = problem.sample_batch(rng, opts.batch_size)
    base = _positive_losses(problem.eval_losses(theta, batch))
    lam, rho = marigold_weights(state, base)
    direction = sample_unit_sphere(rng, m)

    lam_p = _perturbed_weights(opts.perturb_mode, state, lam, base, r, direction)
    theta_p, _ = apply_update(optimizer, lam_p, theta, problem, batch, PROBE)
    pert = problem.eval_losses(theta_p, batch)
    value = objective.probe_value(rho, pert, base)
    if opts.antithetic:
        lam_m = _perturbed_weights(opts.perturb_mode, state, lam, base, r, -direction)
        theta_m, _ = apply_update(optimizer, lam_m, theta, problem, batch, PROBE)
        value = 0.5 * (value - objective.probe_value(rho, problem.eval_losses(theta_m, batch), base))
    g = (m / r) * value * direction
    g_u = g if opts.perturb_mode == "logit" else (state.beta / base) * softmax_vjp(lam, g)
    g_v = (state.beta / base) * softmax_vjp(rho, pert - base) if objective.minmax else None

    new_state = _upper_update(state, g_u, g_v, base, opts.update_schedule)
    lam_new, rho_new = marigold_weights(new_state, base)
    commit_batch = batch if opts.batch_policy == "reuse" else problem.sample_batch(rng, opts.batch_size)
    theta_new, opt_new = apply_update(optimizer, lam_new, theta, problem, commit_batch, COMMIT)
    post = problem.eval_losses(theta_new, batch)
    return StepResult(new_state, theta_new, opt_new, lam_new,
                      rho_new if objective.minmax else None, base, post)


def auxiliary_step(state: AuxiliaryState, theta, problem: AuxProblem, optimizer,
                   rng: np.random.Generator, options: MarigoldOptions | None = None,
                   target: int | None = None) -> StepResult:
    """Tune ``omega`` to lower the target task's loss after one training step.

    The training loss is ``sum(main) + omega * aux``. The gradient in ``omega``
    is the one-dimensional single-point estimate ``(1/r) f_target(A(omega + r s)) s``
    with ``s`` drawn from ``{-1, +1}``.
    """
    if not isinstance(problem, AuxProblem):
        raise InvalidValueError("auxiliary_step needs an AuxProblem")
    opts = options or MarigoldOptions()
    target = problem.target_task if target is None else target
    batch = problem.sample_batch(rng, opts.batch_size)
    base = problem.eval_losses(theta, batch)
    s = sample_unit_sphere(rng, 1)

    def probed_target_loss(om):
        w = problem.lower_weights(om[0])
        theta_p, _ = apply_weighted_update(optimizer, w, theta, problem, batch, PROBE)
        return problem.eval_losses(theta_p, batch)[target]

    g = zo_gradient_estimate(probed_target_loss, np.array([state.omega]), state.r, s,
                             antithetic=opts.antithetic)
    opt_w, omega = state.opt.step(np.array([state.omega]), g)
    new_state = replace(state, omega=float(omega[0]), opt=opt_w)
    w_new = problem.lower_weights(new_state.omega)
    commit_batch = batch if opts.batch_policy == "reuse" else problem.sample_batch(rng, opts.batch_size)
    theta_new, opt_new = apply_weighted_update(optimizer, w_new, theta, problem, commit_batch, COMMIT)
    post = problem.eval_losses(theta_new, batch)
    return StepResult(new_state, theta_new, opt_new, w_new, None, base, post)
