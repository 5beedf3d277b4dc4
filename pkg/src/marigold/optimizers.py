"""The training update map: one SGD or Adam step on a weighted loss.

Optimizer states are immutable; every step returns a new state. That makes
probing cheap: ``apply_update(..., mode=PROBE)`` simply discards the advanced
state, so what-if evaluations at perturbed weights never leak into training.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .core import check_simplex
from .errors import DimensionError, InvalidValueError


class Mode(enum.Enum):
    PROBE = "probe"
    COMMIT = "commit"


PROBE = Mode.PROBE
COMMIT = Mode.COMMIT


@dataclass(frozen=True)
class SGD:
    lr: float

    def __post_init__(self):
        # lr == 0 is allowed: it turns the update map into the identity
        if not (np.isfinite(self.lr) and self.lr >= 0):
            raise InvalidValueError(f"learning rate must be >= 0, got {self.lr}")

    def step(self, theta, g):
        return self, sgd_step(self, theta, g)


@dataclass(frozen=True)
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.lr) and self.lr >= 0):
            raise InvalidValueError(f"learning rate must be >= 0, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidValueError("Adam betas must lie in [0, 1)")
        if not self.eps > 0:
            raise InvalidValueError("Adam eps must be positive")

    def step(self, theta, g):
        return adam_step(self, theta, g)


Optimizer = SGD | Adam


def _check_dims(theta, g):
    theta = np.asarray(theta, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if theta.shape != g.shape or theta.ndim != 1:
        raise DimensionError(f"parameter shape {theta.shape} does not match gradient shape {g.shape}")
    return theta, g


def sgd_step(state: SGD, theta, g) -> np.ndarray:
    theta, g = _check_dims(theta, g)
    return theta - state.lr * g


def adam_step(state: Adam, theta, g) -> tuple[Adam, np.ndarray]:
    """Bias-corrected Adam step; returns the advanced state and new parameters."""
    theta, g = _check_dims(theta, g)
    m = np.zeros_like(theta) if state.m is None else state.m
    v = np.zeros_like(theta) if state.v is None else state.v
    if m.shape != theta.shape:
        raise DimensionError("Adam moment vectors do not match the parameter dimension")
    t = state.t + 1
    m = state.beta1 * m + (1.0 - state.beta1) * g
    v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_theta = theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m, v=v, t=t), new_theta


def make_optimizer(kind: str, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> Optimizer:
    if kind == "sgd":
        return SGD(lr)
    if kind == "adam":
        return Adam(lr, beta1, beta2, eps)
    raise InvalidValueError(f"unknown optimizer {kind!r}")


def apply_weighted_update(optimizer: Optimizer, weights, theta, problem, batch,
                          mode: Mode = PROBE):
    """One optimizer step on ``sum_i w_i f_i`` for arbitrary finite weights.

    Returns ``(theta', state')`` where ``state'`` is ``None`` in PROBE mode.
    """
    g = problem.eval_weighted_gradient(theta, weights, batch)
    new_state, new_theta = optimizer.step(theta, g)
    return new_theta, (new_state if mode is COMMIT else None)


def apply_update(optimizer: Optimizer, lam, theta, problem, batch, mode: Mode = PROBE):
    """The update map ``A(lam, theta)`` for simplex weights ``lam``.

    Exactly one weighted-gradient evaluation. PROBE and COMMIT return the same
    parameters; only COMMIT hands back the advanced optimizer state.
    """
    lam = check_simplex(lam, "lambda")
    return apply_weighted_update(optimizer, lam, theta, problem, batch, mode)
