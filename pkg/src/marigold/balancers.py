"""Baseline task-weighting methods.

Gradient balancers (min-norm, PCGrad, linearized worst-case decrement) need
the full ``(m, d)`` matrix of task gradients every step; loss balancers
(LS, SI, RLW) only look at loss values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .core import as_matrix, as_vector, softmax, uniform_simplex
from .errors import DomainError, InvalidValueError

GRADIENT_BALANCERS = ("mgda", "pcgrad", "linearized")
LOSS_BALANCERS = ("ls", "si", "rlw")


@dataclass
class BalancerOutput:
    weights: np.ndarray | None
    direction: np.ndarray | None
    gradient_evals: int

    def __post_init__(self):
        if self.weights is None and self.direction is None:
            raise InvalidValueError("a balancer must produce weights or a direction")


def project_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, y.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    return np.maximum(y - css[rho] / (rho + 1), 0.0)


# ---------------------------------------------------------------------------
# min-norm point of the convex hull of task gradients

def _min_norm_two(g1, g2):
    diff = g1 - g2
    denom = diff @ diff
    if denom <= 0.0:
        return np.array([0.5, 0.5])
    a = float(np.clip((g2 - g1) @ g2 / denom, 0.0, 1.0))
    return np.array([a, 1.0 - a])


def min_norm_solve(G, tol: float = 1e-15, max_iter: int = 500):
    """Weights ``lam`` on the simplex minimizing ``||G^T lam||``, and that norm.

    Two tasks use the closed form. More tasks use pairwise Frank-Wolfe with
    exact line search, stopped when the Frank-Wolfe duality gap
    ``||d||^2 - min_i <g_i, d>`` drops below ``tol * max_i ||g_i||^2`` or after
    ``max_iter`` steps, then refined by an active-set solve on the final face.
    """
    G = as_matrix(G, "gradient matrix")
    m = G.shape[0]
    if m == 1:
        lam = np.ones(1)
    elif m == 2:
        lam = _min_norm_two(G[0], G[1])
    else:
        M = G @ G.T
        stop = tol * max(float(np.max(np.diag(M))), 1e-300)
        lam = uniform_simplex(m)
        for _ in range(max_iter):
            grad = M @ lam
            t = int(np.argmin(grad))
            if lam @ grad - grad[t] <= stop:
                break
            support = np.flatnonzero(lam > 0)
            s = int(support[np.argmax(grad[support])])
            curv = M[t, t] + M[s, s] - 2.0 * M[t, s]
            step = lam[s] if curv <= 0 else min(lam[s], (grad[s] - grad[t]) / curv)
            lam[t] += step
            lam[s] -= step
            if lam[s] < 1e-15:
                lam[s] = 0.0
        lam = np.maximum(lam, 0.0)
        lam /= lam.sum()
        lam = _polish_on_support(M, lam)
    return lam, float(np.linalg.norm(G.T @ lam))


def _fw_gap(M, lam):
    grad = M @ lam
    return lam @ grad - grad.min()


def _solve_on_face(M, support):
    """Minimize ``x^T M x`` on the affine hull of the face ``support`` (KKT system)."""
    k = support.size
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = M[np.ix_(support, support)]
    kkt[:k, k] = -1.0
    kkt[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    return np.linalg.lstsq(kkt, rhs, rcond=None)[0][:k]


def _polish_on_support(M, lam, max_iter: int = 100):
    """Primal active-set refinement started from the Frank-Wolfe iterate.

    Frank-Wolfe stalls on ill-conditioned faces; solving the KKT system on the
    current face (with a ratio test when that leaves the simplex, and adding
    the most violating vertex otherwise) finishes in a few exact steps. The
    result is kept only if it does not increase the objective ``x^T M x``
    (duality gaps are too noisy near zero to compare).
    """
    x = lam.copy()
    scale = max(float(np.max(np.abs(M))), 1e-300)
    for _ in range(max_iter):
        support = np.flatnonzero(x > 0)
        mu = _solve_on_face(M, support)
        if not np.all(np.isfinite(mu)):
            break
        target = np.zeros_like(x)
        target[support] = mu
        if np.all(mu >= 0):
            x = target
            grad = M @ x
            j = int(np.argmin(grad))
            if grad[j] >= x @ grad - 1e-15 * scale:
                break
            # enter vertex j with a tiny weight so it joins the next face
            step = 1e-12
            x = (1.0 - step) * x
            x[j] += step
        else:
            blocking = support[mu < 0]
            ratios = x[blocking] / (x[blocking] - target[blocking])
            a = float(np.min(ratios))
            x = x + a * (target - x)
            x[blocking[np.argmin(ratios)]] = 0.0
            x = np.maximum(x, 0.0)
        x /= x.sum()
    fx, fl = x @ M @ x, lam @ M @ lam
    if fx < fl or (fx == fl and _fw_gap(M, x) < _fw_gap(M, lam)):
        return x
    return lam


# ---------------------------------------------------------------------------
# PCGrad

def _project_conflicting(gi: np.ndarray, gj: np.ndarray) -> np.ndarray:
    dot = gi @ gj
    if dot < 0.0:
        return gi - (dot / (gj @ gj)) * gj
    return gi


def pcgrad_combine(G, rng: np.random.Generator) -> BalancerOutput:
    """Gradient surgery: each task gradient is projected off the (original)
    gradients it conflicts with, visiting the others in random order; the
    surgered gradients are summed."""
    G = as_matrix(G, "gradient matrix")
    m = G.shape[0]
    if m < 2:
        raise InvalidValueError("PCGrad needs at least two tasks")
    out = np.zeros(G.shape[1])
    for i in range(m):
        gi = G[i].copy()
        others = np.array([j for j in range(m) if j != i])
        for j in others[rng.permutation(m - 1)]:
            gi = _project_conflicting(gi, G[j])
        out += gi
    return BalancerOutput(None, out, m)


# ---------------------------------------------------------------------------
# linearized worst-case decrement

def linearized_objective(G, lam, alpha: float) -> float:
    """``max_i -alpha <g_i, G^T lam>``: the worst task change under a first-order model."""
    d = G.T @ lam
    return float(np.max(-alpha * (G @ d)))


def _linearized_gda(payoff, iters, step):
    """Alternating projected descent-ascent with step ``step / sqrt(t)`` in
    units of the largest payoff entry; returns the best visited or averaged iterate."""
    m = payoff.shape[0]
    scale = float(np.max(np.abs(payoff)))
    lam = uniform_simplex(m)
    rho = uniform_simplex(m)
    lam_sum = np.zeros(m)
    best, best_val = lam, float(np.max(payoff @ lam))
    for t in range(1, iters + 1):
        eta = step / (np.sqrt(t) * scale)
        lam = project_simplex(lam - eta * (payoff.T @ rho))
        rho = project_simplex(rho + eta * (payoff @ lam))
        lam_sum += lam
        val = float(np.max(payoff @ lam))
        if val < best_val:
            best, best_val = lam, val
    lam_avg = lam_sum / iters
    return lam_avg if float(np.max(payoff @ lam_avg)) <= best_val else best


def _linearized_lp(payoff):
    """Exact solution of ``min_lam max_i (payoff lam)_i`` as a small linear program."""
    m = payoff.shape[0]
    c = np.zeros(m + 1)
    c[-1] = 1.0
    a_ub = np.hstack([payoff, -np.ones((m, 1))])
    a_eq = np.hstack([np.ones((1, m)), np.zeros((1, 1))])
    res = linprog(c, A_ub=a_ub, b_ub=np.zeros(m), A_eq=a_eq, b_eq=[1.0],
                  bounds=[(0, None)] * m + [(None, None)], method="highs")
    if res.status != 0:
        return None
    lam = np.maximum(res.x[:m], 0.0)
    return lam / lam.sum()


def linearized_decrement_balance(G, alpha: float, solver: str = "lp", iters: int = 2000,
                                 step: float = 0.5) -> np.ndarray:
    """Solve ``min_lam max_rho sum_i rho_i (-alpha <g_i, G^T lam>)`` over two simplices.

    The inner max is attained at a vertex, so the problem is the linear
    program ``min_lam max_i (payoff lam)_i``. ``solver="lp"`` solves it exactly
    (HiGHS); ``solver="gda"`` runs projected descent-ascent instead. Either
    way the uniform point is returned whenever it is already optimal, so a
    flat objective keeps uniform weights.
    """
    G = as_matrix(G, "gradient matrix")
    if not alpha > 0:
        raise InvalidValueError("alpha must be positive")
    m = G.shape[0]
    if m < 2:
        raise InvalidValueError("the linearized balancer needs at least two tasks")
    payoff = -alpha * (G @ G.T)
    scale = float(np.max(np.abs(payoff)))
    uniform = uniform_simplex(m)
    if scale == 0.0:
        return uniform
    if solver == "lp":
        lam = _linearized_lp(payoff)
        if lam is None:
            lam = _linearized_gda(payoff, iters, step)
    elif solver == "gda":
        lam = _linearized_gda(payoff, iters, step)
    else:
        raise InvalidValueError(f"unknown solver {solver!r}")
    if float(np.max(payoff @ uniform)) <= float(np.max(payoff @ lam)) + 1e-12 * scale:
        return uniform
    return lam


# ---------------------------------------------------------------------------
# loss balancing

def loss_balance_weights(method: str, losses, rng: np.random.Generator | None = None) -> np.ndarray:
    """LS: uniform. SI: proportional to ``1/f_i`` (gradient of ``sum log f_i``). RLW: softmax of N(0,1) draws."""
    losses = as_vector(losses, "losses")
    m = losses.size
    if method == "ls":
        return uniform_simplex(m)
    if method == "si":
        if np.any(losses <= 0):
            raise DomainError("scale-invariant weighting needs strictly positive losses")
        inv = 1.0 / losses
        return inv / inv.sum()
    if method == "rlw":
        if rng is None:
            raise InvalidValueError("RLW needs a random generator")
        return softmax(rng.standard_normal(m))
    raise InvalidValueError(f"unknown loss balancer {method!r}")


def gradient_balance(method: str, G, rng: np.random.Generator, alpha: float) -> BalancerOutput:
    """Dispatch a gradient balancer; the direction is ``G^T lam`` for weight-producing methods."""
    G = as_matrix(G, "gradient matrix")
    m = G.shape[0]
    if method == "mgda":
        lam, _ = min_norm_solve(G)
    elif method == "linearized":
        lam = linearized_decrement_balance(G, alpha)
    elif method == "pcgrad":
        return pcgrad_combine(G, rng)
    else:
        raise InvalidValueError(f"unknown gradient balancer {method!r}")
    return BalancerOutput(lam, G.T @ lam, m)
