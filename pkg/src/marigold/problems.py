"""Synthetic multi-objective problems with exact losses and gradients.

Three families are provided:

* ``QuadraticProblem``: ``f_i(x) = 0.5 (x - c_i)^T A_i (x - c_i)``, deterministic,
  with exact smoothness constants and (for two identity quadratics) an exact
  Pareto set.
* ``MlpProblem``: a shared-bottom tanh network with one linear head per task,
  trained on a fixed synthetic regression pool with per-task mean squared
  error. Backprop is written out by hand.
* ``AuxProblem``: main tasks plus one auxiliary task whose weight only enters
  the training loss.

All problems count their evaluations. ``eval_gradients`` charges ``m``
per-task gradient evaluations; ``eval_weighted_gradient`` charges one.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import as_matrix, as_vector, make_rng
from .errors import DimensionError, InvalidValueError

#: Batch value meaning "the whole pool" (the only valid batch for deterministic problems).
FULL = None


@dataclass
class EvalCounter:
    loss_evals: int = 0
    pertask_gevals: int = 0
    weighted_gevals: int = 0
    active: bool = True

    def charge(self, kind: str, n: int = 1) -> None:
        if self.active:
            setattr(self, kind, getattr(self, kind) + n)

    @contextlib.contextmanager
    def paused(self):
        """Evaluations inside the block (logging, oracles) are not charged."""
        prev, self.active = self.active, False
        try:
            yield self
        finally:
            self.active = prev

    def reset(self) -> None:
        self.loss_evals = self.pertask_gevals = self.weighted_gevals = 0

    def snapshot(self) -> dict:
        return {"loss_evals": self.loss_evals, "pertask_gevals": self.pertask_gevals,
                "weighted_gevals": self.weighted_gevals}


class MooProblem:
    """Base class: ``m`` task losses over a parameter vector of length ``d``.

    Subclasses implement ``_losses``, ``_gradients`` and optionally
    ``_weighted_gradient`` on validated inputs; ``idx`` is ``None`` for the
    full pool or an integer index array.
    """

    def __init__(self, m: int, d: int, pool_size: int = 0, smoothness=None):
        if m < 1 or d < 1:
            raise DimensionError(f"need m >= 1 and d >= 1, got m={m}, d={d}")
        self.m = int(m)
        self.d = int(d)
        self.pool_size = int(pool_size)
        self.smoothness = None if smoothness is None else np.asarray(smoothness, dtype=np.float64)
        self.counter = EvalCounter()

    @property
    def deterministic(self) -> bool:
        return self.pool_size == 0

    # -- validation -------------------------------------------------------
    def _theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.d,):
            raise DimensionError(f"theta must have shape ({self.d},), got {theta.shape}")
        return theta

    def _batch(self, batch):
        if batch is FULL:
            return None
        idx = np.asarray(batch)
        if self.deterministic:
            raise InvalidValueError("deterministic problem only accepts the FULL batch")
        if idx.ndim != 1 or idx.size == 0 or not np.issubdtype(idx.dtype, np.integer):
            raise InvalidValueError("batch must be a nonempty 1-D array of integer indices")
        if idx.min() < 0 or idx.max() >= self.pool_size:
            raise InvalidValueError(f"batch index out of range [0, {self.pool_size})")
        return idx

    # -- public evaluation ------------------------------------------------
    def eval_losses(self, theta, batch=FULL) -> np.ndarray:
        """Loss vector ``(f_1(theta; B), ..., f_m(theta; B))``."""
        out = self._losses(self._theta(theta), self._batch(batch))
        self.counter.charge("loss_evals")
        return out

    def eval_gradients(self, theta, batch=FULL) -> np.ndarray:
        """``(m, d)`` matrix whose rows are the per-task gradients."""
        out = self._gradients(self._theta(theta), self._batch(batch))
        self.counter.charge("pertask_gevals", self.m)
        return out

    def eval_weighted_gradient(self, theta, weights, batch=FULL) -> np.ndarray:
        """Gradient of ``sum_i w_i f_i`` in a single backward-equivalent pass."""
        w = as_vector(weights, "weights")
        if w.shape != (self.m,):
            raise DimensionError(f"weights must have length {self.m}")
        out = self._weighted_gradient(self._theta(theta), w, self._batch(batch))
        self.counter.charge("weighted_gevals")
        return out

    def sample_batch(self, rng: np.random.Generator, size: int | None = None):
        """Uniform without-replacement minibatch; ``FULL`` for deterministic
        problems or when ``size`` is ``None``."""
        if self.deterministic or size is None:
            return FULL
        if not 1 <= size <= self.pool_size:
            raise InvalidValueError(f"batch size must be in [1, {self.pool_size}], got {size}")
        return rng.choice(self.pool_size, size=size, replace=False)

    # -- subclass hooks ---------------------------------------------------
    def _losses(self, theta, idx):
        raise NotImplementedError

    def _gradients(self, theta, idx):
        raise NotImplementedError

    def _weighted_gradient(self, theta, w, idx):
        return w @ self._gradients(theta, idx)


# ---------------------------------------------------------------------------
# quadratics

@dataclass
class QuadraticSpec:
    centers: np.ndarray                  # (m, d)
    curvatures: np.ndarray | None = None  # (m, d, d); None means identity for every task

    def validate(self) -> tuple[np.ndarray, np.ndarray | None]:
        c = as_matrix(self.centers, "centers")
        if self.curvatures is None:
            return c, None
        a = np.array(self.curvatures, dtype=np.float64)
        m, d = c.shape
        if a.shape != (m, d, d):
            raise DimensionError(f"curvatures must have shape {(m, d, d)}, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InvalidValueError("curvatures contain NaN or Inf")
        if np.max(np.abs(a - a.transpose(0, 2, 1))) > 1e-12:
            raise InvalidValueError("curvature matrices must be symmetric")
        if np.min(np.linalg.eigvalsh(a)) <= 0:
            raise InvalidValueError("curvature matrices must be positive definite")
        return c, a


class QuadraticProblem(MooProblem):
    def __init__(self, centers: np.ndarray, curvatures: np.ndarray | None = None):
        m, d = centers.shape
        if curvatures is None:
            smooth = np.ones(m)
        else:
            smooth = np.linalg.eigvalsh(curvatures)[:, -1]
        super().__init__(m, d, 0, smooth)
        self.centers = centers
        self.curvatures = curvatures

    @property
    def identity(self) -> bool:
        return self.curvatures is None

    @property
    def pareto_segment(self):
        """Endpoints ``(c_1, c_2)`` of the exact Pareto set, for two identity quadratics."""
        if self.m == 2 and self.identity:
            return self.centers[0].copy(), self.centers[1].copy()
        return None

    def distance_to_pareto_set(self, theta) -> float:
        seg = self.pareto_segment
        if seg is None:
            raise InvalidValueError("exact Pareto set only known for two identity quadratics")
        a, b = seg
        ab = b - a
        denom = ab @ ab
        t = 0.0 if denom == 0 else float(np.clip((theta - a) @ ab / denom, 0.0, 1.0))
        return float(np.linalg.norm(theta - (a + t * ab)))

    def _residuals(self, theta):
        return theta[None, :] - self.centers

    def _losses(self, theta, idx):
        r = self._residuals(theta)
        if self.identity:
            return 0.5 * np.einsum("ij,ij->i", r, r)
        return 0.5 * np.einsum("ij,ijk,ik->i", r, self.curvatures, r)

    def _gradients(self, theta, idx):
        r = self._residuals(theta)
        if self.identity:
            return r
        return np.einsum("ijk,ik->ij", self.curvatures, r)

    def _weighted_gradient(self, theta, w, idx):
        if self.identity:
            return w.sum() * theta - w @ self.centers
        return np.einsum("i,ijk,ik->j", w, self.curvatures, self._residuals(theta))


def make_quadratic_suite(spec: QuadraticSpec) -> QuadraticProblem:
    centers, curv = spec.validate()
    return QuadraticProblem(centers, curv)


def conflicting_quadratics(m: int = 2, d: int = 2, spread: float = 1.0) -> QuadraticProblem:
    """Identity quadratics with centers on the first ``m`` coordinate axes (or
    ``(0,..), (1,0,..)`` for ``m == 2``), so task gradients conflict."""
    if m == 2:
        centers = np.zeros((2, d))
        centers[1, 0] = spread
    else:
        if d < m:
            raise DimensionError("need d >= m for axis-aligned centers")
        centers = spread * np.eye(m, d)
    return make_quadratic_suite(QuadraticSpec(centers))


def random_quadratic_spec(rng: np.random.Generator, m: int, d: int, cond: float = 10.0,
                          center_scale: float = 1.0) -> QuadraticSpec:
    """Random SPD curvatures with eigenvalues in ``[1, cond]`` and Gaussian centers."""
    centers = center_scale * rng.standard_normal((m, d))
    mats = np.empty((m, d, d))
    for i in range(m):
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        eig = np.exp(rng.uniform(0.0, np.log(cond), d))
        a = (q * eig) @ q.T
        mats[i] = 0.5 * (a + a.T)
    return QuadraticSpec(centers, mats)


# ---------------------------------------------------------------------------
# shared-bottom MLP

@dataclass
class MlpSpec:
    input_dim: int = 4
    shared: Sequence[int] = (8,)
    n_tasks: int = 2
    pool_size: int = 256
    noise: float = 0.1
    correlation: float = 0.0  # teacher correlation across tasks, in [-1, 1]
    teacher_hidden: int = 8
    data_seed: int = 0

    def validate(self) -> None:
        if len(self.shared) < 1:
            raise InvalidValueError("need at least one shared layer")
        if min(self.shared) < 1 or self.input_dim < 1 or self.n_tasks < 1:
            raise InvalidValueError("layer widths and task count must be positive")
        if self.pool_size < 1:
            raise InvalidValueError("pool_size must be positive")
        if not -1.0 <= self.correlation <= 1.0:
            raise InvalidValueError("correlation must lie in [-1, 1]")
        if self.noise < 0 or self.teacher_hidden < 1:
            raise InvalidValueError("noise must be >= 0 and teacher_hidden >= 1")


def make_mlp_data(spec: MlpSpec) -> tuple[np.ndarray, np.ndarray]:
    """Inputs ~ N(0, I); targets from a random tanh teacher whose per-task
    read-out vectors share a common component of weight ``correlation``."""
    rng = make_rng(spec.data_seed)
    x = rng.standard_normal((spec.pool_size, spec.input_dim))
    w_t = rng.standard_normal((spec.input_dim, spec.teacher_hidden)) / np.sqrt(spec.input_dim)
    z = np.tanh(x @ w_t)
    common = rng.standard_normal(spec.teacher_hidden)
    indep = rng.standard_normal((spec.n_tasks, spec.teacher_hidden))
    rho = spec.correlation
    # odd tasks flip the shared component when rho < 0, so negative correlation means conflict
    signs = np.ones(spec.n_tasks)
    signs[1::2] = 1.0 if rho >= 0 else -1.0
    readout = (signs[:, None] * np.sqrt(abs(rho)) * common
               + np.sqrt(1.0 - abs(rho)) * indep)
    y = z @ readout.T / np.sqrt(spec.teacher_hidden)
    y = y + spec.noise * rng.standard_normal(y.shape)
    return x, y


class MlpProblem(MooProblem):
    """Shared tanh layers followed by one linear head per task.

    Parameter layout: ``W_1, b_1, ..., W_L, b_L`` for the shared layers, then the
    ``(h, m)`` head matrix and the ``m`` head biases, all flattened row-major.
    """

    def __init__(self, spec: MlpSpec, x: np.ndarray, y: np.ndarray):
        self.spec = spec
        self.x = x
        self.y = y
        widths = [spec.input_dim, *spec.shared]
        self._shapes = []
        for a, b in zip(widths[:-1], widths[1:]):
            self._shapes += [(a, b), (b,)]
        self._shapes += [(widths[-1], spec.n_tasks), (spec.n_tasks,)]
        self._sizes = [int(np.prod(s)) for s in self._shapes]
        super().__init__(spec.n_tasks, sum(self._sizes), spec.pool_size)

    def unpack(self, theta: np.ndarray) -> list[np.ndarray]:
        out, pos = [], 0
        for shape, size in zip(self._shapes, self._sizes):
            out.append(theta[pos:pos + size].reshape(shape))
            pos += size
        return out

    def init_params(self, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
        parts = []
        for shape in self._shapes:
            if len(shape) == 2:
                parts.append(scale * rng.standard_normal(shape).ravel() / np.sqrt(shape[0]))
            else:
                parts.append(np.zeros(shape))
        return np.concatenate(parts)

    def _forward(self, theta, idx):
        params = self.unpack(theta)
        x = self.x if idx is None else self.x[idx]
        y = self.y if idx is None else self.y[idx]
        acts = [x]
        for w, b in zip(params[:-2:2], params[1:-2:2]):
            acts.append(np.tanh(acts[-1] @ w + b))
        head_w, head_b = params[-2], params[-1]
        resid = acts[-1] @ head_w + head_b - y
        return params, acts, resid

    def _losses(self, theta, idx):
        _, _, resid = self._forward(theta, idx)
        return np.mean(resid ** 2, axis=0)

    def _backward(self, params, acts, dpred):
        """Backprop ``dpred`` (n, m) -- already scaled by task weights -- to a flat gradient."""
        head_w = params[-2]
        grads = [None] * len(params)
        grads[-2] = acts[-1].T @ dpred
        grads[-1] = dpred.sum(axis=0)
        dh = dpred @ head_w.T
        n_shared = (len(params) - 2) // 2
        for layer in reversed(range(n_shared)):
            a, a_prev = acts[layer + 1], acts[layer]
            dz = dh * (1.0 - a * a)
            grads[2 * layer] = a_prev.T @ dz
            grads[2 * layer + 1] = dz.sum(axis=0)
            if layer:
                dh = dz @ params[2 * layer].T
        return np.concatenate([g.ravel() for g in grads])

    def _weighted_gradient(self, theta, w, idx):
        params, acts, resid = self._forward(theta, idx)
        dpred = (2.0 / resid.shape[0]) * resid * w[None, :]
        return self._backward(params, acts, dpred)

    def _gradients(self, theta, idx):
        params, acts, resid = self._forward(theta, idx)
        scaled = (2.0 / resid.shape[0]) * resid
        rows = []
        for i in range(self.m):
            dpred = np.zeros_like(scaled)
            dpred[:, i] = scaled[:, i]
            rows.append(self._backward(params, acts, dpred))
        return np.vstack(rows)


def make_mlp_problem(spec: MlpSpec) -> MlpProblem:
    spec.validate()
    x, y = make_mlp_data(spec)
    return MlpProblem(spec, x, y)


# ---------------------------------------------------------------------------
# auxiliary learning

@dataclass
class AuxProblemSpec:
    """Main tasks plus one auxiliary task.

    ``aux=None`` builds the aligned construction: the auxiliary loss is a copy
    of the target task's loss (identical gradients). Otherwise ``aux`` is a
    one-task ``QuadraticSpec`` appended to quadratic main tasks.
    """
    main: QuadraticSpec | MlpSpec
    target: int = 0
    aux: QuadraticSpec | None = None


class AuxProblem(MooProblem):
    """Tasks ``0..m-2`` are main tasks, task ``m-1`` is auxiliary.

    The training loss is ``sum(main losses) + omega * aux loss``; the upper
    level only looks at ``target_task``.
    """

    def __init__(self, base: MooProblem, target: int = 0, aligned: bool = True):
        n_main = base.m if aligned else base.m - 1
        if not 0 <= target < n_main:
            raise InvalidValueError(f"target task {target} is not a main task")
        self.base = base
        self.aligned = aligned
        self.target_task = int(target)
        m = base.m + 1 if aligned else base.m
        self.aux_task = m - 1
        self.main_tasks = list(range(m - 1))
        smooth = None
        if base.smoothness is not None:
            smooth = (np.append(base.smoothness, base.smoothness[target]) if aligned
                      else base.smoothness)
        super().__init__(m, base.d, base.pool_size, smooth)

    def lower_weights(self, omega: float) -> np.ndarray:
        w = np.ones(self.m)
        w[self.aux_task] = omega
        return w

    def init_params(self, rng, scale: float = 1.0):
        if hasattr(self.base, "init_params"):
            return self.base.init_params(rng, scale)
        return scale * rng.standard_normal(self.d)

    def _losses(self, theta, idx):
        f = self.base._losses(theta, idx)
        return np.append(f, f[self.target_task]) if self.aligned else f

    def _gradients(self, theta, idx):
        g = self.base._gradients(theta, idx)
        return np.vstack([g, g[self.target_task]]) if self.aligned else g

    def _weighted_gradient(self, theta, w, idx):
        if self.aligned:
            folded = w[:-1].copy()
            folded[self.target_task] += w[-1]
            return self.base._weighted_gradient(theta, folded, idx)
        return self.base._weighted_gradient(theta, w, idx)


def make_aux_problem(spec: AuxProblemSpec) -> AuxProblem:
    if isinstance(spec.main, MlpSpec):
        if spec.aux is not None:
            raise InvalidValueError("an MLP main problem only supports the aligned auxiliary task")
        return AuxProblem(make_mlp_problem(spec.main), spec.target, aligned=True)
    if spec.aux is None:
        return AuxProblem(make_quadratic_suite(spec.main), spec.target, aligned=True)
    main_c, main_a = spec.main.validate()
    aux_c, aux_a = spec.aux.validate()
    if aux_c.shape[0] != 1 or aux_c.shape[1] != main_c.shape[1]:
        raise DimensionError("auxiliary spec must hold exactly one task of matching dimension")
    d = main_c.shape[1]
    eye = lambda k: np.broadcast_to(np.eye(d), (k, d, d))  # noqa: E731
    if main_a is None and aux_a is None:
        curv = None
    else:
        curv = np.concatenate([eye(len(main_c)) if main_a is None else main_a,
                               eye(1) if aux_a is None else aux_a])
    base = QuadraticProblem(np.vstack([main_c, aux_c]), curv)
    return AuxProblem(base, spec.target, aligned=False)


def aligned_aux_quadratics(d: int = 3, spread: float = 1.0, target: int = 0) -> AuxProblem:
    """Three identity-quadratic main tasks on the coordinate axes plus an aligned
    auxiliary copy of the target task."""
    main = QuadraticSpec(spread * np.eye(3, d))
    return make_aux_problem(AuxProblemSpec(main, target))


def gradient_check(problem: MooProblem, theta, batch=FULL, h: float = 1e-6) -> float:
    """Relative error between ``eval_gradients`` and central finite differences of ``eval_losses``."""
    theta = np.asarray(theta, dtype=np.float64)
    with problem.counter.paused():
        g = problem.eval_gradients(theta, batch)
        fd = np.empty_like(g)
        for k in range(problem.d):
            e = np.zeros(problem.d)
            e[k] = h
            fd[:, k] = (problem.eval_losses(theta + e, batch) - problem.eval_losses(theta - e, batch)) / (2 * h)
    scale = max(np.linalg.norm(g), np.linalg.norm(fd), 1e-8)
    return float(np.linalg.norm(g - fd) / scale)
