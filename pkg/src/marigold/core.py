"""Vector helpers, seeded randomness, sphere/ball sampling and zeroth-order estimators.

Vectors and matrices are plain float64 numpy arrays. Random streams are
``numpy.random.Generator`` objects backed by PCG64 and seeded through
``SeedSequence`` so that streams can be split reproducibly.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, InvalidValueError

SIMPLEX_TOL = 1e-9


# ---------------------------------------------------------------------------
# array validation

def as_vector(x, name: str = "vector") -> np.ndarray:
    """Return ``x`` as a finite 1-D float64 array (copied)."""
    arr = np.array(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionError(f"{name} must be a nonempty 1-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidValueError(f"{name} contains NaN or Inf")
    return arr


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise DimensionError(f"{name} must be a nonempty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidValueError(f"{name} contains NaN or Inf")
    return arr


def is_simplex(w, tol: float = SIMPLEX_TOL) -> bool:
    w = np.asarray(w, dtype=np.float64)
    return bool(w.ndim == 1 and w.size > 0 and np.all(np.isfinite(w))
                and np.all(w >= 0.0) and abs(w.sum() - 1.0) <= tol)


def check_simplex(w, name: str = "weights") -> np.ndarray:
    """Validate a probability vector (entries >= 0, sum within 1e-9 of one)."""
    arr = as_vector(w, name)
    if np.any(arr < 0.0) or abs(arr.sum() - 1.0) > SIMPLEX_TOL:
        raise InvalidValueError(f"{name} is not on the probability simplex: {arr}")
    return arr


def uniform_simplex(m: int) -> np.ndarray:
    return np.full(m, 1.0 / m)


# ---------------------------------------------------------------------------
# random streams

def make_rng(seed: int | Sequence[int]) -> np.random.Generator:
    """Deterministic generator for ``seed`` (an int or a tuple of ints used as a spawn key)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def split_rng(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Split ``rng`` into ``n`` independent child streams."""
    return rng.spawn(n)


# ---------------------------------------------------------------------------
# sampling

def _check_dim(n: int) -> None:
    if int(n) < 1:
        raise DimensionError(f"dimension must be >= 1, got {n}")


def sample_unit_sphere(rng: np.random.Generator, n: int, size: int | None = None) -> np.ndarray:
    """Uniform sample from the unit sphere in R^n (normalized Gaussian draw).

    With ``size`` given, returns a ``(size, n)`` array of independent samples.
    """
    _check_dim(n)
    shape = (n,) if size is None else (size, n)
    while True:
        z = rng.standard_normal(shape)
        norms = np.linalg.norm(z, axis=-1, keepdims=True)
        # a zero Gaussian draw has probability zero, but redraw rather than divide by it
        if np.all(norms > 0.0):
            return z / norms


def sample_unit_ball(rng: np.random.Generator, n: int, size: int | None = None) -> np.ndarray:
    """Uniform sample from the closed unit ball in R^n (sphere point scaled by U**(1/n))."""
    _check_dim(n)
    s = sample_unit_sphere(rng, n, size)
    radius = rng.random(None if size is None else (size, 1)) ** (1.0 / n)
    return s * radius


def softmax(logits) -> np.ndarray:
    """Numerically stable softmax; the output always lies on the simplex."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise DimensionError("softmax needs a nonempty 1-D input")
    if np.any(np.isnan(z)):
        raise InvalidValueError("softmax input contains NaN")
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax_vjp(weights: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. softmax outputs back to the logits: J^T g."""
    return weights * (g - weights @ g)


# ---------------------------------------------------------------------------
# zeroth-order estimation

def zo_gradient_estimate(f_eval: Callable[[np.ndarray], float], x, r: float, v,
                         antithetic: bool = False) -> np.ndarray:
    """Single-point zeroth-order gradient estimate ``(d/r) f(x + r v) v``.

    ``v`` must be a unit vector. The estimate is unbiased for the gradient of
    the ball-smoothed function ``f_r``. With ``antithetic=True`` the estimate is
    averaged with its mirror ``-v`` (two evaluations, same expectation).
    """
    if not r > 0:
        raise InvalidValueError(f"perturbation scale r must be positive, got {r}")
    x = as_vector(x, "x")
    v = as_vector(v, "v")
    if v.shape != x.shape:
        raise DimensionError(f"direction has shape {v.shape}, point has shape {x.shape}")
    if abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise InvalidValueError("direction must have unit norm")
    d = x.size
    if antithetic:
        return (d / (2.0 * r)) * (f_eval(x + r * v) - f_eval(x - r * v)) * v
    return (d / r) * f_eval(x + r * v) * v


def zo_gradient_samples(f_batch: Callable[[np.ndarray], np.ndarray], x, r: float,
                        directions: np.ndarray, antithetic: bool = False) -> np.ndarray:
    """Vectorized ``zo_gradient_estimate`` over the rows of ``directions``.

    ``f_batch`` maps a ``(k, d)`` array of points to ``k`` function values.
    Returns a ``(k, d)`` array with one estimate per row.
    """
    if not r > 0:
        raise InvalidValueError(f"perturbation scale r must be positive, got {r}")
    x = as_vector(x, "x")
    directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    if directions.shape[1] != x.size:
        raise DimensionError("direction dimension does not match x")
    d = x.size
    if antithetic:
        vals = f_batch(x + r * directions) - f_batch(x - r * directions)
        return (d / (2.0 * r)) * vals[:, None] * directions
    return (d / r) * f_batch(x + r * directions)[:, None] * directions


def zo_gradient_mc(f_batch, x, r: float, n_samples: int, rng: np.random.Generator,
                   antithetic: bool = False, chunk: int = 50_000):
    """Monte Carlo mean of the zeroth-order estimator and its per-coordinate standard error."""
    if n_samples < 2:
        raise InvalidValueError("need at least two samples for a standard error")
    x = as_vector(x, "x")
    total = np.zeros(x.size)
    total_sq = np.zeros(x.size)
    done = 0
    while done < n_samples:
        k = min(chunk, n_samples - done)
        g = zo_gradient_samples(f_batch, x, r, sample_unit_sphere(rng, x.size, k), antithetic)
        total += g.sum(axis=0)
        total_sq += (g * g).sum(axis=0)
        done += k
    mean = total / n_samples
    var = (total_sq - n_samples * mean ** 2) / (n_samples - 1)
    return mean, np.sqrt(np.maximum(var, 0.0) / n_samples)


def smoothed_value_mc(f_eval, x, r: float, n_samples: int, rng: np.random.Generator,
                      batched: bool = False, return_stderr: bool = False):
    """Monte Carlo estimate of ``f_r(x) = E_{u ~ Unif(ball)} f(x + r u)``.

    ``batched=True`` means ``f_eval`` accepts a ``(k, d)`` array and returns ``k`` values.
    """
    if not r > 0:
        raise InvalidValueError(f"perturbation scale r must be positive, got {r}")
    if n_samples < 1:
        raise InvalidValueError("n_samples must be >= 1")
    x = as_vector(x, "x")
    pts = x + r * sample_unit_ball(rng, x.size, n_samples)
    if batched:
        vals = np.asarray(f_eval(pts), dtype=np.float64)
    else:
        vals = np.array([f_eval(p) for p in pts], dtype=np.float64)
    mean = float(vals.mean())
    if not return_stderr:
        return mean
    se = float(vals.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else float("inf")
    return mean, se
