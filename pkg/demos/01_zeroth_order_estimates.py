"""Zeroth-order gradient estimates from function values alone.

The single-point estimator (d/r) f(x + r v) v, with v uniform on the unit
sphere, is unbiased for the gradient of the ball-smoothed function f_r. For an
l-smooth f the smoothing moves the value by at most l r^2 / 2 and the gradient
by at most l r. This script measures both on a quadratic.
"""

import numpy as np

from marigold.core import make_rng, smoothed_value_mc, zo_gradient_mc

rng = make_rng(0)
d = 6
A = np.diag(np.linspace(1.0, 3.0, d))      # smoothness constant l = 3
c = np.ones(d)
x = np.zeros(d)


def f(pts):
    r = np.atleast_2d(pts) - c
    return 0.5 * np.einsum("ij,jk,ik->i", r, A, r)


grad = A @ (x - c)
print(f"f(x) = {f(x)[0]:.4f}   |grad f(x)| = {np.linalg.norm(grad):.4f}")
print(f"{'r':>6} {'|f_r - f|':>12} {'l r^2/2':>10} {'|zo - grad|':>12} {'3 SE':>10} {'l r':>8}")
for r in (0.5, 0.1, 0.01):
    fr = smoothed_value_mc(f, x, r, 100_000, rng, batched=True)
    mean, se = zo_gradient_mc(f, x, r, 100_000, rng)
    print(f"{r:6.2f} {abs(fr - f(x)[0]):12.2e} {3 * r * r / 2:10.2e} "
          f"{np.linalg.norm(mean - grad):12.3f} {3 * np.linalg.norm(se):10.3f} {3 * r:8.2f}")

# the estimator's variance grows like 1/r; pairing v with -v removes the constant part
mean_pair, se_pair = zo_gradient_mc(f, x, 0.01, 100_000, rng, antithetic=True)
print(f"mirrored pairs at r = 0.01: error {np.linalg.norm(mean_pair - grad):.4f}, "
      f"3 SE {3 * np.linalg.norm(se_pair):.4f}")
