"""Baseline task weightings on a hand-made gradient matrix.

Three tasks whose gradients partly conflict. The min-norm combination (MGDA),
PCGrad's projected sum and the linearized worst-case-decrement weights all
produce different update directions; every one of them needs the full matrix
of per-task gradients.
"""

import numpy as np

from marigold.balancers import (gradient_balance, linearized_objective, loss_balance_weights,
                                min_norm_solve)
from marigold.core import make_rng

G = np.array([[1.0, 0.2],
              [-0.6, 1.0],
              [0.1, -0.9]])
rng = make_rng(0)
alpha = 0.1

for name in ("mgda", "pcgrad", "linearized"):
    out = gradient_balance(name, G, rng, alpha)
    d = out.direction
    print(f"{name:>10}: direction {np.round(d, 4)}  task inner products {np.round(G @ d, 4)}"
          + ("" if out.weights is None else f"  weights {np.round(out.weights, 3)}"))

lam, gap = min_norm_solve(G)
print(f"\nstationarity gap (min-norm value): {gap:.4f}")
print(f"linearized worst-case change at uniform weights: "
      f"{linearized_objective(G, np.full(3, 1 / 3), alpha):.4f}")

losses = np.array([2.0, 0.5, 1.0])
for name in ("ls", "si", "rlw"):
    print(f"{name:>10}: weights {np.round(loss_balance_weights(name, losses, rng), 3)}")
