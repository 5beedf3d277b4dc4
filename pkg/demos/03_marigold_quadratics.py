"""Task weights learned from zeroth-order probes on conflicting quadratics.

Two identity quadratics centred at (0, 0) and (1, 0). The Pareto set is the
segment between the centres. Each MARIGOLD step probes the update map once at
perturbed weights, adjusts the weight logits, then takes one committed SGD
step. The loop below tracks distance to the Pareto set and the evaluation
counters.
"""

import numpy as np

from marigold.bilevel import init_marigold_state, marigold_step
from marigold.core import make_rng
from marigold.metrics import pareto_stationarity_gap
from marigold.optimizers import SGD
from marigold.problems import conflicting_quadratics

problem = conflicting_quadratics(2, 2)
rng = make_rng(1)
theta = np.array([2.0, 3.0])
state = init_marigold_state(2, beta=1.0, r=1e-2, upper_lr_u=1e-2, upper_lr_v=1e-2)
opt = SGD(0.05)

for k in range(1, 2001):
    res = marigold_step(state, theta, problem, opt, rng)
    state, theta, opt = res.state, res.theta, res.optimizer
    if k in (1, 10, 100, 500, 2000):
        with problem.counter.paused():
            gap = pareto_stationarity_gap(problem.eval_gradients(theta))
        print(f"iter {k:5d}  theta {np.round(theta, 4)}  lambda {np.round(res.lam, 3)}  "
              f"rho {np.round(res.rho, 3)}  gap {gap:.2e}  "
              f"dist {problem.distance_to_pareto_set(theta):.2e}")

c = problem.counter
print(f"\nper iteration: {c.weighted_gevals / 2000:g} weighted gradients, "
      f"{c.loss_evals / 2000:g} loss vectors, {c.pertask_gevals} per-task gradients")
