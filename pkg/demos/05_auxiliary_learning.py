"""Learning the weight of an auxiliary task.

Three main quadratic tasks plus an auxiliary task whose gradient is a copy of
task 0's. The training loss is the sum of the main losses plus omega times the
auxiliary loss. The upper level tunes omega to lower task 0's loss after each
step, using a one-dimensional zeroth-order estimate. The fixed omega = 0 run
is the baseline.
"""

import numpy as np

from marigold.bilevel import TaskLoss, generalized_step, init_auxiliary_state
from marigold.core import make_rng
from marigold.optimizers import COMMIT, SGD, apply_weighted_update
from marigold.problems import aligned_aux_quadratics

problem = aligned_aux_quadratics(d=3, target=0)
theta0 = 2.0 * make_rng(0).standard_normal(3)

# learned omega
rng = make_rng(1)
state = init_auxiliary_state(omega=0.0, r=1.0, lr=0.01, upper_optimizer="sgd")
theta, opt = theta0.copy(), SGD(0.05)
for k in range(2000):
    res = generalized_step(state, theta, TaskLoss(0), problem, opt, rng)
    state, theta, opt = res.state, res.theta, res.optimizer
learned = problem.eval_losses(theta)[0]

# fixed omega = 0
theta, opt = theta0.copy(), SGD(0.05)
for k in range(2000):
    theta, opt = apply_weighted_update(opt, problem.lower_weights(0.0), theta, problem, None, COMMIT)
fixed = problem.eval_losses(theta)[0]

print(f"learned omega = {state.omega:.3f}")
print(f"task-0 loss: learned {learned:.4f}  vs  fixed omega = 0: {fixed:.4f}")
print(f"main losses at the end of the learned run: {np.round(problem.eval_losses(res.theta)[:3], 4)}")
