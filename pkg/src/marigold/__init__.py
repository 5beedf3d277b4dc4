"""Zeroth-order bi-level task balancing for multi-task learning, with baselines,
synthetic problem suites and a deterministic benchmark runner."""

from .balancers import (BalancerOutput, gradient_balance, linearized_decrement_balance,
                        loss_balance_weights, min_norm_solve, pcgrad_combine, project_simplex)
from .bilevel import (AuxiliaryState, MarigoldOptions, MarigoldState, StepResult, TaskLoss,
                      WorstCaseDecrement, auxiliary_step, exact_surrogate_hypergrad_fd,
                      generalized_step, hypergrad, init_auxiliary_state, init_marigold_state,
                      marigold_step, marigold_weights, surrogate_value, worst_case_decrement)
from .core import (make_rng, sample_unit_ball, sample_unit_sphere, smoothed_value_mc, softmax,
                   zo_gradient_estimate, zo_gradient_mc)
from .errors import (ConfigError, DimensionError, DomainError, InvalidValueError, MarigoldError,
                     NumericalFailure)
from .metrics import delta_k, higher, lower, mean_rank, pareto_stationarity_gap
from .optimizers import COMMIT, PROBE, SGD, Adam, apply_update, make_optimizer
from .problems import (FULL, AuxProblem, MlpProblem, MlpSpec, QuadraticProblem, QuadraticSpec,
                       aligned_aux_quadratics, conflicting_quadratics, make_mlp_problem,
                       make_quadratic_suite)

__version__ = "0.1.0"
