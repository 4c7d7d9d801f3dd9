"""Zeroth-order Bregman linearized augmented Lagrangian solver.

Equality-constrained stochastic problems whose objective is only available
through noisy function values are solved with two-point gradient estimates,
a momentum variance-reduced surrogate, l_q-Bregman proximal steps and a
dual ascent on the multipliers.
"""
from .alm import (KnownConstants, ProblemSpec, RunReport, SolverConfig, TraceRow,
                  al_gradient, derive_theory_params, multiplier_update, restart_penalties,
                  solve, solve_with_restarts)
from .bregman import (BregmanGeometry, FeasibleSet, NonsmoothSpec, bregman_distance,
                      inverse_mirror_map, prox_step, v_grad, v_value)
from .estimator import (DirectionDistribution, MomentState, SmoothingMoments,
                        StochasticOracle, estimate_sp, mean_estimate, momentum_update,
                        sample_direction, smoothed_gradient, smoothing_moments,
                        two_point_estimate)
from .exceptions import (BregalmError, ConfigError, EstimationError, NumericalError,
                         StageError)
from .metrics import (KktResidual, empirical_beta, gradient_mapping, kkt_residual, norm_p)
from .problems import (LassoInstance, SyntheticKkt, gen_constrained_lasso, gen_synthetic_kkt,
                       load_instance, save_instance)

__version__ = "0.1.0"
