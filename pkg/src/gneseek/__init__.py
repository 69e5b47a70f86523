"""Distributed GNE seeking for aggregative games of multi-integrator agents."""

__version__ = "0.1.0"

from .graph import (Digraph, SpectralSummary, laplacian, check_weight_balanced,
                    check_strongly_connected, spectral_summary, random_balanced_digraph)
from .game import (BoxSet, CouplingBlock, GameSpec, project, aggregate,
                   pseudo_gradient, constraint_residual, random_quadratic_game)
from .dynamics import (AgentDynamicsSpec, RuleParams, StateLayout, SimState,
                       rhs_double_integrator, rhs_multi_integrator, make_rhs,
                       validate_initial_state, default_initial_state,
                       equilibrium_state, estimator_boundary_layer_rhs)
from .sim import (IntegratorConfig, Trajectory, integrate, fit_exponential_rate,
                  fit_log_decay, trajectory_to_csv)
from .analysis import (KktReport, MonotonicityEstimate, ConditionReport,
                       kkt_report, oracle_gne, estimate_monotonicity,
                       check_theorem1, check_theorem2, check_gradients,
                       coupling_block_norm, theorem1_k_threshold)
from .errors import (GneseekError, ConfigError, ValidationFailure,
                     IntegrationDiverged, OracleError)
