"""Mixed tensor oracles for min-min convex problems."""
from .bdgm import BdgmConfig, bdgm_solve, listen_exits
from .exceptions import ConfigurationError, ContractViolation, ConvergenceFailure, NumericalError
from .fgm import fgm_restarted_inexact, fgm_run, gradient_mapping
from .minmin import (MinMinProblem, MixedOracleRecord, delta_compact, delta_max_for_outer,
                     delta_unconstrained, eps_tilde_for_delta, eps_tilde_for_target,
                     joint_fgm_solve, minmin_solve, mixed_oracle_eval)
from .model import (FirstOrderOracle, InexactOracleOutput, SecondOrderOracle, SmoothnessSpec,
                    TensorStepModel, bregman_divergence, check_delta_L_oracle, model_gradient,
                    prox_power, third_directional_fd)
from .sets import Box, EuclideanBall, ProductSet, SimpleSet, WholeSpace, set_from_dict
from .tensor import (CompositeObjective, atmi3_restarted, atmi3_run, bilevel_restarted,
                     bilevel_run, necg_solve)
from .zoo import QuadQuarticMinMin, derivative_check, make_instance, reference_solve

__version__ = "0.1.0"

__all__ = [
    "BdgmConfig", "bdgm_solve", "listen_exits",
    "ConfigurationError", "ContractViolation", "ConvergenceFailure", "NumericalError",
    "fgm_restarted_inexact", "fgm_run", "gradient_mapping",
    "MinMinProblem", "MixedOracleRecord", "delta_compact", "delta_max_for_outer",
    "delta_unconstrained", "eps_tilde_for_delta", "eps_tilde_for_target", "joint_fgm_solve",
    "minmin_solve", "mixed_oracle_eval",
    "FirstOrderOracle", "InexactOracleOutput", "SecondOrderOracle", "SmoothnessSpec",
    "TensorStepModel", "bregman_divergence", "check_delta_L_oracle", "model_gradient",
    "prox_power", "third_directional_fd",
    "Box", "EuclideanBall", "ProductSet", "SimpleSet", "WholeSpace", "set_from_dict",
    "CompositeObjective", "atmi3_restarted", "atmi3_run", "bilevel_restarted", "bilevel_run",
    "necg_solve",
    "QuadQuarticMinMin", "derivative_check", "make_instance", "reference_solve",
]
