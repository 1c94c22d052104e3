"""Automatic debiased machine learning for linear and nonlinear functionals of regressions."""

from .data import Dataset, DensitySpec, FoldPlan, Schema, attach_simulated_draws, load_csv, make_folds
from .estimator import (
    AutoDML,
    EstimateReport,
    alpha_robustness_check,
    assumption_diagnostics,
    crossfit_estimate,
    orthogonality_check,
    psi_eval,
)
from .exceptions import (
    AutoDMLError,
    ConfigError,
    DataError,
    DegenerateWeightsError,
    DivergenceError,
    FoldError,
    NumericalError,
    SchemaError,
)
from .funcspace import (
    DictionaryFunction,
    MlpFunction,
    PartiallyLinearFunction,
    init_mlp,
    load_function,
    save_function,
)
from .learners import DictionaryLearner, FixedLearner, MLPLearner, PartiallyLinearLearner
from .problems import FunctionalSpec, LinearTerm, ProblemSpec, ResidualSpec, gateaux, m_eval
from .riesz import AlphaLearnerConfig, learn_alpha_multi, learn_alpha_single
from .sim import enumerate_oracles, make_dgp, monte_carlo
from .train import LossSpec, TrainConfig, empirical_loss, train

__version__ = "0.1.0"

__all__ = [
    "AlphaLearnerConfig", "AutoDML", "AutoDMLError", "ConfigError", "DataError", "Dataset",
    "DegenerateWeightsError", "DensitySpec", "DictionaryFunction", "DictionaryLearner",
    "DivergenceError", "EstimateReport", "FixedLearner", "FoldError", "FoldPlan",
    "FunctionalSpec", "LinearTerm", "LossSpec", "MLPLearner", "MlpFunction", "NumericalError",
    "PartiallyLinearFunction", "PartiallyLinearLearner", "ProblemSpec", "ResidualSpec",
    "Schema", "SchemaError", "TrainConfig", "alpha_robustness_check", "assumption_diagnostics",
    "attach_simulated_draws", "crossfit_estimate", "empirical_loss", "enumerate_oracles",
    "gateaux", "init_mlp", "learn_alpha_multi", "learn_alpha_single", "load_csv",
    "load_function", "m_eval", "make_dgp", "make_folds", "monte_carlo", "orthogonality_check",
    "psi_eval", "save_function", "train",
]
