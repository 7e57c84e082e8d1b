"""Bayesian sum-of-trees regression with an exact functional-ANOVA
decomposition.

The regression function is modeled as a sum of identifiable binary-product
trees: each tree splits every variable of its component exactly once and
its cell heights are constrained to integrate to zero along every axis
under the empirical marginals, which makes the per-component decomposition
of the fit unique. Inference is MCMC with a variable number of trees.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND as KERNEL_BACKEND
from .dataset import (DataMatrix, EmpiricalMarginals, SplitGrid,
                      StandardizationParams, build_marginals, build_split_grid,
                      kfold_split, left_mass, load_csv, standardize)
from .errors import (AnovaTreesError, AuditError, ConfigError, DataError,
                     NumericError, UsageError)
from .posterior import (ComponentSummary, Draw, PosteriorDraws,
                        component_norm, crps, importance_scores, load_draws,
                        predict_mean, predictive_samples, rmse, save_draws,
                        select_components)
from .priors import Hyperparams, calibrate_lambda, component_size_weights
from .sampler import ChainConfig, McmcState, run_chain, sweep
from .synthetic import SyntheticSpec, friedman, generate
from .tree import (CellAssignment, IdentifiableTree, assign_cells, build_tree,
                   evaluate, height_multipliers, identifiability_residual,
                   leverage)

__all__ = [
    "AnovaTreesError", "AuditError", "CellAssignment",
    "ChainConfig", "ComponentSummary", "ConfigError", "DataError",
    "DataMatrix", "Draw", "EmpiricalMarginals", "Hyperparams",
    "IdentifiableTree", "KERNEL_BACKEND", "McmcState", "NumericError",
    "PosteriorDraws", "SplitGrid", "StandardizationParams", "SyntheticSpec",
    "UsageError", "assign_cells", "build_marginals", "build_split_grid",
    "build_tree", "calibrate_lambda", "component_norm",
    "component_size_weights", "crps", "evaluate", "friedman", "generate",
    "height_multipliers", "identifiability_residual", "importance_scores",
    "kfold_split", "left_mass", "leverage", "load_csv", "load_draws",
    "predict_mean", "predictive_samples", "rmse", "run_chain", "save_draws",
    "select_components", "standardize", "sweep",
]
