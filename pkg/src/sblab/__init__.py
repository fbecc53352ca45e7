"""Bayesian sparse linear regression with spike-and-slab priors."""

from .core import DesignMatrix, Model, Observation, RngHandle, SparseCoef, load_design
from .errors import ComplexityRefused, ConfigError, SblabError
from .priors import DimensionPrior, HeavyTailedSlab, LaplaceSlab, certify_dimension_prior
from .exact import (SequencePosterior, enumerate_posterior, inclusion_probabilities, log_marginal,
                    map_model, sample_posterior)
from .mcmc import ChainConfig, run_mcmc
from .bvm import build_neighborhood, bvm_weights, tv_upper_bound
from .lasso import lasso_fit
from .prediction import enumerate_subspaces, subspace_posterior
from .diagnostics import diagnose

__version__ = "0.1.0"

__all__ = [
    "DesignMatrix", "Model", "Observation", "RngHandle", "SparseCoef", "load_design",
    "ComplexityRefused", "ConfigError", "SblabError",
    "DimensionPrior", "HeavyTailedSlab", "LaplaceSlab", "certify_dimension_prior",
    "SequencePosterior", "enumerate_posterior", "inclusion_probabilities", "log_marginal",
    "map_model", "sample_posterior", "ChainConfig", "run_mcmc", "build_neighborhood",
    "bvm_weights", "tv_upper_bound", "lasso_fit", "enumerate_subspaces", "subspace_posterior",
    "diagnose",
]
