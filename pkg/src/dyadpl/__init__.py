"""Dyadic network formation with reciprocity and two-way degree heterogeneity."""

from .kernel import DyadMoments, DyadProbs, dyad_probs
from .model import ModelSpec, Params, Variant, hessian_parts, log_likelihood, score
from .netgraph import Covariates, Network, build_network, degrees, network_stats, trim_iteratively
from .penalty import BoundaryError, penalty_eta, penalty_grad, penalty_hess_lambda
from .solver import (
    FitResult,
    HybridInverse,
    NonExistence,
    SolverOptions,
    fit_ec,
    fit_mle,
    fit_pl,
    hybrid_inverse_apply,
    inner_newton_lambda,
)

__version__ = "0.1.0"
