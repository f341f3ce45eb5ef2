"""Bayesian network regression with community-dependent sender and receiver effects."""

from commnet.model import (ABSENT, CoefficientSet, CommunityAssignment, CovariateSet,
                           DyadCovariate, LatentState, ModelState, NodeCovariate,
                           RandomEffects, Sociomatrix, mean_matrix)
from commnet.likelihood import bvn_cdf, dyad_loglik, network_loglik
from commnet.sampler import (ChainCheckpoint, ChainNumericalError, ChainOutput,
                             FitConfig, PriorSpec, run_chain)
from commnet.postprocess import (CoefficientSummary, community_weighted_average,
                                 resolve_labels)
from commnet.diagnostics import (AccuracyWeightedEss, EssEstimate, acf, ess,
                                 ess_per_error, geweke)
from commnet.simulate import (ScenarioSpec, UnreachableDensityError,
                              generate_censored_network, generate_network,
                              scenario_presets)
from commnet.chainio import (DataError, read_covariates, read_draws,
                             read_network, read_scenario_file,
                             reconstruct_chain, write_covariates, write_draws,
                             write_network)

__version__ = "0.1.0"

__all__ = [
    "ABSENT",
    "AccuracyWeightedEss",
    "ChainCheckpoint",
    "ChainNumericalError",
    "ChainOutput",
    "CoefficientSet",
    "CoefficientSummary",
    "CommunityAssignment",
    "CovariateSet",
    "DataError",
    "DyadCovariate",
    "EssEstimate",
    "FitConfig",
    "LatentState",
    "ModelState",
    "NodeCovariate",
    "PriorSpec",
    "RandomEffects",
    "ScenarioSpec",
    "Sociomatrix",
    "UnreachableDensityError",
    "acf",
    "bvn_cdf",
    "community_weighted_average",
    "dyad_loglik",
    "ess",
    "ess_per_error",
    "generate_censored_network",
    "generate_network",
    "geweke",
    "mean_matrix",
    "network_loglik",
    "read_covariates",
    "read_draws",
    "read_network",
    "read_scenario_file",
    "reconstruct_chain",
    "resolve_labels",
    "run_chain",
    "scenario_presets",
    "write_covariates",
    "write_draws",
    "write_network",
    "__version__",
]
