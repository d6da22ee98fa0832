"""Dirichlet process mixture of gammas below a threshold, generalized Pareto above it."""

from dpgpd.distributions import GammaParams, TailParams, TruncatedNormalSpec
from dpgpd.dpmg import BaseMeasureParams, ClusterState
from dpgpd.gpd_tail import ProposalTuning, TailPriors
from dpgpd.model import Chain, FitConfig, PosteriorSample, fit, quantile, quantile_posterior

__version__ = "0.1.0"

__all__ = [
    "BaseMeasureParams",
    "Chain",
    "ClusterState",
    "FitConfig",
    "GammaParams",
    "PosteriorSample",
    "ProposalTuning",
    "TailParams",
    "TailPriors",
    "TruncatedNormalSpec",
    "fit",
    "quantile",
    "quantile_posterior",
]
