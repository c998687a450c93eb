"""Causal effect estimation for Ising-type outcome models under network interference."""

from .model import (CovariateDistribution, EffectEstimate, InteractionMatrix, OutcomeParams,
                    PropensityParams, covariate_distribution, make_interaction)

__version__ = "0.1.0"

__all__ = ["CovariateDistribution", "EffectEstimate", "InteractionMatrix", "OutcomeParams",
           "PropensityParams", "covariate_distribution", "make_interaction"]
