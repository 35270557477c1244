"""Bayesian publication-bias model ensemble."""

from .config import EnsembleConfig, PriorConfig, SamplerConfig
from .ensemble import (
    AVERAGED_COLUMNS,
    AveragedPosterior,
    EnsembleResult,
    average_ensemble,
    component_bayes_factor,
    component_log10_bayes_factor,
    component_probability,
    fit_ensemble,
    posterior_model_probs,
    weight_curve,
)
from .evidence import (
    EvidenceResult,
    log_evidence_bridge,
    log_evidence_quadrature,
    log_marginal_likelihood,
)
from .likelihood import PreparedData, log_likelihood
from .models import BIAS_KINDS, ModelSpec, ParameterSpace, build_model_space
from .sampler import ModelPosterior, sample_posterior, split_rhat
from .weights import WeightFunction

__all__ = [
    "AVERAGED_COLUMNS",
    "AveragedPosterior",
    "BIAS_KINDS",
    "EnsembleConfig",
    "EnsembleResult",
    "EvidenceResult",
    "ModelPosterior",
    "ModelSpec",
    "ParameterSpace",
    "PreparedData",
    "PriorConfig",
    "SamplerConfig",
    "WeightFunction",
    "average_ensemble",
    "build_model_space",
    "component_bayes_factor",
    "component_log10_bayes_factor",
    "component_probability",
    "fit_ensemble",
    "log_evidence_bridge",
    "log_evidence_quadrature",
    "log_likelihood",
    "log_marginal_likelihood",
    "posterior_model_probs",
    "sample_posterior",
    "split_rhat",
    "weight_curve",
]
