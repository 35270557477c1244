"""Configuration for the publication-bias model ensemble."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import ValidationError

__all__ = ["PriorConfig", "SamplerConfig", "EnsembleConfig"]


@dataclass(frozen=True)
class PriorConfig:
    """Prior hyperparameters shared across the model space.

    The pooled effect gets a weakly informative normal prior, the
    heterogeneity standard deviation an inverse-gamma prior, the interval
    weights a uniform prior over monotone configurations, and the
    small-study slopes zero-centred Cauchy priors.
    """

    mu_sd: float = 2.0
    tau_shape: float = 1.0
    tau_scale: float = 0.15
    pet_scale: float = 1.0
    peese_scale: float = 5.0

    def __post_init__(self):
        for name in ("mu_sd", "tau_shape", "tau_scale", "pet_scale", "peese_scale"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"prior hyperparameter {name} must be positive")


@dataclass(frozen=True)
class SamplerConfig:
    """Metropolis-within-Gibbs settings.

    ``iterations`` counts post-burn-in draws per chain; proposal scales
    adapt toward ``target_accept`` during burn-in only.
    """

    chains: int = 4
    iterations: int = 5000
    burn_in: int = 1000
    target_accept: float = 0.44
    adapt_interval: int = 50
    rhat_threshold: float = 1.05

    def __post_init__(self):
        if self.chains < 1:
            raise ValidationError("need at least one chain")
        if self.iterations < 2:
            raise ValidationError("need at least 2 post-burn-in iterations")
        if self.burn_in < 0:
            raise ValidationError("burn_in cannot be negative")
        if not 0.0 < self.target_accept < 1.0:
            raise ValidationError("target_accept must be in (0, 1)")


@dataclass(frozen=True)
class EnsembleConfig:
    """Everything needed to fit the 20-model ensemble deterministically."""

    priors: PriorConfig = field(default_factory=PriorConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    #: quadrature settings: initial half-width in posterior sds, node counts
    quad_halfwidth: float = 8.0
    quad_nodes: int = 97
    quad_refine_nodes: int = 145
    quad_refine_tol: float = 1e-5
    #: bridge-sampling iteration controls
    bridge_tol: float = 1e-10
    bridge_maxiter: int = 1000
    #: parameter count above which evidence switches from quadrature to bridge
    quadrature_max_dim: int = 2
    jobs: int = 1
