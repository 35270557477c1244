"""Fitting, weighing, and averaging the 20-model ensemble.

Each candidate model gets its marginal likelihood (quadrature for up to
two free parameters, bridge sampling above that) and, when requested,
posterior draws.  Posterior model probabilities follow from the equal
prior weights; inclusion probabilities and Bayes factors for the three
switches (effect, heterogeneity, bias adjustment) come from sums over
the relevant model subsets; parameter inference mixes the per-model
posteriors with those weights, using point masses for parameters a model
pins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..dataset import MetaDataset
from ..errors import (
    ConvergenceError,
    DegenerateEnsembleError,
    InsufficientDataError,
    ValidationError,
)
from .config import EnsembleConfig
from .evidence import EvidenceResult, log_evidence_bridge, log_evidence_quadrature
from .likelihood import PreparedData
from .models import ModelSpec, ParameterSpace, build_model_space
from .sampler import ModelPosterior, sample_posterior

__all__ = [
    "COMPONENTS",
    "EnsembleResult",
    "AveragedPosterior",
    "fit_ensemble",
    "average_ensemble",
    "posterior_model_probs",
    "component_probability",
    "component_bayes_factor",
    "component_log10_bayes_factor",
    "weight_curve",
]

#: named model subsets for inclusion probabilities and Bayes factors
COMPONENTS = {
    "effect": lambda s: s.has_effect,
    "heterogeneity": lambda s: s.has_heterogeneity,
    "bias": lambda s: s.adjusts_for_bias,
}

#: averaged parameter columns; omega entries follow the union cutpoint
#: grid (0.05, 0.10), the leading interval weight being identically 1
AVERAGED_COLUMNS = ("mu", "tau", "omega2", "omega3", "beta_pet", "beta_peese")


def posterior_model_probs(specs, log_evidences) -> np.ndarray:
    """Posterior model probabilities from prior weights and evidences."""
    log_ev = np.asarray(log_evidences, dtype=float)
    if len(specs) != log_ev.size:
        raise ValidationError("one log evidence per model is required")
    if np.any(np.isnan(log_ev)):
        bad = [specs[i].label for i in np.nonzero(np.isnan(log_ev))[0]]
        raise DegenerateEnsembleError(f"evidence is NaN for models: {', '.join(bad)}")
    log_w = np.log([s.prior_prob for s in specs]) + log_ev
    total = logsumexp(log_w)
    if not np.isfinite(total):
        raise DegenerateEnsembleError("all models have vanishing evidence")
    return np.exp(log_w - total)


def component_probability(specs, probs, component: str) -> float:
    """Posterior probability that the named switch is on."""
    member = _component_member(component)
    return float(sum(p for s, p in zip(specs, probs) if member(s)))


def _component_log_bf(specs, log_evidences, component: str) -> float:
    """Natural-log Bayes factor for a switch: posterior over prior odds.

    Works entirely from log evidences so neither side can underflow;
    a probability ratio would hit zero once the gap passes ~745 nats.
    """
    member = _component_member(component)
    log_ev = np.asarray(log_evidences, dtype=float)
    mask = np.fromiter((member(s) for s in specs), bool, count=len(specs))
    prior = np.asarray([s.prior_prob for s in specs])
    log_w = np.log(prior) + log_ev
    log_on = logsumexp(log_w[mask])
    log_off = logsumexp(log_w[~mask])
    if log_on == -math.inf and log_off == -math.inf:
        raise DegenerateEnsembleError("all models have vanishing evidence")
    if log_on == -math.inf:
        return -math.inf
    if log_off == -math.inf:
        return math.inf
    log_prior_odds = math.log(prior[mask].sum()) - math.log(prior[~mask].sum())
    return (log_on - log_off) - log_prior_odds


def component_bayes_factor(specs, log_evidences, component: str) -> float:
    """Posterior odds over prior odds for the named switch.

    Overflows to ``inf`` (or underflows to 0) only past the float range;
    the log10 variant stays informative there.
    """
    log_bf = _component_log_bf(specs, log_evidences, component)
    if math.isinf(log_bf):
        return math.inf if log_bf > 0 else 0.0
    return math.exp(log_bf)


def component_log10_bayes_factor(specs, log_evidences, component: str) -> float:
    """Base-10 log of the switch Bayes factor; finite for any evidence gap."""
    return _component_log_bf(specs, log_evidences, component) / math.log(10.0)


def _component_member(component: str):
    try:
        return COMPONENTS[component]
    except KeyError:
        raise ValidationError(
            f"unknown component {component!r}; expected one of {tuple(COMPONENTS)}"
        ) from None


class EnsembleResult:
    """Evidences, posterior model weights, and per-model draws."""

    def __init__(self, specs, evidences, posteriors, config, seed):
        self.specs: tuple[ModelSpec, ...] = tuple(specs)
        self.evidences: tuple[EvidenceResult, ...] = tuple(evidences)
        self.posteriors: dict[int, ModelPosterior] = dict(posteriors)
        self.config = config
        self.seed = seed
        self.log_evidence = np.array([e.log_evidence for e in self.evidences])
        self.posterior_probs = posterior_model_probs(self.specs, self.log_evidence)

    def component_probability(self, component: str) -> float:
        return component_probability(self.specs, self.posterior_probs, component)

    def component_bayes_factor(self, component: str) -> float:
        return component_bayes_factor(self.specs, self.log_evidence, component)

    def component_log10_bayes_factor(self, component: str) -> float:
        return component_log10_bayes_factor(self.specs, self.log_evidence, component)

    @property
    def warnings(self) -> tuple[str, ...]:
        out = []
        for spec, ev in zip(self.specs, self.evidences):
            if "fallback_from" in ev.detail:
                out.append(
                    f"{spec.label}: evidence fell back from "
                    f"{ev.detail['fallback_from']} to {ev.method}"
                )
        for idx in sorted(self.posteriors):
            post = self.posteriors[idx]
            out.extend(f"{post.spec.label}: {w}" for w in post.warnings)
        return tuple(out)


def fit_ensemble(
    data: MetaDataset,
    config: EnsembleConfig | None = None,
    seed: int = 0,
    compute_draws: bool = True,
) -> EnsembleResult:
    """Fit every candidate model and assemble the weighted ensemble.

    With ``compute_draws=False`` only what evidence computation strictly
    needs is run (chains for bridge-route models); model probabilities
    and Bayes factors are still exact, but parameter averaging is not
    available.
    """
    config = config if config is not None else EnsembleConfig()
    if len(data.estimates) < 2:
        raise InsufficientDataError("model comparison needs at least 2 estimates")
    prep = PreparedData(data)
    specs = build_model_space()
    evidences = []
    posteriors: dict[int, ModelPosterior] = {}
    for idx, spec in enumerate(specs):
        space = ParameterSpace(spec, config.priors)
        needs_bridge = space.dim > config.quadrature_max_dim
        post = None
        if needs_bridge or (compute_draws and space.dim >= 1):
            post = sample_posterior(spec, prep, config, seed, model_index=idx)
            posteriors[idx] = post
        if needs_bridge:
            evidences.append(log_evidence_bridge(post, prep, config, seed))
        else:
            try:
                evidences.append(log_evidence_quadrature(spec, prep, config, seed))
            except ConvergenceError as exc:
                # near-degenerate posteriors (extreme data under a nuisance
                # model) can defeat the fixed-order ladder; the bridge route
                # still applies, so one stubborn integral must not sink the
                # other 19 fits
                if post is None:
                    post = sample_posterior(spec, prep, config, seed,
                                            model_index=idx)
                    posteriors[idx] = post
                bridged = log_evidence_bridge(post, prep, config, seed)
                detail = dict(bridged.detail)
                detail["fallback_from"] = "quadrature"
                detail["fallback_reason"] = str(exc)
                evidences.append(
                    EvidenceResult(bridged.log_evidence, bridged.method, detail)
                )
    return EnsembleResult(specs, evidences, posteriors, config, seed)


class AveragedPosterior:
    """Model-averaged posterior for the reportable parameters.

    Holds one row per retained draw (plus one pinned-value row for each
    zero-parameter model) and a normalised weight per row, so means,
    equal-tailed intervals, and resampling all honour the posterior model
    probabilities exactly.
    """

    def __init__(self, values: np.ndarray, weights: np.ndarray):
        self.values = values
        self.weights = weights

    def column(self, name: str) -> np.ndarray:
        return self.values[:, AVERAGED_COLUMNS.index(name)]

    def mean(self, name: str) -> float:
        return float(np.sum(self.column(name) * self.weights))

    def interval(self, name: str, level: float = 0.95) -> tuple[float, float]:
        """Equal-tailed credible interval by weighted inverse-CDF quantiles."""
        alpha = (1.0 - level) / 2.0
        col = self.column(name)
        return (
            _weighted_quantile(col, self.weights, alpha),
            _weighted_quantile(col, self.weights, 1.0 - alpha),
        )

    def sample(self, n: int, seed: int = 0) -> np.ndarray:
        """Draw ``n`` rows with replacement, weight-proportionally."""
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        idx = rng.choice(self.values.shape[0], size=n, p=self.weights)
        return self.values[idx]

    def omega_at(self, p) -> np.ndarray:
        """Per-draw weight-function value at p-values ``p`` (rows x p)."""
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if np.any((p < 0) | (p > 1)):
            raise ValidationError("p-values must lie in [0, 1]")
        out = np.ones((self.values.shape[0], p.size))
        in_mid = (p > 0.05) & (p <= 0.10)
        in_high = p > 0.10
        out[:, in_mid] = self.column("omega2")[:, None]
        out[:, in_high] = self.column("omega3")[:, None]
        return out


def average_ensemble(result: EnsembleResult, min_prob: float = 1e-12) -> AveragedPosterior:
    """Mix per-model posteriors into the model-averaged posterior.

    Models without free parameters contribute a single point-mass row at
    their pinned values.  A model that carries non-negligible weight but
    has no draws (evidence-only fit) is an error.
    """
    blocks = []
    weight_blocks = []
    for idx, spec in enumerate(result.specs):
        p_model = float(result.posterior_probs[idx])
        if p_model <= min_prob:
            continue
        post = result.posteriors.get(idx)
        space = ParameterSpace(spec, result.config.priors)
        if space.dim == 0:
            rows = _pinned_row(spec)[None, :]
        else:
            if post is None or post.n_draws == 0:
                raise ValidationError(
                    f"model {spec.label} carries weight {p_model:.3g} but has no draws; "
                    "fit the ensemble with compute_draws=True"
                )
            rows = _averaged_rows(spec, post)
        blocks.append(rows)
        weight_blocks.append(np.full(rows.shape[0], p_model / rows.shape[0]))
    values = np.concatenate(blocks, axis=0)
    weights = np.concatenate(weight_blocks)
    weights = weights / weights.sum()
    return AveragedPosterior(values, weights)


def _pinned_row(spec: ModelSpec) -> np.ndarray:
    return np.array([0.0, 0.0, 1.0, 1.0, 0.0, 0.0])


def _averaged_rows(spec: ModelSpec, post: ModelPosterior) -> np.ndarray:
    n = post.n_draws
    rows = np.tile(_pinned_row(spec), (n, 1))
    cols = {name: i for i, name in enumerate(AVERAGED_COLUMNS)}
    for j, name in enumerate(post.names):
        if name == "omega2":
            rows[:, cols["omega2"]] = post.draws[:, j]
            if spec.bias_kind == "weightfn_05":
                # a single cut at 0.05 applies the same discount beyond 0.10
                rows[:, cols["omega3"]] = post.draws[:, j]
        elif name == "omega3":
            rows[:, cols["omega3"]] = post.draws[:, j]
        else:
            rows[:, cols[name]] = post.draws[:, j]
    return rows


def weight_curve(averaged: AveragedPosterior, grid=None, level: float = 0.95):
    """Model-averaged weight function over a p-value grid.

    Returns ``(p, mean, lower, upper)`` arrays for plotting or export.
    """
    if grid is None:
        grid = np.linspace(0.0, 1.0, 201)
    grid = np.asarray(grid, dtype=float)
    omega = averaged.omega_at(grid)
    alpha = (1.0 - level) / 2.0
    mean = omega.T @ averaged.weights
    lower = np.empty(grid.size)
    upper = np.empty(grid.size)
    for k in range(grid.size):
        lower[k] = _weighted_quantile(omega[:, k], averaged.weights, alpha)
        upper[k] = _weighted_quantile(omega[:, k], averaged.weights, 1.0 - alpha)
    return grid, mean, lower, upper


def _weighted_quantile(values: np.ndarray, weights: np.ndarray, q: float) -> float:
    order = np.argsort(values, kind="stable")
    v = values[order]
    cum = np.cumsum(weights[order])
    idx = int(np.searchsorted(cum, q * cum[-1], side="left"))
    return float(v[min(idx, v.size - 1)])
