"""Moderator screening by Bayesian model averaging with a Zellner g prior.

Every subset of the candidate moderators defines a linear model of the
effect sizes (always containing the intercept and any forced
regressors).  Under the g prior on slopes and the reference prior on
intercept and error variance, each model's marginal likelihood has a
closed form in its R-squared, so the full space of ``2^C`` subsets is
enumerated exactly.  A moderator's posterior inclusion probability is
the probability-weighted share of subsets containing it; moderators at
or above a threshold (plus the forced ones) pass the screen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .dataset import MetaDataset
from .errors import (
    InsufficientDataError,
    RankDeficiencyError,
    ValidationError,
)
from .metareg import _check_rank

__all__ = ["ScreenConfig", "ScreenRow", "ScreenResult", "screen_moderators"]

MODEL_PRIORS = ("uniform", "beta-binomial")


@dataclass(frozen=True)
class ScreenConfig:
    """Settings for the moderator screen.

    ``g`` defaults to ``max(n, K^2)`` with ``K`` the total number of
    slope columns.  ``precision_weighted`` reweights observations by
    inverse sampling variance before fitting (off by default).
    """

    threshold: float = 0.1
    model_prior: str = "uniform"
    precision_weighted: bool = False
    max_candidates: int = 25
    g: float | None = None

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValidationError("threshold must be in (0, 1)")
        if self.model_prior not in MODEL_PRIORS:
            raise ValidationError(
                f"model_prior must be one of {MODEL_PRIORS}, got {self.model_prior!r}"
            )
        if self.g is not None and self.g <= 0:
            raise ValidationError("g must be positive when given")


@dataclass(frozen=True)
class ScreenRow:
    """Screening outcome for one regressor."""

    name: str
    pip: float
    post_mean: float
    forced: bool
    included: bool


class ScreenResult:
    """Inclusion probabilities and averaged coefficients for all regressors."""

    def __init__(self, rows, g, n_models, threshold, log_marginal_null, intercept):
        self.rows: tuple[ScreenRow, ...] = tuple(rows)
        self.g = float(g)
        self.n_models = int(n_models)
        self.threshold = float(threshold)
        self.log_marginal_null = float(log_marginal_null)
        self.intercept = float(intercept)

    @property
    def included_names(self) -> tuple[str, ...]:
        return tuple(r.name for r in self.rows if r.included)

    def row(self, name: str) -> ScreenRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise ValidationError(f"no screened regressor named {name!r}")


def screen_moderators(
    data: MetaDataset,
    candidates,
    forced=(),
    config: ScreenConfig | None = None,
) -> ScreenResult:
    """Exhaustive BMA screen over subsets of ``candidates``.

    ``forced`` regressors enter every model and report an inclusion
    probability of exactly 1.  Continuous columns are standardised
    internally; reported coefficients are on the original scale.
    """
    config = config if config is not None else ScreenConfig()
    candidates = tuple(candidates)
    forced = tuple(forced)
    if len(set(candidates) | set(forced)) != len(candidates) + len(forced):
        raise ValidationError("candidate and forced regressor names must be distinct")
    if len(candidates) > config.max_candidates:
        raise ValidationError(
            f"{len(candidates)} candidates exceed the exhaustive-enumeration cap "
            f"({config.max_candidates})"
        )
    names = forced + candidates
    n = len(data.estimates)
    n_forced = len(forced)
    n_cand = len(candidates)
    n_slopes = len(names)
    if n < n_slopes + 2:
        raise InsufficientDataError(
            f"need at least {n_slopes + 2} estimates to screen {n_slopes} regressors"
        )

    w = 1.0 / data.ses**2 if config.precision_weighted else np.ones(n)
    sw = np.sqrt(w)
    y = data.thetas
    ybar = float(w @ y / w.sum())
    yt = sw * (y - ybar)
    sst = float(yt @ yt)
    # relative guard: a constant outcome leaves rounding dust of order
    # eps^2 in sst, which would otherwise feed garbage R-squared values
    total = float((sw * y) @ (sw * y))
    if sst <= np.finfo(float).eps * total:
        raise ValidationError("effect sizes show no variation; nothing to screen")

    cols = np.empty((n, n_slopes))
    scales = np.empty(n_slopes)
    means = np.empty(n_slopes)
    for j, name in enumerate(names):
        x = data.moderator(name)
        means[j] = float(w @ x / w.sum())
        centered = sw * (x - means[j])
        kind = data.schema.kind(name) if name in data.schema.names else "continuous"
        if kind == "continuous":
            s = math.sqrt(float(centered @ centered) / w.sum())
        else:
            s = 1.0
        if float(centered @ centered) == 0.0:
            raise RankDeficiencyError(
                f"regressor {name!r} is constant and collinear with the intercept",
                columns=(name,),
            )
        scales[j] = s if s > 0 else 1.0
        cols[:, j] = centered / scales[j]

    # whether LAPACK flags an exactly singular subset gram depends on
    # last-ulp BLAS roundoff, so collinearity is rejected up front: any
    # dependent subset implies a dependency in the full column set
    _check_rank(cols, names)

    gram = cols.T @ cols
    gy = cols.T @ yt
    g = config.g if config.g is not None else float(max(n, n_slopes**2))

    n_models = 1 << n_cand
    half = (n - 1) / 2.0
    log1pg = math.log1p(g)
    forced_idx = list(range(n_forced))

    log_weights = np.empty(n_models)
    betas: list[np.ndarray] = []
    selections: list[list[int]] = []
    for mask in range(n_models):
        sel = forced_idx + [n_forced + j for j in range(n_cand) if mask >> j & 1]
        k = len(sel)
        if k == 0:
            ssr = sst
            coef = np.empty(0)
        else:
            sub = gram[np.ix_(sel, sel)]
            b = gy[sel]
            try:
                coef = np.linalg.solve(sub, b)
            except np.linalg.LinAlgError:
                bad = tuple(names[i] for i in sel)
                raise RankDeficiencyError(
                    "collinear regressors in subset: " + ", ".join(bad), columns=bad
                ) from None
            ssr = max(sst - float(b @ coef), 0.0)
        log_bf = (half - k / 2.0) * log1pg - half * math.log1p(g * ssr / sst)
        log_weights[mask] = log_bf + _log_model_prior(config.model_prior, mask, n_cand)
        betas.append(coef)
        selections.append(sel)

    log_total = float(logsumexp(log_weights))
    post = np.exp(log_weights - log_total)

    shrink = g / (1.0 + g)
    pip = np.zeros(n_slopes)
    mean_std = np.zeros(n_slopes)
    for mask in range(n_models):
        p = post[mask]
        sel = selections[mask]
        coef = betas[mask]
        for pos, j in enumerate(sel):
            pip[j] += p
            mean_std[j] += p * shrink * coef[pos]
    pip[:n_forced] = 1.0

    post_mean = mean_std / scales
    intercept = ybar - float(post_mean @ means)
    ctc = float(w.sum())
    log_null = (
        math.lgamma(half) - half * math.log(math.pi)
        - 0.5 * math.log(ctc) - half * math.log(sst)
    )

    rows = [
        ScreenRow(
            name=names[j],
            pip=float(pip[j]),
            post_mean=float(post_mean[j]),
            forced=j < n_forced,
            included=j < n_forced or pip[j] >= config.threshold,
        )
        for j in range(n_slopes)
    ]
    return ScreenResult(rows, g, n_models, config.threshold, log_null, intercept)


def _log_model_prior(kind: str, mask: int, n_cand: int) -> float:
    if kind == "uniform":
        return 0.0
    size = bin(mask).count("1")
    return -math.log(n_cand + 1) - math.log(math.comb(n_cand, size))
