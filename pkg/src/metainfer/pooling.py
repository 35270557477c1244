"""Precision-weighted pooling (UWLS) and funnel-plot data.

The pooled effect is the inverse-variance weighted mean, estimated as a
weighted regression of theta on a constant (Stanley & Doucouliagos 2015).
The reported naive standard error is the WLS regression standard error,
i.e. it carries the residual-mean-square multiplier rather than assuming
the reported sampling variances are exact.  Inference uses study-level
cluster-robust standard errors: a one-regressor sandwich with clusters
equal to studies, small-sample factor G/(G-1), and a t(G-1) reference for
the two-sided p-value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import t as student_t

from .dataset import MetaDataset
from .errors import InsufficientDataError, ValidationError

__all__ = ["PooledEstimate", "FunnelTable", "uwls", "funnel_data"]


@dataclass(frozen=True)
class PooledEstimate:
    """Weighted-mean effect with naive and cluster-robust uncertainty."""

    mu_hat: float
    se_naive: float
    se_cluster: float
    p_value_cluster: float
    weights: tuple[float, ...]
    n_estimates: int
    n_studies: int


def uwls(data: MetaDataset) -> PooledEstimate:
    """Pool effect sizes by inverse-variance weighting with cluster inference.

    mu_hat = sum(w_q * theta_q) / sum(w_q) with w_q = 1 / se_q**2.  The
    cluster-robust variance is sum_g (sum_{q in g} w_q e_q)**2 / (sum w)**2
    scaled by G/(G-1); p-value from t with G-1 degrees of freedom.

    Raises
    ------
    InsufficientDataError
        Fewer than 2 estimates or fewer than 2 studies (the sandwich is
        undefined with a single cluster).
    """
    data.require_pooling()
    theta = data.thetas
    w = 1.0 / data.ses**2
    sw = w.sum()
    mu = float(np.sum(w * theta) / sw)

    resid = theta - mu
    n = theta.size
    # WLS regression SE: residual mean square over the weight total.
    s2 = float(np.sum(w * resid**2) / (n - 1))
    se_naive = float(np.sqrt(s2 / sw))

    groups = data.study_index
    n_studies = int(groups.max()) + 1
    score = np.bincount(groups, weights=w * resid, minlength=n_studies)
    meat = float(np.sum(score**2))
    correction = n_studies / (n_studies - 1)
    se_cluster = float(np.sqrt(correction * meat) / sw)

    if se_cluster == 0.0:
        p_value = 0.0 if mu != 0.0 else 1.0
    else:
        tstat = mu / se_cluster
        p_value = float(2.0 * student_t.sf(abs(tstat), df=n_studies - 1))

    return PooledEstimate(
        mu_hat=mu,
        se_naive=se_naive,
        se_cluster=se_cluster,
        p_value_cluster=p_value,
        weights=tuple(float(x) for x in w),
        n_estimates=n,
        n_studies=n_studies,
    )


@dataclass(frozen=True)
class FunnelTable:
    """Scatter points plus pseudo-95% confidence band lines.

    ``points`` holds the observed (theta, se) pairs.  ``band_se`` is a grid
    of standard errors from 0 to the largest observed se; ``band_low`` and
    ``band_high`` are mu -/+ 1.96 * se on that grid, meeting at (mu, 0).
    """

    mu: float
    points: tuple[tuple[float, float], ...]
    band_se: tuple[float, ...]
    band_low: tuple[float, ...]
    band_high: tuple[float, ...]

    def rows(self):
        """Flatten to (kind, theta, se) rows for CSV export."""
        for theta, se in self.points:
            yield ("point", theta, se)
        for se, lo in zip(self.band_se, self.band_low):
            yield ("band_low", lo, se)
        for se, hi in zip(self.band_se, self.band_high):
            yield ("band_high", hi, se)


def funnel_data(data: MetaDataset, mu: float, grid_points: int = 101) -> FunnelTable:
    """Emit plot-ready funnel data around a pooled effect ``mu``."""
    if not np.isfinite(mu):
        raise ValidationError("funnel centre mu must be finite")
    if grid_points < 50:
        raise ValidationError("funnel band grid needs at least 50 points")
    se_grid = np.linspace(0.0, float(data.ses.max()), grid_points)
    low = mu - 1.96 * se_grid
    high = mu + 1.96 * se_grid
    return FunnelTable(
        mu=float(mu),
        points=tuple(zip(data.thetas.tolist(), data.ses.tolist())),
        band_se=tuple(se_grid.tolist()),
        band_low=tuple(low.tolist()),
        band_high=tuple(high.tolist()),
    )
