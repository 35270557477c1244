"""Multilevel meta-regression with REML variance components.

Estimates are modelled as ``theta = X beta + u_study + w_estimate + e``
where ``u_study ~ N(0, tau2_between)`` is shared by all estimates from
one study, ``w_estimate ~ N(0, tau2_within)`` is estimate-specific, and
``e ~ N(0, se^2)`` carries the reported sampling variance.  The two
variance components are fitted by restricted maximum likelihood; the
coefficients then come from generalised least squares at the fitted
components.

Because the covariance of each study block is diagonal plus a rank-one
between-study term, all solves use the Sherman-Morrison identity and
never form a dense covariance matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr
from scipy.optimize import minimize
from scipy.special import ndtr

from .dataset import MetaDataset
from .errors import InsufficientDataError, RankDeficiencyError, ValidationError

__all__ = [
    "CoefficientRow",
    "MetaRegressionResult",
    "design_matrix",
    "fit_metareg",
    "significance_stars",
]

#: two-sided p-value thresholds for one, two, and three stars
STAR_LEVELS = (0.10, 0.05, 0.01)

_LOG_2PI = math.log(2.0 * math.pi)


def significance_stars(p: float) -> str:
    stars = sum(p < level for level in STAR_LEVELS)
    return "*" * stars


@dataclass(frozen=True)
class CoefficientRow:
    """One fitted coefficient with its normal-reference inference."""

    name: str
    estimate: float
    se: float
    z: float
    p_value: float
    stars: str


class MetaRegressionResult:
    """Fitted coefficients, variance components, and REML diagnostics."""

    def __init__(self, columns, beta, beta_cov, tau2_between, tau2_within,
                 loglik, n_estimates, n_studies, converged, optimizer_detail):
        self.columns = tuple(columns)
        self.beta = np.asarray(beta, dtype=float)
        self.beta_cov = np.asarray(beta_cov, dtype=float)
        self.tau2_between = float(tau2_between)
        self.tau2_within = float(tau2_within)
        self.loglik = float(loglik)
        self.n_estimates = int(n_estimates)
        self.n_studies = int(n_studies)
        self.converged = bool(converged)
        self.optimizer_detail = dict(optimizer_detail)

    @property
    def coefficients(self) -> tuple[CoefficientRow, ...]:
        rows = []
        for i, name in enumerate(self.columns):
            est = float(self.beta[i])
            se = float(math.sqrt(self.beta_cov[i, i]))
            z = est / se if se > 0 else math.inf * np.sign(est)
            p = 2.0 * (1.0 - ndtr(abs(z))) if math.isfinite(z) else 0.0
            rows.append(CoefficientRow(name, est, se, z, p, significance_stars(p)))
        return tuple(rows)

    def coefficient(self, name: str) -> CoefficientRow:
        for row in self.coefficients:
            if row.name == name:
                return row
        raise ValidationError(f"no coefficient named {name!r}")


def design_matrix(
    data: MetaDataset,
    moderators,
    add_intercept: bool = True,
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Assemble the regressor matrix and its column names.

    Moderator names resolve against the dataset schema; ``"se"`` and
    ``"theta"`` name the built-in columns.  A rank-deficient matrix is
    rejected, naming the columns a pivoted QR factorisation identifies
    as redundant.
    """
    names: list[str] = []
    cols: list[np.ndarray] = []
    if add_intercept:
        names.append("intercept")
        cols.append(np.ones(len(data.estimates)))
    seen = set(names)
    for name in moderators:
        if name in seen:
            raise ValidationError(f"duplicate design column {name!r}")
        seen.add(name)
        names.append(name)
        cols.append(data.moderator(name))
    if not cols:
        raise ValidationError("design matrix needs at least one column")
    X = np.column_stack(cols)
    _check_rank(X, names)
    return X, tuple(names)


def _check_rank(X: np.ndarray, names) -> None:
    n, k = X.shape
    if n < k:
        raise InsufficientDataError(
            f"{k} design columns but only {n} estimates"
        )
    _, R, piv = qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag[0] * max(n, k) * np.finfo(float).eps if diag.size and diag[0] > 0 else 0.0
    rank = int(np.sum(diag > tol))
    if rank < k:
        redundant = sorted(names[j] for j in piv[rank:])
        raise RankDeficiencyError(
            "design matrix is rank deficient; remove or merge columns: "
            + ", ".join(redundant),
            columns=tuple(redundant),
        )


def fit_metareg(
    data: MetaDataset,
    moderators=(),
    add_intercept: bool = True,
    fix_tau2_between: float | None = None,
    fix_tau2_within: float | None = None,
) -> MetaRegressionResult:
    """REML fit of the three-level model.

    ``fix_tau2_between`` / ``fix_tau2_within`` pin a component instead of
    estimating it (zero gives the classical weighted-least-squares
    limit); leave them ``None`` to estimate both.
    """
    X, names = design_matrix(data, moderators, add_intercept)
    y = data.thetas
    sigma2 = data.ses**2
    n, k = X.shape
    if n - k < 1:
        raise InsufficientDataError("need more estimates than design columns")
    for label, v in (("fix_tau2_between", fix_tau2_between),
                     ("fix_tau2_within", fix_tau2_within)):
        if v is not None and (not np.isfinite(v) or v < 0):
            raise ValidationError(f"{label} must be a finite non-negative number")

    groups = [np.asarray(idx, dtype=int) for idx in data.study_groups()]

    def negloglik(tau2_b, tau2_w):
        return -_restricted_loglik(groups, X, y, sigma2, tau2_b, tau2_w)[0]

    free = [fix_tau2_between is None, fix_tau2_within is None]
    detail: dict = {"n_free_components": int(sum(free))}
    if not any(free):
        tau2_b = float(fix_tau2_between)
        tau2_w = float(fix_tau2_within)
        converged = True
    else:
        def unpack(zfree):
            vals = []
            it = iter(zfree)
            for is_free, fixed in zip(free, (fix_tau2_between, fix_tau2_within)):
                vals.append(math.exp(next(it)) if is_free else float(fixed))
            return vals

        def objective(zfree):
            tb, tw = unpack(zfree)
            val = negloglik(tb, tw)
            return val if np.isfinite(val) else 1e300

        starts = np.log(np.geomspace(1e-6, 1e-1, 5))
        best = None
        trace = []
        for s in starts:
            z0 = np.full(sum(free), s)
            res = minimize(objective, z0, method="L-BFGS-B",
                           bounds=[(-34.0, 6.0)] * sum(free))
            trace.append((float(s), float(res.fun), bool(res.success)))
            if best is None or res.fun < best.fun:
                best = res
        tau2_b, tau2_w = unpack(best.x)
        converged = bool(best.success)
        detail["starts"] = trace
    loglik, beta, beta_cov = _restricted_loglik(groups, X, y, sigma2, tau2_b, tau2_w)
    return MetaRegressionResult(
        names, beta, beta_cov, tau2_b, tau2_w, loglik,
        n, data.n_studies, converged, detail,
    )


def _restricted_loglik(groups, X, y, sigma2, tau2_b, tau2_w):
    """Restricted log-likelihood with profiled GLS coefficients.

    Returns ``(loglik, beta, beta_cov)``.  Each study block has
    covariance ``diag(sigma2 + tau2_w) + tau2_b * ones``, inverted by
    Sherman-Morrison.
    """
    n, k = X.shape
    xtvx = np.zeros((k, k))
    xtvy = np.zeros(k)
    logdet_v = 0.0
    for idx in groups:
        a = sigma2[idx] + tau2_w
        Xg = X[idx]
        yg = y[idx]
        inv_a = 1.0 / a
        S = inv_a.sum()
        shrink = tau2_b / (1.0 + tau2_b * S)
        cX = Xg.T @ inv_a          # X' A^-1 1-weighted column sums
        cy = float(yg @ inv_a)
        xtvx += (Xg * inv_a[:, None]).T @ Xg - shrink * np.outer(cX, cX)
        xtvy += Xg.T @ (inv_a * yg) - shrink * cX * cy
        logdet_v += float(np.sum(np.log(a)) + math.log1p(tau2_b * S))
    beta = np.linalg.solve(xtvx, xtvy)
    beta_cov = np.linalg.inv(xtvx)
    quad = 0.0
    for idx in groups:
        a = sigma2[idx] + tau2_w
        rg = y[idx] - X[idx] @ beta
        inv_a = 1.0 / a
        S = inv_a.sum()
        shrink = tau2_b / (1.0 + tau2_b * S)
        cr = float(rg @ inv_a)
        quad += float(rg @ (inv_a * rg)) - shrink * cr * cr
    sign, logdet_xtvx = np.linalg.slogdet(xtvx)
    if sign <= 0:
        return -np.inf, beta, beta_cov
    loglik = -0.5 * ((n - k) * _LOG_2PI + logdet_v + logdet_xtvx + quad)
    return loglik, beta, beta_cov
