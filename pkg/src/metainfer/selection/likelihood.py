"""Marginal log-likelihood of one model at one or many parameter points.

The observed estimate is modelled as normal around the (possibly
bias-shifted) mean with variance ``se^2 + tau^2``.  Step-weight-function
models multiply the density by the interval weight attached to the
estimate's reported two-sided p-value and divide by the per-estimate
normalising constant ``A_q``, the expected weight under the model.

``A_q`` is evaluated as ``1 + sum_j (omega_j - 1) P_j`` over interval
probabilities ``P_j``; because the ``P_j`` sum to one by construction,
this form returns exactly 1.0 when every weight is 1.0, making the
selection likelihood collapse to the unweighted one bit for bit.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr, ndtri

from ..dataset import MetaDataset
from ..errors import DomainError, ValidationError
from .models import ModelSpec, ParameterSpace

__all__ = ["PreparedData", "log_likelihood", "batch_log_likelihood", "make_row_loglik"]

_LOG_2PI = math.log(2.0 * math.pi)

#: cap on elements of the (rows x observations) work arrays per chunk
_CHUNK_ELEMENTS = 4_000_000


class PreparedData:
    """Per-dataset quantities cached once and reused across models.

    ``crit[c]`` holds, for cutpoint ``c``, the absolute effect size at
    which an estimate with a given standard error becomes significant at
    level ``c`` two-sided; ``counts[cuts]`` holds how many estimates fall
    in each weight interval for a cutpoint tuple.
    """

    def __init__(self, data: MetaDataset):
        self.data = data
        self.theta = data.thetas
        self.se = data.ses
        self.se2 = self.se**2
        self.n = len(self.theta)
        self.sum_log_se2 = float(np.log(self.se2).sum())
        # reported two-sided p-values, from the reported standard errors
        self.p = 2.0 * (1.0 - ndtr(np.abs(self.theta) / self.se))
        self._crit: dict[float, np.ndarray] = {}
        self._counts: dict[tuple[float, ...], np.ndarray] = {}

    def crit(self, cutpoint: float) -> np.ndarray:
        """|theta| threshold per estimate for two-sided significance at ``cutpoint``."""
        got = self._crit.get(cutpoint)
        if got is None:
            got = self.se * ndtri(1.0 - cutpoint / 2.0)
            self._crit[cutpoint] = got
        return got

    def interval_counts(self, cutpoints: tuple[float, ...]) -> np.ndarray:
        """Number of estimates per weight interval (len(cutpoints) + 1 entries)."""
        got = self._counts.get(cutpoints)
        if got is None:
            idx = np.searchsorted(np.asarray(cutpoints), self.p, side="left")
            got = np.bincount(idx, minlength=len(cutpoints) + 1).astype(float)
            self._counts[cutpoints] = got
        return got


def log_likelihood(spec: ModelSpec, params: dict, data: MetaDataset | PreparedData) -> float:
    """Log-likelihood of ``data`` under ``spec`` at a full parameter mapping.

    ``params`` must provide ``mu``, ``tau``, ``beta_pet``, ``beta_peese``
    and, for weight-function models, ``omega`` (leading weight 1).
    Parameters the model pins are checked to hold their pinned values.

    Raises
    ------
    DomainError
        If ``tau`` is negative or any interval weight leaves ``(0, 1]``.
    """
    prep = data if isinstance(data, PreparedData) else PreparedData(data)
    mu = float(params.get("mu", 0.0))
    tau = float(params.get("tau", 0.0))
    beta_pet = float(params.get("beta_pet", 0.0))
    beta_peese = float(params.get("beta_peese", 0.0))
    omega = tuple(float(w) for w in params.get("omega", ()))
    if tau < 0:
        raise DomainError(f"tau must be non-negative, got {tau!r}")
    if not spec.has_effect and mu != 0.0:
        raise DomainError("model pins mu = 0 but a nonzero value was supplied")
    if not spec.has_heterogeneity and tau != 0.0:
        raise DomainError("model pins tau = 0 but a nonzero value was supplied")
    if spec.bias_kind != "PET" and beta_pet != 0.0:
        raise DomainError("model pins beta_pet = 0 but a nonzero value was supplied")
    if spec.bias_kind != "PEESE" and beta_peese != 0.0:
        raise DomainError("model pins beta_peese = 0 but a nonzero value was supplied")
    cuts = spec.cutpoints
    if not cuts and any(w != 1.0 for w in omega):
        raise DomainError("model applies no weight function; all weights must be 1.0")
    if cuts:
        if len(omega) != len(cuts) + 1:
            raise ValidationError(
                f"model {spec.label} needs {len(cuts) + 1} interval weights, got {len(omega)}"
            )
        if omega[0] != 1.0:
            raise DomainError("leading interval weight must be exactly 1.0")
        for w in omega:
            if not 0.0 < w <= 1.0:
                raise DomainError(f"interval weights must lie in (0, 1], got {w!r}")
        for a, b in zip(omega, omega[1:]):
            if b > a:
                raise DomainError("interval weights must be non-increasing")
    free = []
    space = ParameterSpace(spec)
    mapping = {
        "mu": mu,
        "tau": tau,
        "omega": omega,
        "beta_pet": beta_pet,
        "beta_peese": beta_peese,
    }
    for name in space.names:
        if name == "omega2":
            free.append(omega[1])
        elif name == "omega3":
            free.append(omega[2])
        else:
            free.append(mapping[name])
    return float(batch_log_likelihood(spec, space, np.asarray([free]), prep)[0])


def batch_log_likelihood(
    spec: ModelSpec,
    space: ParameterSpace,
    X: np.ndarray,
    prep: PreparedData,
) -> np.ndarray:
    """Vectorised log-likelihood over rows of free-parameter matrix ``X``.

    The hot path for samplers and integrators: no domain checks beyond
    what arithmetic enforces, chunked so work arrays stay bounded.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    m = X.shape[0]
    out = np.empty(m)
    rows_per_chunk = max(1, _CHUNK_ELEMENTS // max(prep.n, 1))
    for start in range(0, m, rows_per_chunk):
        stop = min(start + rows_per_chunk, m)
        out[start:stop] = _loglik_chunk(spec, space, X[start:stop], prep)
    return out


def make_row_loglik(spec: ModelSpec, space: ParameterSpace, prep: PreparedData):
    """Build a fused single-vector log-likelihood closure.

    Matches :func:`batch_log_likelihood` on one row but skips the batch
    bookkeeping; this is the sampler's per-proposal hot path.
    """
    idx = space._index
    theta, se, se2, n = prep.theta, prep.se, prep.se2, prep.n
    sum_log_se2 = prep.sum_log_se2
    i_mu = idx.get("mu")
    i_tau = idx.get("tau")
    i_w2 = idx.get("omega2")
    i_w3 = idx.get("omega3")
    i_pet = idx.get("beta_pet")
    i_peese = idx.get("beta_peese")
    cuts = spec.cutpoints
    crits = [prep.crit(c) for c in cuts]
    counts = prep.interval_counts(cuts) if cuts else None
    const = n * _LOG_2PI

    # (mu, tau) -> (normal-model total, tail probabilities); lets the
    # sampler's omega updates skip the ndtr evaluations entirely
    cache: list = [None, None, 0.0, ()]

    def row(x) -> float:
        mu = x[i_mu] if i_mu is not None else 0.0
        if not cuts:
            if i_pet is not None:
                resid = theta - mu - x[i_pet] * se
            elif i_peese is not None:
                resid = theta - mu - x[i_peese] * se2
            else:
                resid = theta - mu
            if i_tau is not None:
                s2 = se2 + x[i_tau] * x[i_tau]
                return float(-0.5 * (const + np.log(s2).sum() + (resid * resid / s2).sum()))
            return float(-0.5 * (const + sum_log_se2 + (resid * resid / se2).sum()))
        tau = x[i_tau] if i_tau is not None else 0.0
        if cache[0] == mu and cache[1] == tau:
            total = cache[2]
            tails = cache[3]
        else:
            resid = theta - mu
            if i_tau is not None:
                s2 = se2 + tau * tau
                total = -0.5 * (const + np.log(s2).sum() + (resid * resid / s2).sum())
                s = np.sqrt(s2)
            else:
                total = -0.5 * (const + sum_log_se2 + (resid * resid / se2).sum())
                s = se
            tails = [ndtr((-a - mu) / s) + ndtr((mu - a) / s) for a in crits]
            cache[0], cache[1], cache[2], cache[3] = mu, tau, total, tails
        w2 = x[i_w2]
        if i_w3 is None:
            A = 1.0 + (w2 - 1.0) * (1.0 - tails[0])
            total = total + counts[1] * math.log(w2)
        else:
            w3 = x[i_w3]
            A = 1.0 + (w2 - 1.0) * (tails[1] - tails[0]) + (w3 - 1.0) * (1.0 - tails[1])
            total = total + counts[1] * math.log(w2) + counts[2] * math.log(w3)
        np.maximum(A, 1e-300, out=A)
        return float(total - np.log(A).sum())

    return row


def _loglik_chunk(spec, space, X, prep):
    idx = space._index
    m = X.shape[0]
    mu = X[:, idx["mu"]][:, None] if "mu" in idx else None
    if spec.bias_kind == "PET":
        bias = X[:, idx["beta_pet"]][:, None] * prep.se[None, :]
        resid = prep.theta - bias if mu is None else prep.theta - bias - mu
    elif spec.bias_kind == "PEESE":
        bias = X[:, idx["beta_peese"]][:, None] * prep.se2[None, :]
        resid = prep.theta - bias if mu is None else prep.theta - bias - mu
    elif mu is not None:
        resid = prep.theta[None, :] - mu
    else:
        resid = np.broadcast_to(prep.theta, (m, prep.n))
    if "tau" in idx:
        s2 = prep.se2[None, :] + X[:, idx["tau"]][:, None] ** 2
        total = -0.5 * (
            prep.n * _LOG_2PI + np.log(s2).sum(axis=1) + (resid * resid / s2).sum(axis=1)
        )
    else:
        s2 = prep.se2[None, :]
        total = -0.5 * (
            prep.n * _LOG_2PI + prep.sum_log_se2 + (resid * resid / s2).sum(axis=1)
        )
    cuts = spec.cutpoints
    if cuts:
        s = np.sqrt(s2) if "tau" in idx else prep.se[None, :]
        mu_col = mu if mu is not None else 0.0
        # tail probability of landing beyond each significance threshold
        tails = []
        for c in cuts:
            a = prep.crit(c)[None, :]
            tails.append(ndtr((-a - mu_col) / s) + ndtr((mu_col - a) / s))
        # interval probabilities telescope so they sum to one exactly
        probs = [tails[0]]
        for t_prev, t_next in zip(tails, tails[1:]):
            probs.append(t_next - t_prev)
        probs.append(1.0 - tails[-1])
        counts = prep.interval_counts(cuts)
        norm = None
        for j in range(1, len(probs)):
            col = idx["omega2"] if j == 1 else idx["omega3"]
            w_j = X[:, col][:, None]
            term = (w_j - 1.0) * probs[j]
            norm = term if norm is None else norm + term
            total = total + counts[j] * np.log(w_j[:, 0])
        norm += 1.0
        np.maximum(norm, 1e-300, out=norm)
        total = total - np.log(norm).sum(axis=1)
    return total
