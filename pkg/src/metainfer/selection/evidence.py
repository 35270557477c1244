"""Marginal likelihood (evidence) of a single model.

Two routes, chosen by the number of free parameters:

* up to two parameters: deterministic adaptive Gauss-Legendre quadrature
  over the unconstrained space, centred on the posterior mode, with the
  range grown until the integrand has decayed by twelve orders of
  magnitude at every edge and the node count refined until successive
  estimates agree;
* three or more: bridge sampling from the posterior draws, using the
  iterative optimal-bridge update with a multivariate normal proposal
  fitted to half of the draws.

Both routes integrate the same unnormalised density, so on models where
both apply they must agree closely; that overlap is the main correctness
check on the stochastic route.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from ..dataset import MetaDataset
from ..errors import ConvergenceError, ValidationError
from .config import EnsembleConfig
from .laplace import fit_laplace
from .likelihood import PreparedData, batch_log_likelihood
from .models import ModelSpec, ParameterSpace
from .sampler import ModelPosterior, _canonical_index, _stream_seed, sample_posterior

__all__ = [
    "EvidenceResult",
    "log_evidence_quadrature",
    "log_evidence_bridge",
    "log_marginal_likelihood",
]

# integrand must fall this far (in log units) below the peak at the edges
_EDGE_DECAY = math.log(1e12)
_MAX_EXPANSIONS = 60


@dataclass(frozen=True)
class EvidenceResult:
    """Log marginal likelihood plus how it was computed."""

    log_evidence: float
    method: str
    detail: dict = field(default_factory=dict, compare=False)


def log_marginal_likelihood(
    spec: ModelSpec,
    data: MetaDataset | PreparedData,
    config: EnsembleConfig | None = None,
    seed: int = 0,
    method: str = "auto",
    posterior: ModelPosterior | None = None,
) -> EvidenceResult:
    """Evidence for one model, dispatching on parameter count.

    ``method`` may be ``"auto"``, ``"quadrature"`` or ``"bridge"``.  The
    bridge route needs posterior draws; they are generated on demand when
    ``posterior`` is not supplied.
    """
    config = config if config is not None else EnsembleConfig()
    prep = data if isinstance(data, PreparedData) else PreparedData(data)
    space = ParameterSpace(spec, config.priors)
    if method == "auto":
        method = "quadrature" if space.dim <= config.quadrature_max_dim else "bridge"
    if method == "quadrature":
        if space.dim > 2:
            raise ValidationError(
                f"quadrature supports at most 2 free parameters; {spec.label} has {space.dim}"
            )
        return log_evidence_quadrature(spec, prep, config, seed)
    if method == "bridge":
        if posterior is None:
            posterior = sample_posterior(spec, prep, config, seed)
        return log_evidence_bridge(posterior, prep, config, seed)
    raise ValidationError(f"unknown evidence method {method!r}")


# ----------------------------------------------------------------------
# quadrature route
# ----------------------------------------------------------------------

def log_evidence_quadrature(
    spec: ModelSpec,
    data: MetaDataset | PreparedData,
    config: EnsembleConfig | None = None,
    seed: int = 0,
) -> EvidenceResult:
    config = config if config is not None else EnsembleConfig()
    prep = data if isinstance(data, PreparedData) else PreparedData(data)
    space = ParameterSpace(spec, config.priors)
    if space.dim > 2:
        raise ValidationError(
            f"quadrature supports at most 2 free parameters; {spec.label} has {space.dim}"
        )

    def loglik_fn(X):
        return batch_log_likelihood(spec, space, X, prep)

    if space.dim == 0:
        val = float(loglik_fn(np.empty((1, 0)))[0])
        return EvidenceResult(val, "quadrature", {"dim": 0})

    def logpost(Z):
        return space.log_posterior_unconstrained(Z, loglik_fn)

    model_index = _canonical_index(spec)
    laplace = fit_laplace(space, loglik_fn, seed=_stream_seed(seed, model_index, None))
    lo, hi = _expand_ranges(logpost, laplace, config)

    orders = [config.quad_nodes, config.quad_refine_nodes]
    while orders[-1] < (420 if space.dim == 2 else 3200):
        orders.append(int(orders[-1] * 2))
    values = []
    shift = laplace.log_height
    for order in orders:
        values.append(_gl_integral(logpost, lo, hi, order, shift))
        if len(values) >= 2 and abs(values[-1] - values[-2]) <= config.quad_refine_tol:
            return EvidenceResult(
                values[-1], "quadrature",
                {"dim": space.dim, "orders": orders[: len(values)], "trace": values,
                 "range": (lo.tolist(), hi.tolist())},
            )
    raise ConvergenceError(
        f"quadrature for {spec.label} did not stabilise "
        f"(last estimates {values[-2]:.8f}, {values[-1]:.8f})",
        trace=values,
    )


def _expand_ranges(logpost, laplace, config):
    """Grow an axis-aligned box until the integrand decays at every edge."""
    d = len(laplace.z_mode)
    h = config.quad_halfwidth * laplace.sd
    lo = laplace.z_mode - h
    hi = laplace.z_mode + h
    floor = laplace.log_height - _EDGE_DECAY
    for axis in range(d):
        step = h[axis]
        for _ in range(_MAX_EXPANSIONS):
            point = laplace.z_mode.copy()
            point[axis] = lo[axis]
            if logpost(point[None, :])[0] <= floor:
                break
            lo[axis] -= step
        else:
            raise ConvergenceError("quadrature range expansion failed on the lower edge")
        for _ in range(_MAX_EXPANSIONS):
            point = laplace.z_mode.copy()
            point[axis] = hi[axis]
            if logpost(point[None, :])[0] <= floor:
                break
            hi[axis] += step
        else:
            raise ConvergenceError("quadrature range expansion failed on the upper edge")
    return lo, hi


def _gl_integral(logpost, lo, hi, order, shift):
    d = len(lo)
    t, w = np.polynomial.legendre.leggauss(order)
    if d == 1:
        z = (lo[0] + hi[0]) / 2.0 + (hi[0] - lo[0]) / 2.0 * t
        logw = np.log(w * (hi[0] - lo[0]) / 2.0)
        return float(logsumexp(logpost(z[:, None]) - shift + logw) + shift)
    z0 = (lo[0] + hi[0]) / 2.0 + (hi[0] - lo[0]) / 2.0 * t
    z1 = (lo[1] + hi[1]) / 2.0 + (hi[1] - lo[1]) / 2.0 * t
    logw0 = np.log(w * (hi[0] - lo[0]) / 2.0)
    logw1 = np.log(w * (hi[1] - lo[1]) / 2.0)
    grid = np.empty((order * order, 2))
    grid[:, 0] = np.repeat(z0, order)
    grid[:, 1] = np.tile(z1, order)
    lp = logpost(grid) - shift
    logw = (logw0[:, None] + logw1[None, :]).ravel()
    return float(logsumexp(lp + logw) + shift)


# ----------------------------------------------------------------------
# bridge route
# ----------------------------------------------------------------------

def log_evidence_bridge(
    posterior: ModelPosterior,
    data: MetaDataset | PreparedData,
    config: EnsembleConfig | None = None,
    seed: int = 0,
) -> EvidenceResult:
    """Iterative bridge-sampling estimate from an existing posterior fit.

    The proposal is a multivariate normal matched to the first half of
    the unconstrained draws; the second half enters the bridge averages,
    together with an equal number of fresh proposal draws.  Iteration
    stops when successive estimates of the normalising constant change by
    less than ``config.bridge_tol`` relatively; running out of
    iterations raises :class:`ConvergenceError` with the trace attached.
    """
    config = config if config is not None else EnsembleConfig()
    prep = data if isinstance(data, PreparedData) else PreparedData(data)
    spec = posterior.spec
    space = ParameterSpace(spec, config.priors)
    if posterior.dim == 0:
        raise ValidationError("bridge sampling needs at least one free parameter")
    if posterior.n_draws < 16:
        raise ValidationError("bridge sampling needs more posterior draws")

    def loglik_fn(X):
        return batch_log_likelihood(spec, space, X, prep)

    def logpost(Z):
        return space.log_posterior_unconstrained(Z, loglik_fn)

    Z = posterior.draws_z
    n_half = Z.shape[0] // 2
    Z_fit, Z_eval = Z[:n_half], Z[n_half:]
    mean = Z_fit.mean(axis=0)
    cov = np.cov(Z_fit, rowvar=False)
    cov = np.atleast_2d(cov) + 1e-10 * np.eye(Z.shape[1])

    model_index = _canonical_index(spec)
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(seed, spawn_key=(model_index, 20_000))))
    n2 = Z_eval.shape[0]
    prop = rng.multivariate_normal(mean, cov, size=n2, method="cholesky")

    logq_eval = _mvn_logpdf(Z_eval, mean, cov)
    logq_prop = _mvn_logpdf(prop, mean, cov)
    l1 = logpost(Z_eval) - logq_eval
    l2 = logpost(prop) - logq_prop
    keep = np.isfinite(l2)
    l2 = l2[keep]
    if l2.size == 0:
        raise ConvergenceError("all proposal draws fell outside the posterior support")

    n1 = l1.size
    s1 = n1 / (n1 + l2.size)
    s2 = l2.size / (n1 + l2.size)
    lstar = float(np.median(l1))
    e1 = np.exp(np.clip(l1 - lstar, -700, 700))
    e2 = np.exp(np.clip(l2 - lstar, -700, 700))

    r = 1.0
    trace = []
    for _ in range(config.bridge_maxiter):
        num = np.mean(e2 / (s1 * e2 + s2 * r))
        den = np.mean(1.0 / (s1 * e1 + s2 * r))
        r_new = num / den
        trace.append(math.log(r_new) + lstar)
        if abs(r_new - r) <= config.bridge_tol * abs(r_new):
            return EvidenceResult(
                math.log(r_new) + lstar, "bridge",
                {"iterations": len(trace), "n_posterior": n1, "n_proposal": int(l2.size),
                 "trace_tail": trace[-3:]},
            )
        r = r_new
    raise ConvergenceError(
        f"bridge sampling for {spec.label} did not converge in {config.bridge_maxiter} iterations",
        trace=trace,
    )


def _mvn_logpdf(X, mean, cov):
    d = mean.size
    L = np.linalg.cholesky(cov)
    diff = X - mean
    y = np.linalg.solve(L, diff.T)
    quad = np.sum(y * y, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * (d * math.log(2.0 * math.pi) + logdet + quad)
