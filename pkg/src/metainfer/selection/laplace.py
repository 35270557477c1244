"""Posterior mode and curvature in the unconstrained parameterisation.

Shared machinery: the sampler uses the mode and curvature to set
proposal scales, the quadrature integrator to centre and size its grid.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize

from ..errors import ConvergenceError
from .models import ParameterSpace

__all__ = ["LaplaceFit", "fit_laplace"]


class LaplaceFit:
    """Mode, curvature scales, and peak height in unconstrained space."""

    def __init__(self, z_mode, sd, log_height):
        self.z_mode = np.asarray(z_mode, dtype=float)
        self.sd = np.asarray(sd, dtype=float)
        self.log_height = float(log_height)


def fit_laplace(
    space: ParameterSpace,
    loglik_fn,
    seed: int,
    n_starts: int = 5,
) -> LaplaceFit:
    """Locate the posterior mode from multiple starts and measure curvature.

    Starts are the prior centre plus prior draws mapped to the
    unconstrained space; the best optimum across starts wins.  Curvature
    comes from a central-difference Hessian at the mode, with a diagonal
    fallback when the full matrix is not negative definite.
    """
    d = space.dim
    if d == 0:
        return LaplaceFit(np.empty(0), np.empty(0), float(loglik_fn(np.empty((1, 0)))[0]))

    def neg_logpost(z):
        val = space.log_posterior_unconstrained(z[None, :], loglik_fn)[0]
        return np.inf if not np.isfinite(val) else -val

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    starts = [space.prior_center_unconstrained()]
    if n_starts > 1:
        X = space.sample_prior(rng, n_starts - 1)
        starts.extend(space.unconstrain(X))

    best = None
    for z0 in starts:
        res = minimize(neg_logpost, np.asarray(z0, dtype=float), method="Nelder-Mead",
                       options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 4000})
        if best is None or res.fun < best.fun:
            best = res
    if best is None or not np.isfinite(best.fun):
        raise ConvergenceError("posterior mode search failed to find a finite optimum")
    z_mode = np.asarray(best.x, dtype=float)
    # polish with a gradient-based pass; harmless if it goes nowhere
    res = minimize(neg_logpost, z_mode, method="BFGS")
    if np.isfinite(res.fun) and res.fun <= best.fun:
        z_mode, best = np.asarray(res.x, dtype=float), res

    H = _hessian(lambda z: -neg_logpost(z), z_mode)
    sd = _scales_from_hessian(H)
    return LaplaceFit(z_mode, sd, -best.fun)


def _hessian(f, z, rel_step: float = 1e-4):
    d = len(z)
    h = rel_step * (1.0 + np.abs(z))
    H = np.empty((d, d))
    f0 = f(z)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h[i]
        H[i, i] = (f(z + ei) - 2.0 * f0 + f(z - ei)) / h[i] ** 2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (
                f(z + ei + ej) - f(z + ei - ej) - f(z - ei + ej) + f(z - ei - ej)
            ) / (4.0 * h[i] * h[j])
    return H


def _scales_from_hessian(H) -> np.ndarray:
    d = H.shape[0]
    try:
        cov = np.linalg.inv(-H)
        diag = np.diag(cov)
        if np.all(np.isfinite(diag)) and np.all(diag > 0):
            return np.clip(np.sqrt(diag), 1e-6, 1e3)
    except np.linalg.LinAlgError:
        pass
    # curvature not usable as a full matrix; fall back coordinate-wise
    diag = -np.diag(H)
    sd = np.where(diag > 0, 1.0 / np.sqrt(np.maximum(diag, 1e-300)), 1.0)
    return np.clip(sd, 1e-6, 1e3)
