"""Posterior simulation for a single model via Metropolis-within-Gibbs.

Chains run in the unconstrained parameterisation with one Gaussian
random-walk update per coordinate per sweep.  Proposal scales start from
a Laplace approximation at the posterior mode and keep adapting toward a
target acceptance rate during burn-in; after burn-in the scales freeze
so the chain is a valid Markov chain.

Reproducibility: chain ``c`` of model ``m`` always draws from the random
stream spawned as ``SeedSequence(seed, spawn_key=(m, c))``, so results
do not depend on scheduling or on which other models are fitted.
"""

from __future__ import annotations

import math

import numpy as np

from ..dataset import MetaDataset
from ..errors import ValidationError
from .config import EnsembleConfig
from .laplace import fit_laplace
from .likelihood import PreparedData, batch_log_likelihood, make_row_loglik
from .models import ModelSpec, ParameterSpace, build_model_space

__all__ = ["ModelPosterior", "sample_posterior", "split_rhat"]


class ModelPosterior:
    """Pooled posterior draws and diagnostics for one model.

    ``draws`` holds constrained-space rows (chains stacked in order);
    ``draws_z`` the matching unconstrained rows, kept for the bridge
    estimator.  ``rhat`` is the split-chain statistic per free parameter.
    """

    def __init__(self, spec, names, draws, draws_z, log_post, rhat,
                 accept_rate, n_chains, n_iterations, warnings=()):
        self.spec = spec
        self.names = tuple(names)
        self.draws = draws
        self.draws_z = draws_z
        self.log_post = log_post
        self.rhat = rhat
        self.accept_rate = accept_rate
        self.n_chains = n_chains
        self.n_iterations = n_iterations
        self.warnings = tuple(warnings)

    @property
    def dim(self) -> int:
        return len(self.names)

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def converged(self) -> bool:
        return not self.warnings

    def parameter(self, name: str) -> np.ndarray:
        if name not in self.names:
            raise ValidationError(f"model {self.spec.label} has no free parameter {name!r}")
        return self.draws[:, self.names.index(name)]


def sample_posterior(
    spec: ModelSpec,
    data: MetaDataset | PreparedData,
    config: EnsembleConfig | None = None,
    seed: int = 0,
    model_index: int | None = None,
) -> ModelPosterior:
    """Run all chains for one model and pool the post-burn-in draws."""
    config = config if config is not None else EnsembleConfig()
    prep = data if isinstance(data, PreparedData) else PreparedData(data)
    space = ParameterSpace(spec, config.priors)
    if model_index is None:
        model_index = _canonical_index(spec)

    def loglik_fn(X):
        return batch_log_likelihood(spec, space, X, prep)

    if space.dim == 0:
        ll = float(loglik_fn(np.empty((1, 0)))[0])
        empty = np.empty((0, 0))
        return ModelPosterior(spec, (), empty, empty, np.full(0, ll),
                              np.empty(0), np.empty((0, 0)),
                              config.sampler.chains, 0)

    laplace = fit_laplace(space, loglik_fn, seed=_stream_seed(seed, model_index, chain=None))
    logpost_row = space.make_scalar_logpost(make_row_loglik(spec, space, prep))
    scfg = config.sampler
    chain_z = []
    chain_lp = []
    accept = np.empty((scfg.chains, space.dim))
    for c in range(scfg.chains):
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(seed, spawn_key=(model_index, c))))
        z, lp, acc = _run_chain(space, logpost_row, laplace, scfg, rng)
        chain_z.append(z)
        chain_lp.append(lp)
        accept[c] = acc

    rhat = split_rhat(np.stack(chain_z))
    warnings = tuple(
        f"split R-hat {rhat[i]:.3f} for {space.names[i]} exceeds {scfg.rhat_threshold:g}"
        for i in range(space.dim)
        if not rhat[i] <= scfg.rhat_threshold
    )
    draws_z = np.concatenate(chain_z, axis=0)
    draws, _ = space.constrain(draws_z)
    log_post = np.concatenate(chain_lp)
    return ModelPosterior(spec, space.names, draws, draws_z, log_post, rhat,
                          accept, scfg.chains, scfg.iterations, warnings)


def _run_chain(space, logpost_row, laplace, scfg, rng):
    d = space.dim
    total = scfg.burn_in + scfg.iterations
    # start near the mode, jittered at the Laplace scale so chains differ
    z = laplace.z_mode + laplace.sd * rng.standard_normal(d)
    lp = logpost_row(z)
    if not np.isfinite(lp):
        z = laplace.z_mode.copy()
        lp = logpost_row(z)
    scales = 2.4 / np.sqrt(d) * np.maximum(laplace.sd, 1e-8)
    draws = np.empty((scfg.iterations, d))
    lps = np.empty(scfg.iterations)
    acc_batch = np.zeros(d)
    acc_kept = np.zeros(d)
    batch = 0
    exp = math.exp
    for it in range(total):
        for i in range(d):
            old = z[i]
            z[i] = old + scales[i] * rng.standard_normal()
            lp_prop = logpost_row(z)
            if lp_prop >= lp or rng.uniform() < exp(lp_prop - lp):
                lp = lp_prop
                acc_batch[i] += 1.0
                if it >= scfg.burn_in:
                    acc_kept[i] += 1.0
            else:
                z[i] = old
        adapting = it < scfg.burn_in
        if adapting and (it + 1) % scfg.adapt_interval == 0:
            batch += 1
            rates = acc_batch / scfg.adapt_interval
            scales *= np.exp((rates - scfg.target_accept) / np.sqrt(batch))
            np.clip(scales, 1e-8, 1e4, out=scales)
            acc_batch[:] = 0.0
        if it >= scfg.burn_in:
            k = it - scfg.burn_in
            draws[k] = z
            lps[k] = lp
    return draws, lps, acc_kept / scfg.iterations


def split_rhat(chains: np.ndarray) -> np.ndarray:
    """Split-chain potential scale reduction factor per parameter.

    ``chains`` has shape (n_chains, n_iterations, dim).  Each chain is
    split in half so within-chain trends inflate the statistic.
    """
    n_chains, n_iter, d = chains.shape
    half = n_iter // 2
    if half < 2:
        return np.full(d, np.nan)
    seqs = np.concatenate([chains[:, :half, :], chains[:, half: 2 * half, :]], axis=0)
    means = seqs.mean(axis=1)
    variances = seqs.var(axis=1, ddof=1)
    W = variances.mean(axis=0)
    B_over_n = means.var(axis=0, ddof=1)
    var_hat = (half - 1.0) / half * W + B_over_n
    out = np.empty(d)
    for i in range(d):
        if W[i] > 0:
            out[i] = np.sqrt(var_hat[i] / W[i])
        else:
            out[i] = 1.0 if B_over_n[i] == 0 else np.inf
    return out


def _canonical_index(spec: ModelSpec) -> int:
    for i, s in enumerate(build_model_space()):
        if (s.has_effect, s.has_heterogeneity, s.bias_kind) == (
            spec.has_effect, spec.has_heterogeneity, spec.bias_kind,
        ):
            return i
    raise ValidationError(f"model {spec.label} is not in the canonical model space")


def _stream_seed(seed: int, model_index: int, chain: int | None) -> int:
    # a distinct, stable integer stream for the mode search of each model
    ss = np.random.SeedSequence(seed, spawn_key=(model_index, 10_000))
    return int(ss.generate_state(1, dtype=np.uint64)[0] & 0x7FFFFFFF)
