"""Model space for the publication-bias ensemble.

Every candidate model is a combination of three switches: whether a
nonzero pooled effect is allowed, whether between-estimate heterogeneity
is allowed, and which (if any) publication-bias adjustment is applied.
The bias adjustments are two step weight functions over reported
two-sided p-values (cut at 0.05, or at 0.05 and 0.10) and two
regression-style corrections where the conditional mean gains a term
proportional to the standard error (PET) or to its square (PEESE).

Crossing 2 x 2 x 5 switches yields 20 models, each carrying equal prior
probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DomainError, ValidationError
from .config import PriorConfig

__all__ = [
    "BIAS_KINDS",
    "WEIGHTFN_CUTPOINTS",
    "ModelSpec",
    "build_model_space",
    "ParameterSpace",
]

#: wire names of the five bias-adjustment variants, in canonical order
BIAS_KINDS = ("none", "weightfn_05", "weightfn_05_10", "PET", "PEESE")

#: p-value cutpoints used by each step-weight-function variant
WEIGHTFN_CUTPOINTS = {
    "weightfn_05": (0.05,),
    "weightfn_05_10": (0.05, 0.10),
}

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ModelSpec:
    """One cell of the 2 x 2 x 5 model grid."""

    has_effect: bool
    has_heterogeneity: bool
    bias_kind: str
    prior_prob: float

    def __post_init__(self):
        if self.bias_kind not in BIAS_KINDS:
            raise ValidationError(
                f"unknown bias_kind {self.bias_kind!r}; expected one of {BIAS_KINDS}"
            )
        if not 0.0 < self.prior_prob <= 1.0:
            raise ValidationError("prior_prob must be in (0, 1]")

    @property
    def label(self) -> str:
        effect = "effect" if self.has_effect else "null"
        het = "het" if self.has_heterogeneity else "homog"
        return f"{effect}_{het}_{self.bias_kind}"

    @property
    def cutpoints(self) -> tuple[float, ...]:
        return WEIGHTFN_CUTPOINTS.get(self.bias_kind, ())

    @property
    def adjusts_for_bias(self) -> bool:
        return self.bias_kind != "none"


def build_model_space() -> tuple[ModelSpec, ...]:
    """Return the 20 candidate models in fixed enumeration order.

    Order is: effect switch slowest, then heterogeneity, then bias kind,
    so the first model is the null/homogeneous/unadjusted one.
    """
    specs = []
    for has_effect in (False, True):
        for has_het in (False, True):
            for bias in BIAS_KINDS:
                specs.append(
                    ModelSpec(
                        has_effect=has_effect,
                        has_heterogeneity=has_het,
                        bias_kind=bias,
                        prior_prob=1.0 / 20.0,
                    )
                )
    return tuple(specs)


class ParameterSpace:
    """Free-parameter layout, priors, and reparameterisations for one model.

    Free parameters appear in canonical order ``mu, tau, omega2, omega3,
    beta``; a model only owns the ones its switches activate.  Absent
    parameters are pinned: ``mu = 0``, ``tau = 0``, all interval weights 1,
    ``beta = 0``.

    Two coordinate systems are used.  The constrained space holds the
    parameters on their natural domains (``tau > 0``, ``0 < omega3 <=
    omega2 <= 1``).  The unconstrained space maps ``tau`` through ``log``,
    ``omega2`` through ``logit``, and ``omega3`` through ``logit`` of the
    ratio ``omega3 / omega2`` so that the monotonicity constraint becomes
    a rectangle.  Samplers and integrators work in the unconstrained
    space; reported draws live in the constrained one.
    """

    def __init__(self, spec: ModelSpec, priors: PriorConfig | None = None):
        self.spec = spec
        self.priors = priors if priors is not None else PriorConfig()
        names: list[str] = []
        if spec.has_effect:
            names.append("mu")
        if spec.has_heterogeneity:
            names.append("tau")
        if spec.bias_kind in ("weightfn_05", "weightfn_05_10"):
            names.append("omega2")
        if spec.bias_kind == "weightfn_05_10":
            names.append("omega3")
        if spec.bias_kind == "PET":
            names.append("beta_pet")
        if spec.bias_kind == "PEESE":
            names.append("beta_peese")
        self.names: tuple[str, ...] = tuple(names)
        self.dim = len(names)
        self._index = {n: i for i, n in enumerate(names)}

    # ------------------------------------------------------------------
    # vector <-> named parameters
    # ------------------------------------------------------------------

    def vector_to_params(self, x) -> dict:
        """Expand a free-parameter vector to the full parameter mapping."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValidationError(
                f"expected parameter vector of length {self.dim}, got shape {x.shape}"
            )
        get = lambda n, default: x[self._index[n]] if n in self._index else default
        omega: tuple[float, ...]
        if self.spec.bias_kind == "weightfn_05":
            omega = (1.0, float(get("omega2", 1.0)))
        elif self.spec.bias_kind == "weightfn_05_10":
            omega = (1.0, float(get("omega2", 1.0)), float(get("omega3", 1.0)))
        else:
            omega = ()
        return {
            "mu": float(get("mu", 0.0)),
            "tau": float(get("tau", 0.0)),
            "omega": omega,
            "beta_pet": float(get("beta_pet", 0.0)),
            "beta_peese": float(get("beta_peese", 0.0)),
        }

    def params_to_vector(self, params: dict) -> np.ndarray:
        """Inverse of :meth:`vector_to_params`; validates domains."""
        x = np.empty(self.dim)
        for i, name in enumerate(self.names):
            if name in ("omega2", "omega3"):
                omega = params.get("omega", ())
                j = 1 if name == "omega2" else 2
                if len(omega) <= j:
                    raise ValidationError(f"parameter mapping lacks omega[{j}]")
                x[i] = omega[j]
            else:
                if name not in params:
                    raise ValidationError(f"parameter mapping lacks {name!r}")
                x[i] = params[name]
        self._check_domain(x)
        return x

    def _check_domain(self, x: np.ndarray) -> None:
        for i, name in enumerate(self.names):
            v = x[i]
            if not np.isfinite(v):
                raise DomainError(f"{name} must be finite, got {v!r}")
            if name == "tau" and v <= 0:
                raise DomainError(f"tau must be positive, got {v!r}")
            if name in ("omega2", "omega3") and not 0.0 < v <= 1.0:
                raise DomainError(f"{name} must lie in (0, 1], got {v!r}")
        if "omega3" in self._index:
            w2 = x[self._index["omega2"]]
            w3 = x[self._index["omega3"]]
            if w3 > w2:
                raise DomainError(
                    f"interval weights must be non-increasing: omega3={w3!r} > omega2={w2!r}"
                )

    # ------------------------------------------------------------------
    # prior
    # ------------------------------------------------------------------

    def log_prior(self, X) -> np.ndarray:
        """Joint prior log-density at each row of ``X`` (constrained space).

        Rows violating a support constraint get ``-inf``.  The density is
        fully normalised so evidence values are comparable across models.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        m = X.shape[0]
        out = np.zeros(m)
        pr = self.priors
        for i, name in enumerate(self.names):
            v = X[:, i]
            if name == "mu":
                sd = pr.mu_sd
                out += -0.5 * _LOG_2PI - math.log(sd) - 0.5 * (v / sd) ** 2
            elif name == "tau":
                a, b = pr.tau_shape, pr.tau_scale
                with np.errstate(divide="ignore", invalid="ignore"):
                    lp = a * math.log(b) - math.lgamma(a) - (a + 1.0) * np.log(v) - b / v
                out += np.where(v > 0, lp, -np.inf)
            elif name == "omega2":
                out += np.where((v > 0) & (v <= 1.0), 0.0, -np.inf)
            elif name == "omega3":
                w2 = X[:, self._index["omega2"]]
                # uniform over the ordered triangle {0 < w3 <= w2 <= 1}, area 1/2
                out += np.where((v > 0) & (v <= w2), math.log(2.0), -np.inf)
            elif name == "beta_pet":
                g = pr.pet_scale
                out += -math.log(math.pi * g) - np.log1p((v / g) ** 2)
            elif name == "beta_peese":
                g = pr.peese_scale
                out += -math.log(math.pi * g) - np.log1p((v / g) ** 2)
        return out

    def sample_prior(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` free-parameter vectors from the joint prior."""
        pr = self.priors
        cols = []
        omega2_col = None
        for name in self.names:
            if name == "mu":
                cols.append(rng.normal(0.0, pr.mu_sd, size))
            elif name == "tau":
                # inverse-gamma via reciprocal of a gamma draw
                cols.append(1.0 / rng.gamma(pr.tau_shape, 1.0 / pr.tau_scale, size))
            elif name == "omega2":
                if "omega3" in self.names:
                    # joint (omega2, omega3) is uniform on the ordered
                    # triangle, so the omega2 marginal has density 2w
                    omega2_col = np.sqrt(rng.uniform(0.0, 1.0, size))
                else:
                    omega2_col = rng.uniform(0.0, 1.0, size)
                cols.append(omega2_col)
            elif name == "omega3":
                # given omega2, the ordered-uniform conditional is U(0, omega2)
                cols.append(rng.uniform(0.0, 1.0, size) * omega2_col)
            elif name == "beta_pet":
                cols.append(pr.pet_scale * rng.standard_cauchy(size))
            elif name == "beta_peese":
                cols.append(pr.peese_scale * rng.standard_cauchy(size))
        if not cols:
            return np.empty((size, 0))
        return np.column_stack(cols)

    # ------------------------------------------------------------------
    # reparameterisation
    # ------------------------------------------------------------------

    def unconstrain(self, X) -> np.ndarray:
        """Map constrained rows to the unconstrained space."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Z = X.copy()
        for i, name in enumerate(self.names):
            if name == "tau":
                Z[:, i] = np.log(X[:, i])
            elif name == "omega2":
                w = X[:, i]
                Z[:, i] = np.log(w) - np.log1p(-w)
            elif name == "omega3":
                r = X[:, i] / X[:, self._index["omega2"]]
                Z[:, i] = np.log(r) - np.log1p(-r)
        return Z

    def constrain(self, Z) -> tuple[np.ndarray, np.ndarray]:
        """Map unconstrained rows back; also return log |dX/dZ| per row."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        X = Z.copy()
        logj = np.zeros(Z.shape[0])
        for i, name in enumerate(self.names):
            z = Z[:, i]
            if name == "tau":
                X[:, i] = np.exp(z)
                logj += z
            elif name == "omega2":
                s = _sigmoid(z)
                X[:, i] = s
                logj += _log_sigmoid_grad(z)
            elif name == "omega3":
                s = _sigmoid(z)
                w2 = X[:, self._index["omega2"]]
                X[:, i] = s * w2
                logj += _log_sigmoid_grad(z) + np.log(w2)
        return X, logj

    def log_posterior_unconstrained(self, Z, loglik_fn) -> np.ndarray:
        """Unnormalised log posterior density in the unconstrained space.

        ``loglik_fn`` maps an (m, dim) constrained array to (m,) log
        likelihoods.  Used by the samplers and the evidence integrators.
        """
        X, logj = self.constrain(Z)
        lp = self.log_prior(X)
        if lp.shape[0] == 1:
            if not np.isfinite(lp[0]):
                return np.array([-np.inf])
            return lp + loglik_fn(X) + logj
        out = np.full(lp.shape, -np.inf)
        ok = np.isfinite(lp)
        if np.any(ok):
            out[ok] = lp[ok] + loglik_fn(X[ok]) + logj[ok]
        return out

    def make_scalar_logpost(self, row_loglik):
        """Fused single-point unconstrained log posterior for samplers.

        ``row_loglik`` maps one constrained vector to a float.  The
        returned closure does transforms and priors in scalar math; it is
        numerically equivalent to :meth:`log_posterior_unconstrained` on
        a single row.
        """
        pr = self.priors
        steps = list(enumerate(self.names))
        mu_sd = pr.mu_sd
        tau_a, tau_b = pr.tau_shape, pr.tau_scale
        log_tau_norm = tau_a * math.log(tau_b) - math.lgamma(tau_a)
        w2_index = self._index.get("omega2")
        x_buf = np.empty(self.dim)

        def logpost(z) -> float:
            lp = 0.0
            for i, name in steps:
                v = z[i]
                if name == "mu":
                    x_buf[i] = v
                    lp += -0.5 * _LOG_2PI - math.log(mu_sd) - 0.5 * (v / mu_sd) ** 2
                elif name == "tau":
                    if abs(v) > 600.0:
                        return -math.inf
                    tau = math.exp(v)
                    x_buf[i] = tau
                    # prior density plus the log|d tau / d z| Jacobian term
                    lp += log_tau_norm - (tau_a + 1.0) * v - tau_b / tau + v
                elif name == "omega2":
                    if abs(v) > 600.0:
                        return -math.inf
                    w = _scalar_sigmoid(v)
                    x_buf[i] = w
                    lp += _scalar_log_sigmoid_grad(v)
                elif name == "omega3":
                    if abs(v) > 600.0:
                        return -math.inf
                    r = _scalar_sigmoid(v)
                    w2 = x_buf[w2_index]
                    x_buf[i] = r * w2
                    lp += math.log(2.0) + _scalar_log_sigmoid_grad(v) + math.log(w2)
                elif name == "beta_pet":
                    x_buf[i] = v
                    g = pr.pet_scale
                    lp += -math.log(math.pi * g) - math.log1p((v / g) ** 2)
                else:
                    x_buf[i] = v
                    g = pr.peese_scale
                    lp += -math.log(math.pi * g) - math.log1p((v / g) ** 2)
            return lp + row_loglik(x_buf)

        return logpost

    def prior_center_unconstrained(self) -> np.ndarray:
        """A reasonable central point in the unconstrained space."""
        z = np.zeros(self.dim)
        for i, name in enumerate(self.names):
            if name == "tau":
                # prior median of the inverse-gamma when shape == 1 is b/log 2;
                # fall back to scale/shape otherwise, which is near the mode
                pr = self.priors
                if pr.tau_shape == 1.0:
                    z[i] = math.log(pr.tau_scale / math.log(2.0))
                else:
                    z[i] = math.log(pr.tau_scale / pr.tau_shape)
        return z


def _scalar_sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def _scalar_log_sigmoid_grad(z: float) -> float:
    az = abs(z)
    return -az - 2.0 * math.log1p(math.exp(-az))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _log_sigmoid_grad(z: np.ndarray) -> np.ndarray:
    # log sigma'(z) = -z - 2 log(1 + exp(-z)), stable on both tails
    return -np.abs(z) - 2.0 * np.log1p(np.exp(-np.abs(z)))
