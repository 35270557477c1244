"""Synthetic meta-analytic datasets with known truth.

Used to calibrate and stress the inference code: effects are drawn from
the same hierarchical model the estimators assume (study effects,
estimate effects, sampling noise, optional small-study terms), and
publication selection is imposed by rejection: each candidate estimate
survives with the probability its weight function assigns to the
candidate's two-sided p-value.  Study effects are drawn once and kept
during rejection, so selection operates within studies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .dataset import EffectEstimate, MetaDataset, ModeratorSchema
from .errors import BudgetError, ValidationError
from .selection.weights import WeightFunction

__all__ = [
    "SimConfig",
    "SimDiagnostics",
    "simulate",
    "simulate_with_diagnostics",
    "sim_config_to_dict",
    "sim_config_from_dict",
]


@dataclass(frozen=True)
class SimConfig:
    """Complete description of one synthetic data-generating process.

    ``estimates_per_study`` bounds are inclusive; make them equal for a
    fixed count.  ``moderator_effects`` pairs positionally with the
    schema's entries.  ``selection=None`` disables publication selection.
    """

    n_studies: int = 30
    estimates_per_study: tuple[int, int] = (5, 20)
    mu: float = 0.0
    tau_between: float = 0.0
    tau_within: float = 0.0
    se_range: tuple[float, float] = (0.005, 0.30)
    selection: WeightFunction | None = None
    pet_slope: float = 0.0
    peese_slope: float = 0.0
    moderators: ModeratorSchema | None = None
    moderator_effects: tuple[float, ...] = ()
    max_tries_per_estimate: int = 100_000

    def __post_init__(self):
        if self.n_studies < 1:
            raise ValidationError("n_studies must be at least 1")
        lo, hi = self.estimates_per_study
        if lo < 1 or hi < lo:
            raise ValidationError(
                f"estimates_per_study bounds must satisfy 1 <= lo <= hi, got {self.estimates_per_study}"
            )
        se_lo, se_hi = self.se_range
        if not 0.0 < se_lo <= se_hi:
            raise ValidationError(f"se_range must satisfy 0 < lo <= hi, got {self.se_range}")
        if self.tau_between < 0 or self.tau_within < 0:
            raise ValidationError("heterogeneity standard deviations cannot be negative")
        n_mods = len(self.moderators.entries) if self.moderators is not None else 0
        if len(self.moderator_effects) != n_mods:
            raise ValidationError(
                f"got {len(self.moderator_effects)} moderator effects for {n_mods} moderators"
            )
        if self.max_tries_per_estimate < 1:
            raise ValidationError("max_tries_per_estimate must be positive")


@dataclass(frozen=True)
class SimDiagnostics:
    """Rejection-sampling tallies per weight-function interval.

    Without selection both tuples have a single entry and acceptance is
    total.  ``proposals`` counts candidates whose p-value landed in each
    interval; ``kept`` counts those that survived.
    """

    proposals: tuple[int, ...]
    kept: tuple[int, ...]

    @property
    def acceptance_rates(self) -> tuple[float, ...]:
        return tuple(
            k / p if p else float("nan") for k, p in zip(self.kept, self.proposals)
        )


def simulate(config: SimConfig, seed: int = 0) -> MetaDataset:
    data, _ = simulate_with_diagnostics(config, seed)
    return data


def simulate_with_diagnostics(config: SimConfig, seed: int = 0):
    """Generate one dataset; also return rejection tallies.

    Fully deterministic given ``config`` and ``seed``.  Raises
    :class:`BudgetError` if any single estimate exhausts its rejection
    budget, which signals a weight function with near-zero acceptance.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    schema = config.moderators if config.moderators is not None else ModeratorSchema(())
    betas = np.asarray(config.moderator_effects, dtype=float)
    wf = config.selection
    n_intervals = wf.n_intervals if wf is not None else 1
    proposals = [0] * n_intervals
    kept = [0] * n_intervals
    lo, hi = config.estimates_per_study
    se_lo, se_hi = config.se_range

    estimates = []
    width = len(str(config.n_studies))
    for r in range(config.n_studies):
        study_id = f"S{r + 1:0{width}d}"
        u = rng.normal(0.0, config.tau_between) if config.tau_between > 0 else 0.0
        n_est = int(rng.integers(lo, hi + 1))
        for q in range(n_est):
            for attempt in range(config.max_tries_per_estimate):
                x = _draw_moderators(rng, schema)
                sigma = rng.uniform(se_lo, se_hi)
                w_eff = rng.normal(0.0, config.tau_within) if config.tau_within > 0 else 0.0
                mean = (
                    config.mu
                    + (x @ betas if betas.size else 0.0)
                    + config.pet_slope * sigma
                    + config.peese_slope * sigma**2
                    + u
                    + w_eff
                )
                theta = rng.normal(mean, sigma)
                if wf is None:
                    proposals[0] += 1
                    kept[0] += 1
                    break
                p = 2.0 * (1.0 - ndtr(abs(theta) / sigma))
                j = wf.interval_index(p)
                proposals[j] += 1
                if rng.uniform() < wf.omegas[j]:
                    kept[j] += 1
                    break
            else:
                raise BudgetError(
                    f"estimate {q + 1} of study {study_id} exhausted "
                    f"{config.max_tries_per_estimate} selection proposals"
                )
            estimates.append(
                EffectEstimate(
                    estimate_id=f"{study_id}_e{q + 1}",
                    study_id=study_id,
                    theta=float(theta),
                    se=float(sigma),
                    moderators={
                        name: float(v) for name, v in zip(schema.names, x)
                    },
                )
            )
    data = MetaDataset(tuple(estimates), schema, provenance="simulated")
    return data, SimDiagnostics(tuple(proposals), tuple(kept))


def _draw_moderators(rng: np.random.Generator, schema: ModeratorSchema) -> np.ndarray:
    if not schema.entries:
        return np.empty(0)
    out = np.empty(len(schema.entries))
    for i, (name, kind) in enumerate(schema.entries):
        out[i] = float(rng.integers(0, 2)) if kind == "binary" else rng.standard_normal()
    return out


def sim_config_to_dict(config: SimConfig) -> dict:
    """JSON-ready mapping; inverse of :func:`sim_config_from_dict`."""
    return {
        "n_studies": config.n_studies,
        "estimates_per_study": list(config.estimates_per_study),
        "mu": config.mu,
        "tau_between": config.tau_between,
        "tau_within": config.tau_within,
        "se_range": list(config.se_range),
        "selection": None if config.selection is None else {
            "cutpoints": list(config.selection.cutpoints),
            "omegas": list(config.selection.omegas),
        },
        "pet_slope": config.pet_slope,
        "peese_slope": config.peese_slope,
        "moderators": [
            {"name": name, "kind": kind}
            for name, kind in (config.moderators.entries if config.moderators else ())
        ],
        "moderator_effects": list(config.moderator_effects),
        "max_tries_per_estimate": config.max_tries_per_estimate,
    }


def sim_config_from_dict(obj: dict) -> SimConfig:
    """Build a validated :class:`SimConfig` from a JSON-derived mapping."""
    if not isinstance(obj, dict):
        raise ValidationError("simulation config must be a JSON object")
    known = {
        "n_studies", "estimates_per_study", "mu", "tau_between", "tau_within",
        "se_range", "selection", "pet_slope", "peese_slope", "moderators",
        "moderator_effects", "max_tries_per_estimate",
    }
    unknown = set(obj) - known
    if unknown:
        raise ValidationError(f"unknown simulation config keys: {sorted(unknown)}")
    kwargs: dict = {}
    for key in ("n_studies", "mu", "tau_between", "tau_within", "pet_slope",
                "peese_slope", "max_tries_per_estimate"):
        if key in obj:
            kwargs[key] = obj[key]
    for key in ("estimates_per_study", "se_range"):
        if key in obj:
            kwargs[key] = tuple(obj[key])
    if obj.get("selection") is not None:
        sel = obj["selection"]
        kwargs["selection"] = WeightFunction(
            cutpoints=tuple(float(c) for c in sel["cutpoints"]),
            omegas=tuple(float(w) for w in sel["omegas"]),
        )
    if obj.get("moderators"):
        kwargs["moderators"] = ModeratorSchema(
            tuple((m["name"], m["kind"]) for m in obj["moderators"])
        )
    if "moderator_effects" in obj:
        kwargs["moderator_effects"] = tuple(float(b) for b in obj["moderator_effects"])
    return SimConfig(**kwargs)
