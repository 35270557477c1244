"""Canonical serialisation of analysis results to JSON and CSV.

All numeric output is deterministic: JSON floats carry 17 significant
digits (enough to round-trip IEEE doubles), CSV floats use the shortest
exact representation.  Rerunning an analysis with identical inputs and
seed therefore reproduces every result file byte for byte.
"""

from __future__ import annotations

import hashlib
import math
from pathlib import Path

from .dataset import DescribeRow, MetaDataset
from .errors import ValidationError
from .metareg import MetaRegressionResult
from .pooling import FunnelTable, PooledEstimate
from .screen import ScreenResult
from .selection.ensemble import (
    AveragedPosterior,
    COMPONENTS,
    EnsembleResult,
    weight_curve,
)

__all__ = [
    "canonical_json",
    "write_json",
    "write_csv_rows",
    "format_float",
    "pool_report",
    "funnel_rows",
    "ensemble_report",
    "weightfn_rows",
    "metareg_rows",
    "metareg_report",
    "screen_rows",
    "describe_rows",
    "config_digest",
]


def format_float(x: float) -> str:
    """17-significant-digit decimal form of one JSON number."""
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(float(x), ".17g")


def canonical_json(obj, indent: int = 0) -> str:
    """Serialise nested dicts/lists/scalars with fixed float formatting."""
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        parts = [
            f'{inner}"{_escape(str(k))}": {canonical_json(v, indent + 1)}'
            for k, v in obj.items()
        ]
        return "{\n" + ",\n".join(parts) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        parts = [f"{inner}{canonical_json(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(parts) + "\n" + pad + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return format_float(obj)
    if isinstance(obj, str):
        return f'"{_escape(obj)}"'
    raise ValidationError(f"cannot serialise object of type {type(obj).__name__}")


def _escape(s: str) -> str:
    out = []
    for ch in s:
        if ch in ('"', "\\"):
            out.append("\\" + ch)
        elif ord(ch) < 0x20:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    return "".join(out)


def write_json(obj, path) -> None:
    Path(path).write_text(canonical_json(obj) + "\n", encoding="utf-8")


def write_csv_rows(path, header, rows) -> None:
    """CSV with exact float round-trip formatting and \\n line endings."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_csv_cell(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _csv_cell(v) -> str:
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        return repr(v)
    text = str(v)
    if any(c in text for c in ',"\n'):
        text = '"' + text.replace('"', '""') + '"'
    return text


# ----------------------------------------------------------------------
# per-result builders
# ----------------------------------------------------------------------

def pool_report(pooled: PooledEstimate) -> dict:
    return {
        "mu_hat": pooled.mu_hat,
        "se_naive": pooled.se_naive,
        "se_cluster": pooled.se_cluster,
        "p_value_cluster": pooled.p_value_cluster,
        "n_estimates": pooled.n_estimates,
        "n_studies": pooled.n_studies,
    }


def funnel_rows(funnel: FunnelTable):
    for kind, theta, se in funnel.rows():
        yield (kind, float(theta), float(se))


def ensemble_report(result: EnsembleResult, averaged: AveragedPosterior | None) -> dict:
    models = []
    for idx, spec in enumerate(result.specs):
        post = result.posteriors.get(idx)
        models.append({
            "label": spec.label,
            "has_effect": spec.has_effect,
            "has_heterogeneity": spec.has_heterogeneity,
            "bias_kind": spec.bias_kind,
            "prior_prob": spec.prior_prob,
            "log_evidence": float(result.log_evidence[idx]),
            "evidence_method": result.evidences[idx].method,
            "posterior_prob": float(result.posterior_probs[idx]),
            "max_rhat": (
                float(max(post.rhat)) if post is not None and post.dim > 0 else None
            ),
        })
    components = {}
    for name in COMPONENTS:
        components[name] = {
            "posterior_prob": result.component_probability(name),
            "bayes_factor": result.component_bayes_factor(name),
            "log10_bayes_factor": result.component_log10_bayes_factor(name),
        }
    report = {
        "seed": result.seed,
        "models": models,
        "components": components,
        "warnings": list(result.warnings),
    }
    if averaged is not None:
        estimates = {}
        for name in ("mu", "tau", "omega2", "omega3", "beta_pet", "beta_peese"):
            lo, hi = averaged.interval(name)
            estimates[name] = {"mean": averaged.mean(name), "ci_low": lo, "ci_high": hi}
        report["averaged"] = estimates
        report["omega_intervals"] = {
            "omega1": "p <= 0.05 (weight fixed at 1)",
            "omega2": "0.05 < p <= 0.10",
            "omega3": "p > 0.10",
        }
    return report


def weightfn_rows(averaged: AveragedPosterior, grid=None):
    p, mean, lower, upper = weight_curve(averaged, grid)
    for k in range(p.size):
        yield (float(p[k]), float(mean[k]), float(lower[k]), float(upper[k]))


def metareg_rows(result: MetaRegressionResult):
    for row in result.coefficients:
        yield (row.name, row.estimate, row.se, row.z, row.p_value, row.stars)


def metareg_report(result: MetaRegressionResult) -> dict:
    return {
        "tau2_between": result.tau2_between,
        "tau2_within": result.tau2_within,
        "restricted_loglik": result.loglik,
        "n_estimates": result.n_estimates,
        "n_studies": result.n_studies,
        "converged": result.converged,
        "optimizer": _plain(result.optimizer_detail),
        "coefficients": [
            {
                "name": r.name,
                "estimate": r.estimate,
                "se": r.se,
                "z": r.z,
                "p_value": r.p_value,
                "stars": r.stars,
            }
            for r in result.coefficients
        ],
    }


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (bool, int, float, str)) or obj is None:
        return obj
    return str(obj)


def screen_rows(result: ScreenResult):
    for row in result.rows:
        yield (row.name, row.pip, row.post_mean, row.forced, row.included)


def describe_rows(rows: tuple[DescribeRow, ...]):
    for row in rows:
        yield (row.name, row.count, row.mean, row.sd, row.min, row.max)


def config_digest(settings: dict, input_paths=()) -> str:
    """SHA-256 over the canonical settings plus raw input file bytes."""
    h = hashlib.sha256()
    h.update(canonical_json(_plain(settings)).encode("utf-8"))
    for path in input_paths:
        h.update(b"\x00")
        h.update(str(Path(path).name).encode("utf-8"))
        h.update(b"\x00")
        h.update(Path(path).read_bytes())
    return h.hexdigest()
