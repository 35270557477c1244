"""Effect-size dataset model: loading, validation, outlier screening.

The unit of analysis is one reported effect size (``theta``) with its
standard error (``se``), clustered by the study that reported it.
Moderators are extra numeric columns declared by a :class:`ModeratorSchema`;
binary moderators must be coded 0/1, categorical ones must be pre-expanded
to dummies upstream.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import InsufficientDataError, ParseError, SchemaError, ValidationError

__all__ = [
    "EffectEstimate",
    "ModeratorSchema",
    "MetaDataset",
    "DescribeRow",
    "load_csv",
    "load_schema",
    "write_csv",
    "filter_outliers",
    "describe",
]

MODERATOR_KINDS = ("binary", "continuous")

#: Core CSV columns; everything else is resolved through the schema.
CORE_COLUMNS = ("study_id", "theta", "se")


@dataclass(frozen=True)
class EffectEstimate:
    """One reported effect size.

    ``theta`` is the change in annual GDP-per-capita growth (percentage
    points) per one Gini point on a 0-100 scale; ``se`` its standard error
    in the same units.  Instances are immutable and validated on
    construction: ``se`` must be strictly positive and both values finite.
    """

    estimate_id: str
    study_id: str
    theta: float
    se: float
    moderators: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not math.isfinite(self.theta):
            raise ValidationError(f"estimate {self.estimate_id!r}: theta is not finite")
        if not math.isfinite(self.se):
            raise ValidationError(f"estimate {self.estimate_id!r}: se is not finite")
        if self.se <= 0:
            raise ValidationError(
                f"estimate {self.estimate_id!r}: se must be > 0, got {self.se!r}"
            )

    @property
    def p_value(self) -> float:
        """Two-sided p-value under the normal reference, 2*(1 - Phi(|theta/se|))."""
        return 2.0 * (1.0 - ndtr(abs(self.theta) / self.se))


@dataclass(frozen=True)
class ModeratorSchema:
    """Ordered moderator declarations: (name, kind) with kind binary|continuous."""

    entries: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple((str(n), str(k)) for n, k in self.entries))
        names = [n for n, _ in self.entries]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate moderator names: {dupes}")
        for name, kind in self.entries:
            if kind not in MODERATOR_KINDS:
                raise SchemaError(
                    f"moderator {name!r}: kind must be one of {MODERATOR_KINDS}, got {kind!r}"
                )
            if name in CORE_COLUMNS or name == "estimate_id":
                raise SchemaError(f"moderator name {name!r} collides with a core column")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.entries)

    def kind(self, name: str) -> str:
        for n, k in self.entries:
            if n == name:
                return k
        raise SchemaError(f"unknown moderator {name!r}")


@dataclass(frozen=True)
class MetaDataset:
    """Validated, immutable collection of effect estimates clustered by study."""

    estimates: tuple[EffectEstimate, ...]
    schema: ModeratorSchema = field(default_factory=ModeratorSchema)
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "estimates", tuple(self.estimates))
        if not self.estimates:
            raise ValidationError("dataset has no estimates")
        seen_ids = set()
        for est in self.estimates:
            if est.estimate_id in seen_ids:
                raise ValidationError(f"duplicate estimate_id {est.estimate_id!r}")
            seen_ids.add(est.estimate_id)
            for name, kind in self.schema.entries:
                if name not in est.moderators:
                    raise ValidationError(
                        f"estimate {est.estimate_id!r}: missing moderator {name!r}"
                    )
                value = est.moderators[name]
                if not math.isfinite(value):
                    raise ValidationError(
                        f"estimate {est.estimate_id!r}: moderator {name!r} is not finite"
                    )
                if kind == "binary" and value not in (0.0, 1.0):
                    raise ValidationError(
                        f"estimate {est.estimate_id!r}: binary moderator {name!r} "
                        f"must be 0 or 1, got {value!r}"
                    )

    def __len__(self) -> int:
        return len(self.estimates)

    @cached_property
    def thetas(self) -> np.ndarray:
        return np.array([e.theta for e in self.estimates], dtype=float)

    @cached_property
    def ses(self) -> np.ndarray:
        return np.array([e.se for e in self.estimates], dtype=float)

    @cached_property
    def study_ids(self) -> tuple[str, ...]:
        return tuple(e.study_id for e in self.estimates)

    @cached_property
    def n_studies(self) -> int:
        return len(set(self.study_ids))

    @cached_property
    def study_index(self) -> np.ndarray:
        """Integer study label per estimate, in order of first appearance."""
        order: dict[str, int] = {}
        for sid in self.study_ids:
            order.setdefault(sid, len(order))
        return np.array([order[sid] for sid in self.study_ids], dtype=np.intp)

    def study_groups(self) -> list[np.ndarray]:
        """Index arrays of the estimates of each study, first-appearance order."""
        labels = self.study_index
        return [np.flatnonzero(labels == g) for g in range(self.n_studies)]

    def moderator(self, name: str) -> np.ndarray:
        """Column of moderator values; ``se`` and ``theta`` resolve to the core fields."""
        if name == "se":
            return self.ses.copy()
        if name == "theta":
            return self.thetas.copy()
        if name not in self.schema.names:
            raise SchemaError(f"unknown moderator {name!r}")
        return np.array([e.moderators[name] for e in self.estimates], dtype=float)

    def require_pooling(self) -> None:
        """Enforce the >=2 estimates / >=2 studies precondition of pooling ops."""
        if len(self.estimates) < 2:
            raise InsufficientDataError("pooling requires at least 2 estimates")
        if self.n_studies < 2:
            raise InsufficientDataError("pooling requires at least 2 distinct studies")

    def subset(self, keep: Sequence[bool]) -> "MetaDataset":
        kept = tuple(e for e, flag in zip(self.estimates, keep) if flag)
        return MetaDataset(kept, self.schema, self.provenance)


def load_schema(path) -> ModeratorSchema:
    """Read a moderator schema from JSON: a list of {"name", "kind"} objects."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read schema: {exc}") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, list):
        raise SchemaError("schema file must contain a JSON array")
    entries = []
    for item in raw:
        if not isinstance(item, dict) or "name" not in item or "kind" not in item:
            raise SchemaError(f"schema entry {item!r} must have 'name' and 'kind'")
        entries.append((item["name"], item["kind"]))
    return ModeratorSchema(tuple(entries))


def _parse_cell(text: str, column: str, row: int) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise ParseError(
            f"row {row}: column {column!r}: cannot parse {text!r} as a number", row=row
        ) from None
    if not math.isfinite(value):
        raise ParseError(f"row {row}: column {column!r}: value {text!r} is not finite", row=row)
    return value


def load_csv(path, schema: ModeratorSchema) -> MetaDataset:
    """Load a dataset from CSV.

    The file must be UTF-8, comma separated, with a header row containing
    ``study_id``, ``theta``, ``se``, and every schema moderator.  An optional
    ``estimate_id`` column supplies identifiers; otherwise rows are labelled
    ``e1``, ``e2``, ... in file order.  Columns that are neither core nor in
    the schema are ignored.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read dataset: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        for col in CORE_COLUMNS:
            if col not in header:
                raise SchemaError(f"{path}: missing required column {col!r}")
        for name in schema.names:
            if name not in header:
                raise SchemaError(f"{path}: missing moderator column {name!r}")
        idx = {col: header.index(col) for col in header}
        has_ids = "estimate_id" in header

        estimates = []
        for row_num, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"row {row_num}: expected {len(header)} fields, got {len(row)}",
                    row=row_num,
                )
            study_id = row[idx["study_id"]].strip()
            if not study_id:
                raise ParseError(f"row {row_num}: empty study_id", row=row_num)
            estimate_id = row[idx["estimate_id"]].strip() if has_ids else f"e{row_num}"
            theta = _parse_cell(row[idx["theta"]], "theta", row_num)
            se = _parse_cell(row[idx["se"]], "se", row_num)
            if se <= 0:
                raise ValidationError(
                    f"row {row_num}: estimate {estimate_id!r}: se must be > 0, got {se!r}"
                )
            moderators = {
                name: _parse_cell(row[idx[name]], name, row_num) for name in schema.names
            }
            estimates.append(
                EffectEstimate(
                    estimate_id=estimate_id,
                    study_id=study_id,
                    theta=theta,
                    se=se,
                    moderators=moderators,
                )
            )
    if not estimates:
        raise ValidationError(f"{path}: no data rows")
    return MetaDataset(tuple(estimates), schema, provenance=str(path))


def write_csv(data: MetaDataset, path) -> None:
    """Write a dataset back to CSV; floats use shortest exact representation."""
    header = ["estimate_id", "study_id", "theta", "se", *data.schema.names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for est in data.estimates:
            row = [est.estimate_id, est.study_id, repr(est.theta), repr(est.se)]
            row.extend(repr(float(est.moderators[name])) for name in data.schema.names)
            writer.writerow(row)


def _median_iqr(values: np.ndarray) -> tuple[float, float]:
    # Quartiles by linear interpolation between order statistics.
    q1, med, q3 = np.percentile(values, [25.0, 50.0, 75.0], method="linear")
    return float(med), float(q3 - q1)


def filter_outliers(data: MetaDataset) -> tuple[MetaDataset, tuple[str, ...]]:
    """Single-pass 10-IQR screen on theta and se.

    An estimate is dropped when its theta or its se deviates from the
    respective sample median by strictly more than ten interquartile ranges,
    both statistics computed over the full input.  Returns the retained
    dataset and the excluded estimate ids, in input order.
    """
    if len(data.estimates) < 4:
        raise InsufficientDataError(
            "outlier screening requires at least 4 estimates to define quartiles"
        )
    med_t, iqr_t = _median_iqr(data.thetas)
    med_s, iqr_s = _median_iqr(data.ses)
    keep = (np.abs(data.thetas - med_t) <= 10.0 * iqr_t) & (
        np.abs(data.ses - med_s) <= 10.0 * iqr_s
    )
    excluded = tuple(e.estimate_id for e, k in zip(data.estimates, keep) if not k)
    if keep.all():
        return data, ()
    if not keep.any():
        raise ValidationError("outlier screen would remove every estimate")
    return data.subset(keep.tolist()), excluded


@dataclass(frozen=True)
class DescribeRow:
    name: str
    count: int
    mean: float
    sd: float
    min: float
    max: float


def describe(data: MetaDataset) -> tuple[DescribeRow, ...]:
    """Descriptive statistics for theta, se, and every moderator.

    The standard deviation uses the n-1 denominator; a constant column has
    sd exactly 0.  For a single-estimate dataset sd is reported as 0.
    """
    rows = []
    columns = [("theta", data.thetas), ("se", data.ses)]
    columns.extend((name, data.moderator(name)) for name in data.schema.names)
    for name, values in columns:
        n = values.size
        sd = float(np.std(values, ddof=1)) if n > 1 else 0.0
        rows.append(
            DescribeRow(
                name=name,
                count=n,
                mean=float(np.mean(values)),
                sd=sd,
                min=float(np.min(values)),
                max=float(np.max(values)),
            )
        )
    return tuple(rows)
