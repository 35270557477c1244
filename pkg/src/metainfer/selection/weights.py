"""Stepwise publication-probability weight functions over two-sided p-values.

A weight function is constant on p-value intervals [0, c1], (c1, c2], ...,
(c_{J-1}, 1].  Weights are reported relative to the most significant
interval, whose weight is pinned at 1; a p-value exactly on a cutpoint
belongs to the more significant interval.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError, ValidationError

__all__ = ["WeightFunction"]


@dataclass(frozen=True)
class WeightFunction:
    """Relative publication probabilities per two-sided p-value interval."""

    cutpoints: tuple[float, ...]
    omegas: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "cutpoints", tuple(float(c) for c in self.cutpoints))
        object.__setattr__(self, "omegas", tuple(float(w) for w in self.omegas))
        if len(self.omegas) != len(self.cutpoints) + 1:
            raise ValidationError(
                f"need {len(self.cutpoints) + 1} weights for "
                f"{len(self.cutpoints)} cutpoints, got {len(self.omegas)}"
            )
        for c in self.cutpoints:
            if not 0.0 < c < 1.0:
                raise ValidationError(f"cutpoint {c!r} outside (0, 1)")
        if any(b <= a for a, b in zip(self.cutpoints, self.cutpoints[1:])):
            raise ValidationError(f"cutpoints must be strictly ascending: {self.cutpoints}")
        if self.omegas[0] != 1.0:
            raise ValidationError("the most significant interval must have weight 1")
        for w in self.omegas:
            if not 0.0 < w <= 1.0:
                raise DomainError(f"interval weight {w!r} outside (0, 1]")

    @property
    def n_intervals(self) -> int:
        return len(self.omegas)

    def interval_index(self, p) -> np.ndarray:
        """Index of the interval containing each p-value (ties go left)."""
        p_arr = np.asarray(p, dtype=float)
        if np.any((p_arr < 0) | (p_arr > 1)):
            raise DomainError("p-values must lie in [0, 1]")
        return np.searchsorted(np.asarray(self.cutpoints), p_arr, side="left")

    def __call__(self, p) -> np.ndarray:
        """Evaluate the weight at each p-value."""
        return np.asarray(self.omegas)[self.interval_index(p)]
