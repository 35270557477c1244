"""Shared dataset builders for the test suite."""

import numpy as np
import pytest

from metainfer.dataset import EffectEstimate, MetaDataset, ModeratorSchema


def make_dataset(thetas, ses, studies=None, moderators=None, schema=None):
    """Assemble a MetaDataset from parallel sequences.

    ``studies`` defaults to one study per estimate.  ``moderators`` is a
    mapping name -> sequence aligned with thetas.
    """
    thetas = list(thetas)
    ses = list(ses)
    if studies is None:
        studies = [f"s{i + 1}" for i in range(len(thetas))]
    mods = moderators or {}
    if schema is None and mods:
        schema = ModeratorSchema(entries=tuple((name, "continuous") for name in mods))
    estimates = []
    for i in range(len(thetas)):
        estimates.append(
            EffectEstimate(
                estimate_id=f"e{i + 1}",
                study_id=str(studies[i]),
                theta=float(thetas[i]),
                se=float(ses[i]),
                moderators={k: float(v[i]) for k, v in mods.items()},
            )
        )
    if schema is None:
        return MetaDataset(estimates=tuple(estimates))
    return MetaDataset(estimates=tuple(estimates), schema=schema)


@pytest.fixture
def three_row_dataset():
    # unit weights, three studies: pooled mean is the plain average
    return make_dataset([1.0, 2.0, 3.0], [1.0, 1.0, 1.0])


@pytest.fixture
def rng():
    return np.random.default_rng(20260821)


def random_dataset(rng, n_min=5, n_max=50, n_studies=None):
    """Random well-conditioned dataset for oracle comparisons."""
    n = int(rng.integers(n_min, n_max + 1))
    if n_studies is None:
        n_studies = int(rng.integers(2, max(3, n // 2 + 1)))
    thetas = rng.normal(0.0, 1.0, n)
    ses = rng.uniform(0.05, 2.0, n)
    studies = [f"s{int(g) + 1}" for g in rng.integers(0, n_studies, n)]
    # ensure at least two distinct studies survive the draw
    studies[0] = "s1"
    studies[-1] = "s2" if n_studies >= 2 else studies[-1]
    return make_dataset(thetas, ses, studies)
