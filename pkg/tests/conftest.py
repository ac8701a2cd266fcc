"""Shared fixtures and small builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from roundmix import (
    GaussianComponent,
    LatentMixture,
    MixedSchema,
    MonotoneMap,
    PartitionSpec,
)


def std_mixture(p: int) -> LatentMixture:
    """Single standard-normal component of dimension p."""
    return LatentMixture(np.array([1.0]), (GaussianComponent(np.zeros(p), np.eye(p)),))


def gaussian_mixture(weights, means, covs) -> LatentMixture:
    comps = tuple(
        GaussianComponent(np.asarray(m, dtype=float), np.asarray(c, dtype=float))
        for m, c in zip(means, covs)
    )
    return LatentMixture(np.asarray(weights, dtype=float), comps)


def random_spd(rng: np.random.Generator, p: int, scale: float = 1.0) -> np.ndarray:
    a = rng.standard_normal((p, p))
    return scale * (a @ a.T / p + 0.5 * np.eye(p))


@pytest.fixture
def binary_schema() -> MixedSchema:
    """One binary coordinate thresholded at zero."""
    return MixedSchema(partitions=(PartitionSpec.from_cuts((0.0,)),))


@pytest.fixture
def count_schema() -> MixedSchema:
    """One count coordinate with cells [y-1, y)."""
    return MixedSchema(partitions=(PartitionSpec.counting(),))


@pytest.fixture
def cont_binary_schema() -> MixedSchema:
    """One identity-mapped continuous coordinate plus one binary coordinate."""
    return MixedSchema(
        cont_maps=(MonotoneMap(),),
        partitions=(PartitionSpec.from_cuts((0.0,)),),
    )
