"""Shared fixtures and small mask-building helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from salinst.model import InstanceProposal


def rect(shape, y, x, h, w):
    """Boolean mask with a solid h-by-w block whose top-left is (y, x)."""
    m = np.zeros(shape, dtype=bool)
    m[y:y + h, x:x + w] = True
    return m


def strip(length, start, stop):
    """1-row mask with columns [start, stop) set."""
    m = np.zeros((1, length), dtype=bool)
    m[0, start:stop] = True
    return m


def random_mask(rng, shape, p=0.5, nonempty=False):
    m = rng.random(shape) < p
    if nonempty and not m.any():
        m[rng.integers(shape[0]), rng.integers(shape[1])] = True
    return m


def proposal(region, category=1, cls_score=0.9):
    return InstanceProposal(region=region, category=category,
                            cls_score=cls_score)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
