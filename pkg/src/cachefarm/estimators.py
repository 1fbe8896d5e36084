"""Popularity estimation from learning-phase request counts.

Two large-alphabet estimators: plain relative frequencies, and the
Good-Turing missing-mass correction where the total probability of
never-observed contents is estimated as |S1|/samples (S1 = contents
observed exactly once) and spread uniformly over them.
"""
from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

__all__ = ["EstimateVector", "empirical_estimate", "good_turing_estimate"]


@dataclass
class EstimateVector:
    """Estimated popularity over all m contents (index c-1 for content c)."""

    p_hat: np.ndarray
    samples: int
    missing_mass: float
    degenerate: bool = False     # zero-sample input; uniform fallback used
    renormalized: bool = False   # positive missing mass but nothing missing


def _as_counts(counts, m: int) -> np.ndarray:
    if isinstance(counts, Mapping):
        arr = np.zeros(m, dtype=np.int64)
        for c, k in counts.items():
            if not 1 <= int(c) <= m:
                raise ValueError(f"content id {c} outside 1..{m}")
            arr[int(c) - 1] = k
    else:
        arr = np.asarray(counts, dtype=np.int64)
        if arr.shape != (m,):
            raise ValueError(f"expected {m} counts, got shape {arr.shape}")
    if (arr < 0).any():
        raise ValueError("request counts must be nonnegative")
    return arr


def _uniform_fallback(m: int) -> EstimateVector:
    return EstimateVector(np.full(m, 1.0 / m), 0, 0.0, degenerate=True)


def empirical_estimate(counts, m: int) -> EstimateVector:
    """Relative frequencies; unseen contents get probability zero."""
    arr = _as_counts(counts, m)
    total = int(arr.sum())
    if total == 0:
        return _uniform_fallback(m)
    return EstimateVector(arr / total, total, 0.0)


def good_turing_estimate(counts, m: int) -> EstimateVector:
    """Good-Turing estimate: seen contents share 1 - M0 proportionally to
    their counts, unseen contents share the missing mass M0 = |S1|/samples
    equally.
    """
    arr = _as_counts(counts, m)
    total = int(arr.sum())
    if total == 0:
        return _uniform_fallback(m)
    seen = arr > 0
    s1 = int(np.count_nonzero(arr == 1))
    m0 = s1 / total
    n_missing = m - int(np.count_nonzero(seen))
    p = np.zeros(m, dtype=np.float64)
    p[seen] = (1.0 - m0) * arr[seen] / total
    if n_missing > 0:
        p[~seen] = m0 / n_missing
        return EstimateVector(p, total, m0)
    if m0 == 0.0:
        return EstimateVector(p, total, 0.0)
    # Every content was seen yet some mass is "missing": renormalize what we
    # have. If every sample was unique too, the seen mass is zero and there
    # is nothing to scale; fall back to uniform.
    mass = p.sum()
    if mass <= 0.0:
        out = _uniform_fallback(m)
        out.samples = total
        out.missing_mass = m0
        out.renormalized = True
        return out
    return EstimateVector(p / mass, total, m0, renormalized=True)
