"""Storage policies and their pure decision rules.

Four policies share the engine: two adaptive ones (recency-driven
replication and a popularity-clairvoyant top-k policy) and two
learn-then-fix variants that estimate popularity during a learning
phase and then freeze a proportional server allocation.

The stateful parts live in the simulation backends; this module holds
the policy descriptors plus the pure functions they are built from:
victim selection for the recency policy, largest-remainder allocation,
and the target assignment computed at a learning-phase boundary.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import inf
from typing import Callable, Union

import numpy as np

from .estimators import empirical_estimate, good_turing_estimate

__all__ = [
    "Myopic",
    "Genie",
    "StaticLearning",
    "PolicyKind",
    "parse_policy",
    "myopic_pick_victim",
    "static_allocate",
    "assign_targets",
    "build_boundary_fn",
]

ESTIMATOR_TOKENS = ("empirical", "good-turing")


@dataclass(frozen=True)
class Myopic:
    """Keep the most recently requested contents replicated on idle servers."""

    token = "myopic"


@dataclass(frozen=True)
class Genie:
    """Popularity-aware policy: the k idle servers always hold the current
    top-k ranked contents, one copy each."""

    token = "genie"


@dataclass(frozen=True)
class StaticLearning:
    """Learn popularity in phase 1, then freeze a proportional allocation.

    Exactly one of ``learn_seconds`` (boundary at a fixed time) or
    ``learn_arrivals`` (boundary right after that many arrivals) is set.
    """

    estimator: str
    learn_seconds: float | None = None
    learn_arrivals: int | None = None

    def __post_init__(self):
        if self.estimator not in ESTIMATOR_TOKENS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        has_s = self.learn_seconds is not None
        has_a = self.learn_arrivals is not None
        if has_s == has_a:
            raise ValueError("set exactly one of learn_seconds / learn_arrivals")
        if has_s and not self.learn_seconds > 0:
            raise ValueError("learn_seconds must be > 0")
        if has_a and not self.learn_arrivals > 0:
            raise ValueError("learn_arrivals must be > 0")

    @property
    def token(self) -> str:
        return self.estimator


PolicyKind = Union[Myopic, Genie, StaticLearning]

POLICY_TOKENS = ("myopic", "genie") + ESTIMATOR_TOKENS


def parse_policy(token: str, learn_seconds=None, learn_arrivals=None) -> PolicyKind:
    """Build a policy from its CLI/config token."""
    if token == "myopic":
        return Myopic()
    if token == "genie":
        return Genie()
    if token in ESTIMATOR_TOKENS:
        if learn_seconds is None and learn_arrivals is None:
            learn_arrivals = 100
        return StaticLearning(token, learn_seconds, learn_arrivals)
    raise ValueError(f"unknown policy {token!r} (expected one of {POLICY_TOKENS})")


def myopic_pick_victim(idle_view) -> int | None:
    """Pick the idle server whose content gets evicted.

    ``idle_view`` yields (server_id, content_id, last_request_time) for every
    currently idle server; never-requested contents carry -inf.

    Rules, in order:
      1. if any content sits on more than one idle server, evict a duplicate:
         least recently requested duplicated content first, ties by lower
         content id, then the lowest-id server holding it;
      2. otherwise evict from the idle server whose content was requested
         least recently, ties by lower server id. The tie-break is over
         servers, not contents: among never-requested contents it is
         popularity-blind, which matters when ids correlate with rank.
    Returns None for an empty idle set.
    """
    per_content: dict[int, tuple[float, int, int]] = {}  # c -> (last, count, min_sid)
    lru_key = None
    for sid, c, last in idle_view:
        cur = per_content.get(c)
        if cur is None:
            per_content[c] = (last, 1, sid)
        else:
            per_content[c] = (cur[0], cur[1] + 1, min(cur[2], sid))
        if lru_key is None or (last, sid) < lru_key:
            lru_key = (last, sid)
    if not per_content:
        return None
    dup_key = None
    for c, (last, count, sid) in per_content.items():
        if count >= 2:
            key = (last, c, sid)
            if dup_key is None or key < dup_key:
                dup_key = key
    return dup_key[2] if dup_key is not None else lru_key[1]


def static_allocate(p_hat, n: int) -> np.ndarray:
    """Servers per content by largest-remainder rounding of quotas n*p_hat.

    Floors first, then the shortfall goes to the largest fractional
    remainders (ties to the lower content id). The result sums to n and
    deviates from every quota by less than one server.
    """
    p = np.asarray(p_hat, dtype=np.float64)
    if n < 1:
        raise ValueError(f"server count must be >= 1, got {n}")
    if (p < 0).any():
        raise ValueError("estimated probabilities must be nonnegative")
    if abs(float(p.sum()) - 1.0) > 1e-9:
        raise ValueError(f"estimated probabilities sum to {p.sum()!r}, not 1")
    quota = n * p
    alloc = np.floor(quota).astype(np.int64)
    short = n - int(alloc.sum())
    if short > 0:
        order = np.argsort(-(quota - alloc), kind="stable")
        alloc[order[:short]] += 1
    return alloc


def assign_targets(allocation: np.ndarray, contents: np.ndarray) -> np.ndarray:
    """Map an allocation (servers per content) onto concrete servers.

    Servers already holding a content that still needs copies keep it;
    the remaining demand is assigned to the remaining servers, both in
    ascending-id order. Minimizes churn and is fully deterministic.

    ``contents`` holds each server's current 1-based content id (0 = none).
    """
    n = len(contents)
    remaining = np.asarray(allocation, dtype=np.int64).copy()
    if int(remaining.sum()) != n:
        raise ValueError("allocation must sum to the number of servers")
    targets = np.zeros(n, dtype=np.int64)
    for s in range(n):
        c = int(contents[s])
        if c >= 1 and remaining[c - 1] > 0:
            targets[s] = c
            remaining[c - 1] -= 1
    queue = np.repeat(np.arange(1, len(remaining) + 1, dtype=np.int64), remaining)
    qi = 0
    for s in range(n):
        if targets[s] == 0:
            targets[s] = queue[qi]
            qi += 1
    return targets


def build_boundary_fn(policy: StaticLearning, m: int, n: int) -> Callable:
    """Closure invoked once at the learning-phase boundary.

    Takes the phase-1 request counts (length m, index c-1) and the current
    per-server contents; returns (targets, degenerate_flag).
    """
    est_fn = empirical_estimate if policy.estimator == "empirical" else good_turing_estimate

    def boundary(counts: np.ndarray, contents: np.ndarray):
        est = est_fn(counts, m)
        alloc = static_allocate(est.p_hat, n)
        targets = assign_targets(alloc, contents)
        return targets, bool(est.degenerate)

    return boundary


def learn_schedule(policy: PolicyKind) -> tuple[float, int]:
    """(boundary time, boundary arrival count) for the engine; inf/0 = unused."""
    if isinstance(policy, StaticLearning):
        if policy.learn_seconds is not None:
            return float(policy.learn_seconds), 0
        return inf, int(policy.learn_arrivals)
    return inf, 0
