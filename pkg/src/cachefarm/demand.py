"""Workload model: Zipf popularity, Poisson arrivals, popularity change.

Content types are identified by 1-based ids. A :class:`Catalog` holds a
fixed Zipf probability per *rank* plus a mutable content-to-rank
permutation; popularity changes permute ranks and never touch the
probabilities themselves, so the marginal request distribution stays
Zipf at all times.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator

__all__ = [
    "Catalog",
    "ChangeModel",
    "zipf_pmf",
    "sample_content",
    "next_interarrival",
    "apply_continuous_swap",
    "apply_block_resample",
    "random_content_subset",
]


def zipf_pmf(m: int, beta: float) -> np.ndarray:
    """Zipf(beta) probabilities over ranks 1..m, most popular first."""
    if m < 1:
        raise ValueError(f"catalog size must be >= 1, got {m}")
    if not beta > 0:
        raise ValueError(f"zipf exponent must be > 0, got {beta}")
    ranks = np.arange(1, m + 1, dtype=np.float64)
    weights = ranks ** (-float(beta))
    return weights / weights.sum()


def _uniform_index(u: float, span: int) -> int:
    # u in [0, 1); the clamp guards the one-ulp rounding case u*span == span.
    j = int(u * span)
    return span - 1 if j >= span else j


@dataclass
class Catalog:
    """Content universe: Zipf probabilities by rank plus a rank permutation."""

    m: int
    beta: float
    base_pmf: np.ndarray   # probability of rank r at index r-1, strictly decreasing
    base_cdf: np.ndarray   # cumulative pmf, final entry forced to exactly 1.0
    _content_of: np.ndarray  # 0-based rank -> 0-based content id
    _rank_of: np.ndarray     # 0-based content id -> 0-based rank

    @classmethod
    def create(cls, m: int, beta: float) -> "Catalog":
        pmf = zipf_pmf(m, beta)
        cdf = np.cumsum(pmf)
        cdf[-1] = 1.0
        ident = np.arange(m, dtype=np.int64)
        return cls(m, float(beta), pmf, cdf, ident.copy(), ident.copy())

    def copy(self) -> "Catalog":
        return Catalog(self.m, self.beta, self.base_pmf, self.base_cdf,
                       self._content_of.copy(), self._rank_of.copy())

    def rank_of_content(self, content: int) -> int:
        """Current rank (1 = most popular) of a 1-based content id."""
        return int(self._rank_of[content - 1]) + 1

    def content_of_rank(self, rank: int) -> int:
        """1-based content id currently holding the given 1-based rank."""
        return int(self._content_of[rank - 1]) + 1

    def probability_of_content(self, content: int) -> float:
        return float(self.base_pmf[self._rank_of[content - 1]])

    def check_permutation(self) -> bool:
        """Round-trip consistency of the two permutation arrays."""
        idx = np.arange(self.m)
        return bool(
            np.array_equal(self._rank_of[self._content_of], idx)
            and np.array_equal(self._content_of[self._rank_of], idx)
        )


def sample_content(catalog: Catalog, gen: Generator) -> int:
    """Draw one 1-based content id; consumes exactly one uniform."""
    u = gen.random()
    r = int(np.searchsorted(catalog.base_cdf, u, side="right"))
    if r >= catalog.m:
        r = catalog.m - 1
    return int(catalog._content_of[r]) + 1


def next_interarrival(n: int, lambda_bar: float, gen: Generator) -> float:
    """Exponential gap between aggregate arrivals, mean 1/(n*lambda_bar)."""
    if n < 1:
        raise ValueError(f"server count must be >= 1, got {n}")
    if not lambda_bar > 0:
        raise ValueError(f"load must be positive, got {lambda_bar}")
    if lambda_bar >= 1:
        warnings.warn(
            f"load lambda_bar={lambda_bar} is >= 1; the system is overloaded "
            "but the simulation is still well defined",
            RuntimeWarning,
            stacklevel=2,
        )
    return -math.log(1.0 - gen.random()) / (n * lambda_bar)


def apply_continuous_swap(catalog: Catalog, gen: Generator):
    """One popularity-exchange tick: a uniformly chosen content swaps ranks
    with a uniformly chosen other content. Returns the pair of 1-based ids,
    or None when the catalog has fewer than two contents.

    Draw order (fixed for replay): initiator, then partner.
    """
    m = catalog.m
    if m < 2:
        return None
    i = _uniform_index(gen.random(), m)
    j = _uniform_index(gen.random(), m - 1)
    if j >= i:
        j += 1
    ro, co = catalog._rank_of, catalog._content_of
    ri, rj = int(ro[i]), int(ro[j])
    ro[i], ro[j] = rj, ri
    co[ri], co[rj] = j, i
    return (i + 1, j + 1)


def apply_block_resample(catalog: Catalog, gen: Generator) -> None:
    """Replace the rank permutation with a fresh uniformly random one.

    The rank probabilities are untouched: the new distribution is the same
    Zipf law over a reshuffled content order. Fisher-Yates, top rank last.
    """
    co = catalog._content_of
    m = catalog.m
    for i in range(m - 1, 0, -1):
        j = _uniform_index(gen.random(), i + 1)
        co[i], co[j] = co[j], co[i]
    catalog._rank_of[co] = np.arange(m, dtype=np.int64)


def random_content_subset(m: int, k: int, gen: Generator) -> np.ndarray:
    """k distinct 1-based content ids, uniform without replacement.

    Partial Fisher-Yates; consumes exactly k uniforms.
    """
    if not 0 <= k <= m:
        raise ValueError(f"need 0 <= k <= m, got k={k}, m={m}")
    pool = np.arange(1, m + 1, dtype=np.int64)
    for i in range(k):
        off = _uniform_index(gen.random(), m - i)
        j = i + off
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:k].copy()


@dataclass(frozen=True)
class ChangeModel:
    """How content popularity evolves over a run.

    kind "none": static popularity.
    kind "block": every ``period`` time units the whole rank permutation is
    redrawn uniformly.
    kind "continuous": each content carries a Poisson clock of rate ``nu``;
    a tick swaps that content's rank with a uniformly chosen other content.
    The engine schedules ticks as one aggregate Poisson process of rate
    m*nu, which is distributionally identical to m independent clocks.
    """

    kind: str = "none"
    period: float = 0.0
    nu: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "block", "continuous"):
            raise ValueError(f"unknown change model {self.kind!r}")
        if self.kind == "block" and not self.period > 0:
            raise ValueError(f"block period must be > 0, got {self.period}")
        if self.kind == "continuous" and self.nu < 0:
            raise ValueError(f"swap clock rate must be >= 0, got {self.nu}")

    @classmethod
    def none(cls) -> "ChangeModel":
        return cls("none")

    @classmethod
    def block(cls, period: float) -> "ChangeModel":
        return cls("block", period=float(period))

    @classmethod
    def continuous(cls, nu: float) -> "ChangeModel":
        return cls("continuous", nu=float(nu))
