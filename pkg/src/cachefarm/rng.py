"""Named, independently seeded random substreams for one simulation run.

Each run derives six PCG64 streams from a single 64-bit seed, one per
purpose. Arrival times, requested contents and popularity changes come
from their own streams, so the workload is bit-identical across storage
policies run with the same seed; draws that only some policies consume
(service times per assigned request, the initial content loading) live
on separate streams and cannot shift the workload.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.random import PCG64, SeedSequence

STREAM_NAMES = ("interarrival", "content", "service", "change", "init", "tiebreak")


@dataclass
class RunStreams:
    """One PCG64 bit generator per purpose, all derived from ``seed``."""

    seed: int
    interarrival: PCG64
    content: PCG64
    service: PCG64
    change: PCG64
    init: PCG64
    tiebreak: PCG64

    @classmethod
    def from_seed(cls, seed: int) -> "RunStreams":
        children = SeedSequence(int(seed)).spawn(len(STREAM_NAMES))
        return cls(int(seed), *(PCG64(c) for c in children))


def replication_seed(master_seed: int, replication: int) -> int:
    """Run seed for one replication of an experiment.

    Deliberately independent of the policy and of the swept parameter, so
    that all policies (and, as far as the shared uniforms allow, all sweep
    cells) see common random numbers.
    """
    ss = SeedSequence([int(master_seed), int(replication)])
    return int(ss.generate_state(1, np.uint64)[0])
