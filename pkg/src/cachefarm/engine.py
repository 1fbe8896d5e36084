"""Engine front door: backend selection, run setup, metrics assembly.

Two interchangeable backends execute the event loop: a compiled
extension (``cachefarm._kernel``, built from Cython) and a pure-Python
reference (``cachefarm._engine_py``). They consume the same random
streams in the same order and produce bit-identical results; the
compiled one is selected by default when available. Set the environment
variable ``CACHEFARM_BACKEND`` to ``python`` or ``cython`` to force one.
"""
from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _engine_py
from ._engine_py import (
    DEC_DEFERRED,
    DEC_SERVED,
    FETCH_EXTERNAL,
    FETCH_INTERNAL,
    POLICY_GENIE,
    POLICY_MYOPIC,
    POLICY_STATIC,
    CHANGE_NONE,
    CHANGE_BLOCK,
    CHANGE_CONTINUOUS,
    TR_ARRIVAL,
    TR_BLOCK,
    TR_DEPARTURE,
    TR_INIT,
    TR_PHASE,
    TR_REPLACE,
    TR_SWAP,
    TRACE_KIND_NAMES,
    SimulationError,
)
from .config import SimConfig
from .demand import Catalog, random_content_subset
from .policies import Genie, Myopic, StaticLearning, build_boundary_fn, learn_schedule
from .rng import RunStreams

__all__ = ["EngineError", "RunMetrics", "run", "available_backends",
           "default_backend", "write_trace_csv", "TRACE_HEADER"]

try:
    from . import _kernel
    _HAVE_KERNEL = True
except ImportError:  # pragma: no cover - depends on the build
    _kernel = None
    _HAVE_KERNEL = False


class EngineError(RuntimeError):
    """Fatal internal simulation error (state corruption, bad event order)."""


@dataclass
class RunMetrics:
    """Counters and optional event trace produced by one run."""

    arrivals: int
    served: int
    deferred: int
    deferred_phase1: int
    external_fetches: int
    internal_fetches: int
    distinct_contents_requested: int
    max_busy: int
    workload_checksum: int
    learning_truncated: bool
    estimator_degenerate: bool
    busy_at_probes: list = field(default_factory=list)
    trace: list | None = None

    @property
    def served_fraction(self) -> float:
        return self.served / self.arrivals if self.arrivals else float("nan")

    def as_dict(self) -> dict:
        return {
            "arrivals": self.arrivals,
            "served": self.served,
            "deferred": self.deferred,
            "deferred_phase1": self.deferred_phase1,
            "served_fraction": self.served_fraction,
            "external_fetches": self.external_fetches,
            "internal_fetches": self.internal_fetches,
            "distinct_contents_requested": self.distinct_contents_requested,
            "max_busy": self.max_busy,
            "workload_checksum": self.workload_checksum,
            "learning_truncated": self.learning_truncated,
            "estimator_degenerate": self.estimator_degenerate,
            "busy_at_probes": list(self.busy_at_probes),
        }


def available_backends() -> tuple[str, ...]:
    return ("cython", "python") if _HAVE_KERNEL else ("python",)


def default_backend() -> str:
    forced = os.environ.get("CACHEFARM_BACKEND", "").strip().lower()
    if forced:
        if forced not in ("cython", "python"):
            raise EngineError(f"CACHEFARM_BACKEND must be cython or python, got {forced!r}")
        if forced == "cython" and not _HAVE_KERNEL:
            raise EngineError("CACHEFARM_BACKEND=cython but the compiled kernel is not built")
        return forced
    return "cython" if _HAVE_KERNEL else "python"


def _policy_code(policy) -> int:
    if isinstance(policy, Myopic):
        return POLICY_MYOPIC
    if isinstance(policy, Genie):
        return POLICY_GENIE
    if isinstance(policy, StaticLearning):
        return POLICY_STATIC
    raise EngineError(f"unknown policy object {policy!r}")


_CHANGE_CODES = {"none": CHANGE_NONE, "block": CHANGE_BLOCK, "continuous": CHANGE_CONTINUOUS}


def run(config: SimConfig, *, backend: str | None = None, debug: bool = False,
        probe_times: Sequence[float] = (), keep_trace: bool | None = None,
        _preload_mode: str = "random", _init_order: str | None = None) -> RunMetrics:
    """Simulate [0, horizon] under ``config``; deterministic in (config, seed).

    ``probe_times`` asks for the busy-server count at those instants.
    ``keep_trace`` overrides ``config.trace``.

    The underscore-prefixed knobs vary the initial loading for calibration
    experiments only; production behavior is the default.
    """
    config.validate()
    if config.lambda_bar >= 1:
        warnings.warn(
            f"load lambda_bar={config.lambda_bar} is >= 1; the system is "
            "overloaded but the simulation is still well defined",
            RuntimeWarning,
            stacklevel=2,
        )
    name = backend or default_backend()
    if name == "cython":
        if not _HAVE_KERNEL:
            raise EngineError("compiled kernel requested but not built")
        mod = _kernel
    elif name == "python":
        mod = _engine_py
    else:
        raise EngineError(f"unknown backend {name!r}")

    n, m = config.n, config.m
    catalog = Catalog.create(m, config.beta)
    streams = RunStreams.from_seed(config.seed)

    pcode = _policy_code(config.policy)
    if pcode == POLICY_GENIE:
        preload = np.arange(1, n + 1, dtype=np.int64)
    elif _preload_mode == "random":
        from numpy.random import Generator
        preload = random_content_subset(m, n, Generator(streams.init))
    elif _preload_mode == "topn":
        preload = np.arange(1, n + 1, dtype=np.int64)
    elif _preload_mode == "empty":
        preload = np.zeros(n, dtype=np.int64)
    else:
        raise EngineError(f"unknown preload mode {_preload_mode!r}")

    init_recency = None
    if _init_order is not None and pcode != POLICY_GENIE:
        # pseudo request times far before t=0: encode an eviction order among
        # the preloaded, never-requested contents
        if _init_order == "evict-low-id-first":
            init_recency = -1e15 + preload.astype(np.float64)
        elif _init_order == "evict-high-id-first":
            init_recency = -1e15 - preload.astype(np.float64)
        elif _init_order == "protect-unrequested":
            init_recency = np.full(n, 1e15)
        else:
            raise EngineError(f"unknown init order {_init_order!r}")

    learn_time, learn_arrivals = learn_schedule(config.policy)
    boundary_fn = (build_boundary_fn(config.policy, m, n)
                   if isinstance(config.policy, StaticLearning) else None)

    change = config.change_model
    want_trace = config.trace if keep_trace is None else keep_trace
    probes = np.asarray(sorted(float(t) for t in probe_times), dtype=np.float64)

    try:
        raw = mod.run_core(
            n, m, float(n * config.lambda_bar), float(config.horizon),
            catalog.base_cdf,
            catalog._content_of.copy(), catalog._rank_of.copy(),
            preload, pcode == POLICY_GENIE, init_recency,
            pcode, learn_time, learn_arrivals, boundary_fn,
            _CHANGE_CODES[change.kind], float(change.period), float(change.nu),
            streams.interarrival, streams.content, streams.service, streams.change,
            probes, bool(want_trace), bool(debug),
        )
    except SimulationError as exc:
        raise EngineError(str(exc)) from exc

    metrics = RunMetrics(
        arrivals=raw["arrivals"],
        served=raw["served"],
        deferred=raw["deferred"],
        deferred_phase1=raw["deferred_phase1"],
        external_fetches=raw["external_fetches"],
        internal_fetches=raw["internal_fetches"],
        distinct_contents_requested=raw["distinct_contents_requested"],
        max_busy=raw["max_busy"],
        workload_checksum=raw["workload_checksum"],
        learning_truncated=raw["learning_truncated"],
        estimator_degenerate=raw["estimator_degenerate"],
        busy_at_probes=raw["busy_at_probes"],
        trace=raw["trace"],
    )
    if metrics.arrivals != metrics.served + metrics.deferred:
        raise EngineError("conservation violated: arrivals != served + deferred")
    if metrics.learning_truncated:
        warnings.warn("learning phase covered the whole horizon; storage was never re-optimized",
                      RuntimeWarning, stacklevel=2)
    return metrics


TRACE_HEADER = "time,kind,content,server,decision,fetch_class"

_DECISION_NAMES = {DEC_DEFERRED: "deferred", DEC_SERVED: "served", -1: "-1"}
_FETCH_NAMES = {FETCH_INTERNAL: "internal", FETCH_EXTERNAL: "external", -1: "-1"}


def write_trace_csv(trace: Iterable[tuple], path_or_file) -> None:
    """Write trace records as CSV: time,kind,content,server,decision,fetch_class
    with -1 for absent fields."""
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, "w", newline="", encoding="utf-8") if own else path_or_file
    try:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER.split(","))
        for t, kind, content, server, decision, fetch in trace:
            writer.writerow([
                f"{t:.17g}",
                TRACE_KIND_NAMES[kind],
                content,
                server,
                _DECISION_NAMES[decision],
                _FETCH_NAMES[fetch],
            ])
    finally:
        if own:
            fh.close()
