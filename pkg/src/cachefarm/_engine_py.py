"""Pure-Python simulation backend.

This is the reference implementation of the event loop; the compiled
backend in ``_kernel.pyx`` mirrors it operation for operation (same
draw order, same tie-breaks) and the two must produce bit-identical
results for any configuration.

Processing order on an arrival, fixed for replay:
  1. draw the requested content from the content stream,
  2. route it to the lowest-id idle server holding it, else defer,
  3. apply the policy's storage update (at most one idle server changes),
  4. record the request time for recency bookkeeping,
  5. schedule the next arrival.
The recency update comes after the storage update so that a victim scan
never sees the in-flight request's own timestamp.
"""
from __future__ import annotations

import heapq
import struct
from math import inf, log

import numpy as np
from numpy.random import Generator

from .policies import myopic_pick_victim

# event kinds in the queue
EV_ARRIVAL, EV_DEPARTURE, EV_TICK, EV_BLOCK, EV_PHASE = 0, 1, 2, 3, 4

# policy codes shared with the compiled backend
POLICY_MYOPIC, POLICY_GENIE, POLICY_STATIC = 0, 1, 2
CHANGE_NONE, CHANGE_BLOCK, CHANGE_CONTINUOUS = 0, 1, 2

# trace record kinds
TR_INIT, TR_ARRIVAL, TR_DEPARTURE, TR_SWAP, TR_BLOCK, TR_PHASE, TR_REPLACE = range(7)
TRACE_KIND_NAMES = ("init", "arrival", "departure", "swap", "block", "phase", "replace")

DEC_DEFERRED, DEC_SERVED = 0, 1
FETCH_INTERNAL, FETCH_EXTERNAL = 0, 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


class SimulationError(RuntimeError):
    """Internal inconsistency detected while simulating."""


def _mix(h: int, v: int) -> int:
    return ((h ^ (v & _MASK64)) * _FNV_PRIME) & _MASK64


def _double_bits(x: float) -> int:
    return struct.unpack("<Q", struct.pack("<d", x))[0]


class ClusterState:
    """Server-farm state: one content slot and one busy flag per server.

    Content id 0 is the "holds nothing" pseudo-content; fresh servers all
    hold it, so presence and the idle-holder index cover it uniformly.
    """

    def __init__(self, n: int, m: int):
        self.n = n
        self.m = m
        self.content = np.zeros(n, dtype=np.int64)  # 1-based content id, 0 = none
        self.busy = np.zeros(n, dtype=bool)
        self.idle_count = n
        self.busy_count = 0
        self.last_request = np.full(m + 1, -inf)
        self.presence = np.zeros(m + 1, dtype=np.int64)  # copies on any server
        self.presence[0] = n
        self.holders: dict[int, set[int]] = {0: set(range(n))}

    def idle_view(self):
        for c, servers in self.holders.items():
            last = self.last_request[c]
            for s in servers:
                yield (s, c, last)


def route(state: ClusterState, c: int):
    """Assign a request for content c to the lowest-id idle server holding
    it, marking that server busy; returns the server id or None (deferral).
    """
    servers = state.holders.get(c)
    if not servers:
        return None
    s = min(servers)
    servers.remove(s)
    if not servers:
        del state.holders[c]
    state.busy[s] = True
    state.idle_count -= 1
    state.busy_count += 1
    return s


def record_fetch(state: ClusterState, server: int, c: int) -> int:
    """Replace idle ``server``'s content with ``c`` and classify the copy:
    external when no server (busy or idle) holds c at this instant,
    internal otherwise. Updates presence for both contents.
    """
    if state.busy[server]:
        raise SimulationError(f"attempt to change content of busy server {server}")
    fetch = FETCH_EXTERNAL if state.presence[c] == 0 else FETCH_INTERNAL
    old = int(state.content[server])
    state.presence[old] -= 1
    old_holders = state.holders.get(old)
    if old_holders is not None:
        old_holders.discard(server)
        if not old_holders:
            del state.holders[old]
    state.content[server] = c
    state.presence[c] += 1
    state.holders.setdefault(c, set()).add(server)
    return fetch


def run_core(
    n, m, lam_total, horizon,
    base_cdf, content_of, rank_of, preload, genie_init, init_recency,
    policy_code, learn_time, learn_arrivals, boundary_fn,
    change_code, change_period, change_nu,
    bg_interarrival, bg_content, bg_service, bg_change,
    probe_times, want_trace, debug,
):
    g_arr = Generator(bg_interarrival)
    g_con = Generator(bg_content)
    g_srv = Generator(bg_service)
    g_chg = Generator(bg_change)
    cdf = base_cdf.tolist()

    state = ClusterState(n, m)
    trace = [] if want_trace else None
    seen = np.zeros(m + 1, dtype=bool)

    arrivals = served = deferred = deferred_p1 = 0
    external_fetches = internal_fetches = 0
    distinct = 0
    max_busy = 0
    checksum = _FNV_OFFSET
    estimator_degenerate = False

    phase = 1 if policy_code == POLICY_STATIC else 0
    counts = np.zeros(m + 1, dtype=np.int64)
    pending = np.zeros(n, dtype=np.int64)
    slots = np.zeros(n + 2, dtype=np.int64)  # genie: slots[r] = server of rank r

    arrival_replacements = 0  # debug: at most one per arrival

    def emit(kind, t, content=-1, server=-1, decision=-1, fetch=-1):
        if trace is not None:
            trace.append((t, kind, content, server, decision, fetch))

    def do_replace(t, server, c):
        nonlocal external_fetches, internal_fetches, arrival_replacements
        fetch = record_fetch(state, server, c)
        if fetch == FETCH_EXTERNAL:
            external_fetches += 1
        else:
            internal_fetches += 1
        arrival_replacements += 1
        emit(TR_REPLACE, t, c, server, -1, fetch)

    # initial loading: one content per server (the clairvoyant policy's
    # installs are policy work and count as fetches; the common random
    # loading is experimental setup and does not)
    for s in range(n):
        c = int(preload[s])
        if c == 0:
            emit(TR_INIT, 0.0, c, s, -1, -1)
            continue
        if init_recency is not None:
            state.last_request[c] = init_recency[s]
        fetch = record_fetch(state, s, c)
        if genie_init:
            if fetch == FETCH_EXTERNAL:
                external_fetches += 1
            else:
                internal_fetches += 1
            emit(TR_INIT, 0.0, c, s, -1, fetch)
        else:
            emit(TR_INIT, 0.0, c, s, -1, -1)
    if policy_code == POLICY_GENIE:
        for r in range(1, n + 1):
            slots[r] = r - 1

    heap: list[tuple[float, int, int, int]] = []
    seq = 0

    def push(t, kind, payload=-1):
        nonlocal seq
        heapq.heappush(heap, (t, seq, kind, payload))
        seq += 1

    push(-log(1.0 - g_arr.random()) / lam_total, EV_ARRIVAL)
    if change_code == CHANGE_CONTINUOUS and change_nu > 0 and m >= 2:
        push(-log(1.0 - g_chg.random()) / (m * change_nu), EV_TICK)
    elif change_code == CHANGE_BLOCK:
        push(change_period, EV_BLOCK)
    if policy_code == POLICY_STATIC and learn_time != inf:
        push(learn_time, EV_PHASE)

    def do_boundary(t):
        nonlocal phase, estimator_degenerate
        targets, degenerate = boundary_fn(np.asarray(counts[1:]), state.content.copy())
        estimator_degenerate = bool(degenerate)
        phase = 2
        emit(TR_PHASE, t)
        for s in range(n):
            tgt = int(targets[s])
            if state.busy[s]:
                pending[s] = tgt
            elif tgt != state.content[s]:
                do_replace(t, s, tgt)

    def genie_swap_fix(t, ra, rb):
        # ra, rb: the two 1-based ranks whose contents were just exchanged
        k = state.idle_count
        a, b = (ra, rb) if ra < rb else (rb, ra)
        if b <= k:
            slots[a], slots[b] = slots[b], slots[a]
        elif a <= k:
            do_replace(t, int(slots[a]), int(content_of[a - 1]) + 1)

    def genie_full_relabel(t):
        k = state.idle_count
        if k == 0:
            return
        newslot = [-1] * (k + 1)
        leavers = []
        for r in range(1, k + 1):
            s = int(slots[r])
            rn = int(rank_of[state.content[s] - 1]) + 1
            if rn <= k:
                newslot[rn] = s
            else:
                leavers.append(s)
        li = 0
        for r in range(1, k + 1):
            if newslot[r] == -1:
                s = leavers[li]
                li += 1
                do_replace(t, s, int(content_of[r - 1]) + 1)
                newslot[r] = s
        for r in range(1, k + 1):
            slots[r] = newslot[r]

    def check_invariants():
        if state.idle_count + state.busy_count != n:
            raise SimulationError("idle_count + busy_count != n")
        recount = np.zeros(m + 1, dtype=np.int64)
        for s in range(n):
            recount[state.content[s]] += 1
        if not np.array_equal(recount, state.presence):
            raise SimulationError("presence count out of sync")
        for c, servers in state.holders.items():
            for s in servers:
                if state.busy[s] or state.content[s] != c:
                    raise SimulationError("idle-holder index out of sync")
        n_idle = sum(1 for s in range(n) if not state.busy[s])
        if n_idle != state.idle_count:
            raise SimulationError("idle_count out of sync")
        if policy_code == POLICY_GENIE:
            k = state.idle_count
            ranks = []
            for r in range(1, k + 1):
                s = int(slots[r])
                if state.busy[s]:
                    raise SimulationError("genie slot holds a busy server")
                if int(content_of[r - 1]) + 1 != int(state.content[s]):
                    raise SimulationError("genie slot content does not match rank")
                ranks.append(int(rank_of[state.content[s] - 1]) + 1)
            if sorted(ranks) != list(range(1, k + 1)):
                raise SimulationError("idle servers do not hold the top-k contents")

    probes_out = []
    probe_i = 0
    n_probes = len(probe_times)
    last_t = 0.0

    while heap:
        t, _, kind, payload = heapq.heappop(heap)
        if t < last_t:
            raise SimulationError(f"event time went backwards: {t} < {last_t}")
        while probe_i < n_probes and probe_times[probe_i] < t:
            probes_out.append((float(probe_times[probe_i]), state.busy_count))
            probe_i += 1
        if t > horizon:
            break
        last_t = t

        if kind == EV_ARRIVAL:
            u = g_con.random()
            lo, hi = 0, m
            while lo < hi:
                mid = (lo + hi) // 2
                if cdf[mid] <= u:
                    lo = mid + 1
                else:
                    hi = mid
            r0 = lo if lo < m else m - 1
            c = int(content_of[r0]) + 1

            checksum = _mix(_mix(checksum, _double_bits(t)), c)
            arrivals += 1
            arrival_replacements = 0
            if not seen[c]:
                seen[c] = True
                distinct += 1

            sid = route(state, c)
            if sid is not None:
                served += 1
                if state.busy_count > max_busy:
                    max_busy = state.busy_count
                push(t - log(1.0 - g_srv.random()), EV_DEPARTURE, sid)
                emit(TR_ARRIVAL, t, c, sid, DEC_SERVED, -1)
            else:
                deferred += 1
                if phase == 1:
                    deferred_p1 += 1
                emit(TR_ARRIVAL, t, c, -1, DEC_DEFERRED, -1)

            if policy_code == POLICY_MYOPIC:
                if not state.holders.get(c) and state.idle_count > 0:
                    victim = myopic_pick_victim(state.idle_view())
                    do_replace(t, victim, c)
            elif policy_code == POLICY_GENIE:
                if sid is not None:
                    k = state.idle_count + 1  # idle count just before this arrival
                    i = int(rank_of[c - 1]) + 1
                    if i < k:
                        sk = int(slots[k])
                        do_replace(t, sk, c)
                        slots[i] = sk
            else:
                if phase == 1:
                    counts[c] += 1
                    if learn_arrivals and arrivals >= learn_arrivals:
                        do_boundary(t)

            state.last_request[c] = t
            # adaptive policies change at most one idle server per arrival; a
            # learning boundary firing inside an arrival may re-stock many
            if debug and policy_code != POLICY_STATIC and arrival_replacements > 1:
                raise SimulationError("more than one storage change in one arrival")

            push(t - log(1.0 - g_arr.random()) / lam_total, EV_ARRIVAL)

        elif kind == EV_DEPARTURE:
            sid = payload
            state.busy[sid] = False
            state.busy_count -= 1
            state.idle_count += 1
            c = int(state.content[sid])
            state.holders.setdefault(c, set()).add(sid)
            emit(TR_DEPARTURE, t, c, sid, -1, -1)
            if policy_code == POLICY_GENIE:
                k = state.idle_count
                target = int(content_of[k - 1]) + 1
                if c != target:
                    do_replace(t, sid, target)
                slots[k] = sid
            elif policy_code == POLICY_STATIC and pending[sid]:
                tgt = int(pending[sid])
                pending[sid] = 0
                if tgt != c:
                    do_replace(t, sid, tgt)

        elif kind == EV_TICK:
            u = g_chg.random()
            i0 = int(u * m)
            if i0 >= m:
                i0 = m - 1
            u = g_chg.random()
            j0 = int(u * (m - 1))
            if j0 >= m - 1:
                j0 = m - 2
            if j0 >= i0:
                j0 += 1
            ra, rb = int(rank_of[i0]), int(rank_of[j0])
            rank_of[i0], rank_of[j0] = rb, ra
            content_of[ra], content_of[rb] = j0, i0
            emit(TR_SWAP, t, i0 + 1)
            emit(TR_SWAP, t, j0 + 1)
            if policy_code == POLICY_GENIE:
                genie_swap_fix(t, ra + 1, rb + 1)
            push(t - log(1.0 - g_chg.random()) / (m * change_nu), EV_TICK)

        elif kind == EV_BLOCK:
            for i in range(m - 1, 0, -1):
                u = g_chg.random()
                j = int(u * (i + 1))
                if j > i:
                    j = i
                content_of[i], content_of[j] = content_of[j], content_of[i]
            rank_of[content_of] = np.arange(m, dtype=np.int64)
            emit(TR_BLOCK, t)
            if policy_code == POLICY_GENIE:
                genie_full_relabel(t)
            push(t + change_period, EV_BLOCK)

        elif kind == EV_PHASE:
            if phase == 1:
                do_boundary(t)

        if debug:
            check_invariants()

    while probe_i < n_probes and probe_times[probe_i] <= horizon:
        probes_out.append((float(probe_times[probe_i]), state.busy_count))
        probe_i += 1

    return {
        "arrivals": arrivals,
        "served": served,
        "deferred": deferred,
        "deferred_phase1": deferred_p1,
        "external_fetches": external_fetches,
        "internal_fetches": internal_fetches,
        "distinct_contents_requested": distinct,
        "max_busy": max_busy,
        "workload_checksum": checksum,
        "learning_truncated": policy_code == POLICY_STATIC and phase == 1,
        "estimator_degenerate": estimator_degenerate,
        "busy_at_probes": probes_out,
        "trace": trace,
    }
