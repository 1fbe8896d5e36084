# distutils: language = c++
# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled simulation backend.

Mirrors ``_engine_py.run_core`` operation for operation: same random
draw order, same tie-breaks, bit-identical results. Differences are
purely structural: the event queue and the recency-victim indexes are
C++ containers, and the popularity-clairvoyant policy routes through
its rank slots instead of the generic idle-holder index.
"""
from libc.math cimport INFINITY, log
from libc.stdint cimport uint64_t
from libc.string cimport memcpy
from libcpp.pair cimport pair
from libcpp.set cimport set as cset
from libcpp.vector cimport vector
from cython.operator cimport dereference as deref, preincrement as inc
from cpython.pycapsule cimport PyCapsule_GetPointer, PyCapsule_IsValid

from numpy.random cimport bitgen_t

import numpy as np

from ._engine_py import SimulationError

cdef enum:
    EV_ARRIVAL = 0
    EV_DEPARTURE = 1
    EV_TICK = 2
    EV_BLOCK = 3
    EV_PHASE = 4

cdef enum:
    POLICY_MYOPIC = 0
    POLICY_GENIE = 1
    POLICY_STATIC = 2

cdef enum:
    CHANGE_NONE = 0
    CHANGE_BLOCK = 1
    CHANGE_CONTINUOUS = 2

cdef enum:
    TR_INIT = 0
    TR_ARRIVAL = 1
    TR_DEPARTURE = 2
    TR_SWAP = 3
    TR_BLOCK = 4
    TR_PHASE = 5
    TR_REPLACE = 6

cdef enum:
    FETCH_INTERNAL = 0
    FETCH_EXTERNAL = 1

cdef uint64_t FNV_OFFSET = 0xCBF29CE484222325u
cdef uint64_t FNV_PRIME = 0x100000001B3u

ctypedef pair[double, long] dlpair

cdef struct Event:
    double t
    long long seq
    int kind
    long payload


cdef inline uint64_t _dbits(double x) noexcept nogil:
    cdef uint64_t out
    memcpy(&out, &x, 8)
    return out


cdef inline bint _ev_before(Event a, Event b) noexcept nogil:
    return a.t < b.t or (a.t == b.t and a.seq < b.seq)


cdef bitgen_t *_extract(object bit_generator) except NULL:
    capsule = bit_generator.capsule
    if not PyCapsule_IsValid(capsule, "BitGenerator"):
        raise ValueError("expected a numpy BitGenerator capsule")
    return <bitgen_t *> PyCapsule_GetPointer(capsule, "BitGenerator")


cdef class _Sim:
    cdef long n, m
    cdef double lam_total, horizon, change_period, change_nu, learn_time
    cdef int policy_code, change_code
    cdef long learn_arrivals
    cdef object boundary_fn
    cdef bint want_trace, debug, genie_init

    cdef bitgen_t *bg_arr
    cdef bitgen_t *bg_con
    cdef bitgen_t *bg_srv
    cdef bitgen_t *bg_chg
    cdef object _keepalive

    cdef object content_np, counts_np
    cdef long[::1] content, preload, content_of, rank_of, presence, idle_mult
    cdef long[::1] counts, pending, slots, newslot, leavers
    cdef double[::1] last_req, cdf, probe_times, server_stamp
    cdef unsigned char[::1] busy, seen
    cdef long idle_count, busy_count
    cdef int victim_mode  # 0: content last-request recency, 1: stalest idle server

    cdef long arrivals, served, deferred, deferred_p1, ext_f, int_f
    cdef long distinct, max_busy, arrival_repl
    cdef uint64_t checksum
    cdef int phase
    cdef bint est_degenerate

    cdef vector[Event] heap
    cdef long long seq
    cdef vector[cset[long]] holders
    cdef cset[dlpair] r1   # (last request time of its content, server), one per idle server
    cdef cset[dlpair] s2   # (last request time, content) for contents on >= 2 idle servers

    cdef list trace
    cdef list probes_out

    # ---- event queue -----------------------------------------------------

    cdef void _push(self, double t, int kind, long payload=-1) noexcept:
        cdef Event e
        cdef size_t i, parent
        e.t = t
        e.seq = self.seq
        self.seq += 1
        e.kind = kind
        e.payload = payload
        self.heap.push_back(e)
        i = self.heap.size() - 1
        while i > 0:
            parent = (i - 1) >> 1
            if _ev_before(self.heap[i], self.heap[parent]):
                self.heap[i], self.heap[parent] = self.heap[parent], self.heap[i]
                i = parent
            else:
                break

    cdef Event _pop(self) noexcept:
        cdef Event root = self.heap[0]
        cdef Event last = self.heap.back()
        cdef size_t i = 0, child
        cdef size_t size
        self.heap.pop_back()
        size = self.heap.size()
        if size:
            self.heap[0] = last
            while True:
                child = 2 * i + 1
                if child >= size:
                    break
                if child + 1 < size and _ev_before(self.heap[child + 1], self.heap[child]):
                    child += 1
                if _ev_before(self.heap[child], self.heap[i]):
                    self.heap[i], self.heap[child] = self.heap[child], self.heap[i]
                    i = child
                else:
                    break
        return root

    # ---- rng -------------------------------------------------------------

    cdef inline double _u(self, bitgen_t *bg) noexcept nogil:
        return bg.next_double(bg.state)

    # ---- idle-holder bookkeeping (generic route; recency victim sets) ----

    cdef inline double _r1_key(self, long c, long s) noexcept nogil:
        return self.last_req[c] if self.victim_mode == 0 else self.server_stamp[s]

    cdef void _idle_gain(self, long c, long s) noexcept:
        cdef long mult
        self.holders[c].insert(s)
        if self.policy_code == POLICY_MYOPIC:
            mult = self.idle_mult[c]
            self.idle_mult[c] = mult + 1
            self.r1.insert(dlpair(self._r1_key(c, s), s))
            if mult == 1:
                self.s2.insert(dlpair(self.last_req[c], c))

    cdef void _idle_lose(self, long c, long s) noexcept:
        cdef long mult
        self.holders[c].erase(s)
        if self.policy_code == POLICY_MYOPIC:
            mult = self.idle_mult[c]
            self.idle_mult[c] = mult - 1
            self.r1.erase(dlpair(self._r1_key(c, s), s))
            if mult == 2:
                self.s2.erase(dlpair(self.last_req[c], c))

    cdef long _route(self, long c):
        cdef long s, i
        if self.policy_code == POLICY_GENIE:
            i = self.rank_of[c - 1] + 1
            if i > self.idle_count:
                return -1
            s = self.slots[i]
            if self.debug and self.content[s] != c:
                raise SimulationError("rank slot does not hold its content")
        else:
            if self.holders[c].empty():
                return -1
            s = deref(self.holders[c].begin())
            self._idle_lose(c, s)
        self.busy[s] = 1
        self.idle_count -= 1
        self.busy_count += 1
        return s

    cdef long _pick_victim(self):
        cdef dlpair key
        if not self.s2.empty():
            key = deref(self.s2.begin())
            return deref(self.holders[key.second].begin())
        if not self.r1.empty():
            return deref(self.r1.begin()).second
        return -1

    cdef void _do_replace(self, double t, long server, long c):
        cdef int fetch = FETCH_EXTERNAL if self.presence[c] == 0 else FETCH_INTERNAL
        cdef long old = self.content[server]
        if self.busy[server]:
            raise SimulationError(f"attempt to change content of busy server {server}")
        self.presence[old] -= 1
        if self.policy_code != POLICY_GENIE:
            self._idle_lose(old, server)
        self.content[server] = c
        self.presence[c] += 1
        if self.policy_code != POLICY_GENIE:
            self._idle_gain(c, server)
        if fetch == FETCH_EXTERNAL:
            self.ext_f += 1
        else:
            self.int_f += 1
        self.arrival_repl += 1
        if self.trace is not None:
            self.trace.append((t, TR_REPLACE, c, server, -1, fetch))

    # ---- policy-specific pieces -------------------------------------------

    cdef void _do_boundary(self, double t):
        targets, degenerate = self.boundary_fn(
            self.counts_np[1:], np.asarray(self.content_np).copy())
        cdef long[::1] tgt = np.ascontiguousarray(targets, dtype=np.int64)
        cdef long s, want
        self.est_degenerate = bool(degenerate)
        self.phase = 2
        if self.trace is not None:
            self.trace.append((t, TR_PHASE, -1, -1, -1, -1))
        for s in range(self.n):
            want = tgt[s]
            if self.busy[s]:
                self.pending[s] = want
            elif want != self.content[s]:
                self._do_replace(t, s, want)

    cdef void _genie_swap_fix(self, double t, long ra, long rb):
        cdef long k = self.idle_count
        cdef long a = ra if ra < rb else rb
        cdef long b = rb if ra < rb else ra
        if b <= k:
            self.slots[a], self.slots[b] = self.slots[b], self.slots[a]
        elif a <= k:
            self._do_replace(t, self.slots[a], self.content_of[a - 1] + 1)

    cdef void _genie_full_relabel(self, double t):
        cdef long k = self.idle_count
        cdef long r, s, rn, li
        if k == 0:
            return
        for r in range(1, k + 1):
            self.newslot[r] = -1
        li = 0
        for r in range(1, k + 1):
            s = self.slots[r]
            rn = self.rank_of[self.content[s] - 1] + 1
            if rn <= k:
                self.newslot[rn] = s
            else:
                self.leavers[li] = s
                li += 1
        li = 0
        for r in range(1, k + 1):
            if self.newslot[r] == -1:
                s = self.leavers[li]
                li += 1
                self._do_replace(t, s, self.content_of[r - 1] + 1)
                self.newslot[r] = s
        for r in range(1, k + 1):
            self.slots[r] = self.newslot[r]

    # ---- debug full scan ---------------------------------------------------

    cdef void _check_invariants(self):
        cdef long s, c, r, k, n_idle = 0
        recount = np.zeros(self.m + 1, dtype=np.int64)
        cdef long[::1] rc = recount
        if self.idle_count + self.busy_count != self.n:
            raise SimulationError("idle_count + busy_count != n")
        for s in range(self.n):
            rc[self.content[s]] += 1
            if not self.busy[s]:
                n_idle += 1
        for c in range(self.m + 1):
            if rc[c] != self.presence[c]:
                raise SimulationError("presence count out of sync")
        if n_idle != self.idle_count:
            raise SimulationError("idle_count out of sync")
        if self.policy_code != POLICY_GENIE:
            n_idle = 0
            for c in range(self.m + 1):
                it = self.holders[c].begin()
                while it != self.holders[c].end():
                    s = deref(it)
                    if self.busy[s] or self.content[s] != c:
                        raise SimulationError("idle-holder index out of sync")
                    n_idle += 1
                    inc(it)
            if n_idle != self.idle_count:
                raise SimulationError("idle-holder index out of sync")
        else:
            k = self.idle_count
            for r in range(1, k + 1):
                s = self.slots[r]
                if self.busy[s]:
                    raise SimulationError("genie slot holds a busy server")
                if self.content_of[r - 1] + 1 != self.content[s]:
                    raise SimulationError("genie slot content does not match rank")

    # ---- main loop ---------------------------------------------------------

    cdef object execute(self):
        cdef double t, u, last_t = 0.0
        cdef Event ev
        cdef long c, sid, k, i, sk, r0, i0, j0, ra, rb, tgt
        cdef long lo, hi, mid
        cdef long probe_i = 0, n_probes = self.probe_times.shape[0]
        cdef long m = self.m
        cdef cset[long].iterator hit

        while self.heap.size() > 0:
            ev = self._pop()
            t = ev.t
            if t < last_t:
                raise SimulationError(f"event time went backwards: {t} < {last_t}")
            while probe_i < n_probes and self.probe_times[probe_i] < t:
                self.probes_out.append((self.probe_times[probe_i], self.busy_count))
                probe_i += 1
            if t > self.horizon:
                break
            last_t = t

            if ev.kind == EV_ARRIVAL:
                u = self._u(self.bg_con)
                lo = 0
                hi = m
                while lo < hi:
                    mid = (lo + hi) >> 1
                    if self.cdf[mid] <= u:
                        lo = mid + 1
                    else:
                        hi = mid
                r0 = lo if lo < m else m - 1
                c = self.content_of[r0] + 1

                self.checksum = (self.checksum ^ _dbits(t)) * FNV_PRIME
                self.checksum = (self.checksum ^ <uint64_t> c) * FNV_PRIME
                self.arrivals += 1
                self.arrival_repl = 0
                if not self.seen[c]:
                    self.seen[c] = 1
                    self.distinct += 1

                sid = self._route(c)
                if sid >= 0:
                    self.served += 1
                    if self.busy_count > self.max_busy:
                        self.max_busy = self.busy_count
                    self._push(t - log(1.0 - self._u(self.bg_srv)), EV_DEPARTURE, sid)
                    if self.trace is not None:
                        self.trace.append((t, TR_ARRIVAL, c, sid, 1, -1))
                else:
                    self.deferred += 1
                    if self.phase == 1:
                        self.deferred_p1 += 1
                    if self.trace is not None:
                        self.trace.append((t, TR_ARRIVAL, c, -1, 0, -1))

                if self.policy_code == POLICY_MYOPIC:
                    if self.idle_mult[c] == 0 and self.idle_count > 0:
                        self._do_replace(t, self._pick_victim(), c)
                elif self.policy_code == POLICY_GENIE:
                    if sid >= 0:
                        k = self.idle_count + 1
                        i = self.rank_of[c - 1] + 1
                        if i < k:
                            sk = self.slots[k]
                            self._do_replace(t, sk, c)
                            self.slots[i] = sk
                else:
                    if self.phase == 1:
                        self.counts[c] += 1
                        if self.learn_arrivals > 0 and self.arrivals >= self.learn_arrivals:
                            self._do_boundary(t)

                u = self.last_req[c]
                self.last_req[c] = t
                if self.policy_code == POLICY_MYOPIC and self.idle_mult[c] >= 1:
                    hit = self.holders[c].begin()
                    while hit != self.holders[c].end():
                        self.r1.erase(dlpair(u, deref(hit)))
                        self.r1.insert(dlpair(t, deref(hit)))
                        inc(hit)
                    if self.idle_mult[c] >= 2:
                        self.s2.erase(dlpair(u, c))
                        self.s2.insert(dlpair(t, c))
                if self.debug and self.policy_code != POLICY_STATIC and self.arrival_repl > 1:
                    raise SimulationError("more than one storage change in one arrival")

                self._push(t - log(1.0 - self._u(self.bg_arr)) / self.lam_total, EV_ARRIVAL)

            elif ev.kind == EV_DEPARTURE:
                sid = ev.payload
                self.busy[sid] = 0
                self.busy_count -= 1
                self.idle_count += 1
                c = self.content[sid]
                if self.policy_code != POLICY_GENIE:
                    self._idle_gain(c, sid)
                if self.trace is not None:
                    self.trace.append((t, TR_DEPARTURE, c, sid, -1, -1))
                if self.policy_code == POLICY_GENIE:
                    k = self.idle_count
                    tgt = self.content_of[k - 1] + 1
                    if c != tgt:
                        self._do_replace(t, sid, tgt)
                    self.slots[k] = sid
                elif self.policy_code == POLICY_STATIC and self.pending[sid]:
                    tgt = self.pending[sid]
                    self.pending[sid] = 0
                    if tgt != c:
                        self._do_replace(t, sid, tgt)

            elif ev.kind == EV_TICK:
                u = self._u(self.bg_chg)
                i0 = <long> (u * m)
                if i0 >= m:
                    i0 = m - 1
                u = self._u(self.bg_chg)
                j0 = <long> (u * (m - 1))
                if j0 >= m - 1:
                    j0 = m - 2
                if j0 >= i0:
                    j0 += 1
                ra = self.rank_of[i0]
                rb = self.rank_of[j0]
                self.rank_of[i0] = rb
                self.rank_of[j0] = ra
                self.content_of[ra] = j0
                self.content_of[rb] = i0
                if self.trace is not None:
                    self.trace.append((t, TR_SWAP, i0 + 1, -1, -1, -1))
                    self.trace.append((t, TR_SWAP, j0 + 1, -1, -1, -1))
                if self.policy_code == POLICY_GENIE:
                    self._genie_swap_fix(t, ra + 1, rb + 1)
                self._push(t - log(1.0 - self._u(self.bg_chg)) / (m * self.change_nu), EV_TICK)

            elif ev.kind == EV_BLOCK:
                for i in range(m - 1, 0, -1):
                    u = self._u(self.bg_chg)
                    sk = <long> (u * (i + 1))
                    if sk > i:
                        sk = i
                    c = self.content_of[i]
                    self.content_of[i] = self.content_of[sk]
                    self.content_of[sk] = c
                for i in range(m):
                    self.rank_of[self.content_of[i]] = i
                if self.trace is not None:
                    self.trace.append((t, TR_BLOCK, -1, -1, -1, -1))
                if self.policy_code == POLICY_GENIE:
                    self._genie_full_relabel(t)
                self._push(t + self.change_period, EV_BLOCK)

            elif ev.kind == EV_PHASE:
                if self.phase == 1:
                    self._do_boundary(t)

            if self.debug:
                self._check_invariants()

        while probe_i < n_probes and self.probe_times[probe_i] <= self.horizon:
            self.probes_out.append((self.probe_times[probe_i], self.busy_count))
            probe_i += 1

        return {
            "arrivals": self.arrivals,
            "served": self.served,
            "deferred": self.deferred,
            "deferred_phase1": self.deferred_p1,
            "external_fetches": self.ext_f,
            "internal_fetches": self.int_f,
            "distinct_contents_requested": self.distinct,
            "max_busy": self.max_busy,
            "workload_checksum": int(self.checksum),
            "learning_truncated": bool(self.policy_code == POLICY_STATIC and self.phase == 1),
            "estimator_degenerate": bool(self.est_degenerate),
            "busy_at_probes": self.probes_out,
            "trace": self.trace,
        }


def run_core(
    n, m, lam_total, horizon,
    base_cdf, content_of, rank_of, preload, genie_init, init_recency,
    policy_code, learn_time, learn_arrivals, boundary_fn,
    change_code, change_period, change_nu,
    bg_interarrival, bg_content, bg_service, bg_change,
    probe_times, want_trace, debug,
):
    cdef _Sim sim = _Sim()
    cdef long s, r, c
    cdef int fetch
    cdef double[::1] recency
    cdef bint have_recency = init_recency is not None
    if have_recency:
        recency = np.ascontiguousarray(init_recency, dtype=np.float64)

    sim.n = n
    sim.m = m
    sim.lam_total = lam_total
    sim.horizon = horizon
    sim.policy_code = policy_code
    sim.learn_time = learn_time
    sim.learn_arrivals = learn_arrivals
    sim.boundary_fn = boundary_fn
    sim.change_code = change_code
    sim.change_period = change_period
    sim.change_nu = change_nu
    sim.genie_init = genie_init
    sim.want_trace = want_trace
    sim.debug = debug

    sim._keepalive = (bg_interarrival, bg_content, bg_service, bg_change)
    sim.bg_arr = _extract(bg_interarrival)
    sim.bg_con = _extract(bg_content)
    sim.bg_srv = _extract(bg_service)
    sim.bg_chg = _extract(bg_change)

    sim.cdf = np.ascontiguousarray(base_cdf, dtype=np.float64)
    sim.content_of = np.ascontiguousarray(content_of, dtype=np.int64)
    sim.rank_of = np.ascontiguousarray(rank_of, dtype=np.int64)
    sim.preload = np.ascontiguousarray(preload, dtype=np.int64)
    sim.probe_times = np.ascontiguousarray(probe_times, dtype=np.float64)

    sim.content_np = np.zeros(n, dtype=np.int64)
    sim.content = sim.content_np
    sim.busy = np.zeros(n, dtype=np.uint8)
    sim.seen = np.zeros(m + 1, dtype=np.uint8)
    sim.last_req = np.full(m + 1, -INFINITY, dtype=np.float64)
    sim.presence = np.zeros(m + 1, dtype=np.int64)
    sim.idle_mult = np.zeros(m + 1, dtype=np.int64)
    sim.counts_np = np.zeros(m + 1, dtype=np.int64)
    sim.counts = sim.counts_np
    sim.pending = np.zeros(n, dtype=np.int64)
    sim.slots = np.zeros(n + 2, dtype=np.int64)
    sim.newslot = np.zeros(n + 2, dtype=np.int64)
    sim.leavers = np.zeros(n + 2, dtype=np.int64)
    sim.idle_count = n
    sim.busy_count = 0

    sim.checksum = FNV_OFFSET
    sim.phase = 1 if policy_code == POLICY_STATIC else 0
    sim.est_degenerate = False
    sim.seq = 0
    sim.holders.resize(m + 1)
    sim.trace = [] if want_trace else None
    sim.probes_out = []

    sim.presence[0] = n
    if policy_code != POLICY_GENIE:
        for s in range(n):
            sim._idle_gain(0, s)
    for s in range(n):
        c = sim.preload[s]
        if c == 0:
            if sim.trace is not None:
                sim.trace.append((0.0, TR_INIT, c, s, -1, -1))
            continue
        if have_recency:
            sim.last_req[c] = recency[s]
        fetch = FETCH_EXTERNAL if sim.presence[c] == 0 else FETCH_INTERNAL
        sim.presence[0] -= 1
        if policy_code != POLICY_GENIE:
            sim._idle_lose(0, s)
        sim.content[s] = c
        sim.presence[c] += 1
        if policy_code != POLICY_GENIE:
            sim._idle_gain(c, s)
        if genie_init:
            if fetch == FETCH_EXTERNAL:
                sim.ext_f += 1
            else:
                sim.int_f += 1
            if sim.trace is not None:
                sim.trace.append((0.0, TR_INIT, c, s, -1, fetch))
        elif sim.trace is not None:
            sim.trace.append((0.0, TR_INIT, c, s, -1, -1))
    if policy_code == POLICY_GENIE:
        for r in range(1, n + 1):
            sim.slots[r] = r - 1

    sim._push(-log(1.0 - sim._u(sim.bg_arr)) / lam_total, EV_ARRIVAL, -1)
    if change_code == CHANGE_CONTINUOUS and change_nu > 0 and m >= 2:
        sim._push(-log(1.0 - sim._u(sim.bg_chg)) / (m * change_nu), EV_TICK, -1)
    elif change_code == CHANGE_BLOCK:
        sim._push(change_period, EV_BLOCK, -1)
    if policy_code == POLICY_STATIC and learn_time != INFINITY:
        sim._push(learn_time, EV_PHASE, -1)

    return sim.execute()
