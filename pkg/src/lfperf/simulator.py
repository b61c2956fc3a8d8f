"""Seeded discrete-event simulator of P threads sharing one CAS-protected word.

Each thread loops: parallel work, Read of the shared word (rc), critical
work, CAS (cc). The cache line serves one request at a time: a CAS holds
it for cc and a Read for its rc transfer, reading the version current at
the grant. When the line is released, every waiting requester (Read or CAS)
is equally likely to be served next. With ``read_holds_line=False`` a
granted Read takes no line time (rc is paid off the line) and arbitration
continues until a CAS wins or nobody waits. A failed CAS hands the thread
the current version, so it goes straight back to critical work without a
Read.

Events at equal times are ordered requests first, then line releases, then
by insertion sequence; this lets a thread returning from critical work at the
exact end of a CAS compete for the line.
"""

from __future__ import annotations

import heapq
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import Distribution, PlatformParams, WorkloadParams, sample_block, validate

N_BATCHES = 20
_BUF = 4096

# event kinds; heap entries are (time, priority, seq, tid, kind) with
# priority 0 for requests and 1 for line releases
_PW_END, _READ_END, _CW_END, _CAS_END = 0, 1, 2, 3


@dataclass(frozen=True)
class SimConfig:
    platform: PlatformParams
    workload: WorkloadParams
    seed: int = 0
    warmup_successes: int = 2_000
    measured_successes: int = 20_000
    backoff: float = 0.0
    read_holds_line: bool = True
    record_failures: bool = False
    record_trace: bool = False

    def __post_init__(self):
        validate(self.platform, self.workload)
        if self.measured_successes < 1000:
            raise ValueError("measured_successes >= 1000 required")
        if self.warmup_successes < 0:
            raise ValueError("warmup_successes >= 0 required")
        if self.backoff < 0:
            raise ValueError("backoff >= 0 required")


@dataclass
class SimStats:
    throughput: float
    fails_per_success: float
    mean_retry_occupancy: float
    mean_slack: float
    mean_expansion_delay: float
    successes: int
    failures: int
    elapsed: float
    stderr_throughput: float
    batch_throughputs: list[float] = field(repr=False)
    failures_per_period: list[int] | None = field(default=None, repr=False)
    trace: list[tuple] | None = field(default=None, repr=False)
    final_version: int = 0


class _Stream:
    """Buffered variates from one distribution and one generator."""

    __slots__ = ("dist", "rng", "buf", "pos")

    def __init__(self, dist: Distribution, rng: np.random.Generator):
        self.dist = dist
        self.rng = rng
        self.buf: list[float] = []
        self.pos = 0

    def next(self) -> float:
        if self.pos >= len(self.buf):
            self.buf = sample_block(self.dist, self.rng, _BUF).tolist()
            self.pos = 0
        x = self.buf[self.pos]
        self.pos += 1
        return x


def run(config: SimConfig) -> SimStats:
    P = config.platform.P
    cc = config.platform.cc
    rc = config.platform.rc
    backoff = config.backoff
    read_hold = 1 if config.read_holds_line else 0
    warmup = config.warmup_successes
    total = warmup + config.measured_successes
    batch_size = config.measured_successes // N_BATCHES

    ss = np.random.SeedSequence(config.seed)
    children = ss.spawn(P + 1)
    arbiter = np.random.Generator(np.random.PCG64(children[P]))
    pw_streams = []
    cw_streams = []
    for tid in range(P):
        pw_rng, cw_rng = (np.random.Generator(np.random.PCG64(s)) for s in children[tid].spawn(2))
        pw_streams.append(_Stream(config.workload.pw_dist, pw_rng))
        cw_streams.append(_Stream(config.workload.cw_dist, cw_rng))
    arb_buf: list[float] = []
    arb_pos = 0

    heap: list[tuple] = []
    push = heapq.heappush
    pop = heapq.heappop
    seq = 0

    seen = [0] * P          # version each thread last observed
    cas_req = [0.0] * P     # time of the pending CAS request
    version = 0
    busy = False            # line held by a CAS (or a Read, with read_hold)
    waiters: list[int] = []  # tid for CAS requests, ~tid for Reads

    trace = [] if config.record_trace else None

    # statistics
    now = 0.0
    last_t = 0.0
    in_loop = 0             # threads outside the parallel section
    occ_area = 0.0
    successes = 0
    failures = 0
    measuring = warmup == 0
    t_start = 0.0
    period_start = 0.0
    period_fails = 0
    first_access = -1.0
    slack_sum = 0.0
    wait_sum = 0.0
    per_period: list[int] | None = [] if config.record_failures else None
    batch_marks = [0.0]

    for tid in range(P):
        push(heap, (pw_streams[tid].next() + backoff, 0, seq, tid, _PW_END))
        seq += 1

    while heap:
        now, _, _, tid, kind = pop(heap)
        if measuring:
            occ_area += in_loop * (now - last_t)
        last_t = now

        if kind == _CW_END:
            cas_req[tid] = now
            if busy:
                waiters.append(tid)
            else:
                busy = True
                if first_access < 0:
                    first_access = now
                if trace is not None:
                    trace.append((now, tid, "cas_start", seen[tid], version))
                push(heap, (now + cc, 1, seq, tid, _CAS_END))
                seq += 1
            continue

        if kind == _PW_END:
            in_loop += 1
            if trace is not None:
                trace.append((now, tid, "pw_end", -1, version))
            if busy:
                waiters.append(~tid)
            else:
                busy = read_hold == 1
                seen[tid] = version
                if first_access < 0:
                    first_access = now
                if trace is not None:
                    trace.append((now, tid, "read_start", version, version))
                push(heap, (now + rc, read_hold, seq, tid, _READ_END))
                seq += 1
            continue

        if kind == _READ_END:
            if trace is not None:
                trace.append((now, tid, "read_end", seen[tid], version))
            push(heap, (now + cw_streams[tid].next(), 0, seq, tid, _CW_END))
            seq += 1
            if not read_hold:
                continue
        elif seen[tid] == version:
            version += 1
            successes += 1
            if trace is not None:
                trace.append((now, tid, "cas_ok", seen[tid], version))
            if measuring:
                slack_sum += first_access - period_start
                wait_sum += (now - cc) - cas_req[tid]
                if per_period is not None:
                    per_period.append(period_fails)
                if (successes - warmup) % batch_size == 0:
                    batch_marks.append(now)
            elif successes == warmup:
                measuring = True
                t_start = now
                batch_marks[0] = now
                failures = 0
            period_start = now
            period_fails = 0
            first_access = -1.0
            in_loop -= 1
            push(heap, (now + pw_streams[tid].next() + backoff, 0, seq, tid, _PW_END))
            seq += 1
            if successes >= total:
                break
        else:
            failures += 1
            period_fails += 1
            if trace is not None:
                trace.append((now, tid, "cas_fail", seen[tid], version))
            seen[tid] = version
            push(heap, (now + cw_streams[tid].next(), 0, seq, tid, _CW_END))
            seq += 1

        # release the line; serve waiters in uniform random order until a
        # line-holding request is granted
        busy = False
        while waiters:
            if arb_pos >= len(arb_buf):
                arb_buf = arbiter.random(_BUF).tolist()
                arb_pos = 0
            k = int(arb_buf[arb_pos] * len(waiters))
            arb_pos += 1
            w = waiters[k]
            waiters[k] = waiters[-1]
            waiters.pop()
            if first_access < 0:
                first_access = now
            if w < 0:
                r = ~w
                seen[r] = version
                if trace is not None:
                    trace.append((now, r, "read_start", version, version))
                push(heap, (now + rc, read_hold, seq, r, _READ_END))
                seq += 1
                if read_hold:
                    busy = True
                    break
            else:
                busy = True
                if trace is not None:
                    trace.append((now, w, "cas_start", seen[w], version))
                push(heap, (now + cc, 1, seq, w, _CAS_END))
                seq += 1
                break

    elapsed = now - t_start
    measured = successes - warmup
    batches = np.diff(np.asarray(batch_marks))
    batch_tp = (batch_size / batches).tolist() if len(batches) else []
    stderr = float(np.std(batch_tp, ddof=1) / math.sqrt(len(batch_tp))) if len(batch_tp) > 1 else math.nan
    return SimStats(
        throughput=measured / elapsed,
        fails_per_success=failures / measured,
        mean_retry_occupancy=occ_area / elapsed,
        mean_slack=slack_sum / measured,
        mean_expansion_delay=wait_sum / measured,
        successes=measured,
        failures=failures,
        elapsed=elapsed,
        stderr_throughput=stderr,
        batch_throughputs=batch_tp,
        failures_per_period=per_period,
        trace=trace,
        final_version=version,
    )


def _run_indexed(args):
    return run(args)


def sweep(configs: Sequence[SimConfig], base_seed: int | None = None,
          workers: int = 1) -> list[tuple[SimConfig, SimStats]]:
    """Run every config; seeds derive from ``base_seed`` and the grid index.

    With ``base_seed=None`` each config keeps its own seed. Output order
    always follows input order.
    """
    if not configs:
        raise ValueError("empty grid")
    if base_seed is not None:
        configs = [replace(c, seed=derive_seed(base_seed, i)) for i, c in enumerate(configs)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            stats = list(pool.map(_run_indexed, configs))
    else:
        stats = [run(c) for c in configs]
    return list(zip(configs, stats))


def derive_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])
