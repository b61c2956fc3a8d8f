import math
from collections import defaultdict
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lfperf.core import Distribution, PlatformParams, WorkloadParams
from lfperf.simulator import SimConfig, derive_seed, run, sweep


def trace_run(P=4, cw=1.0, pw=2.0, read_holds_line=True, seed=3, n=1000, pw_dist=None):
    w = WorkloadParams(cw, pw, pw_dist=pw_dist)
    cfg = SimConfig(PlatformParams(P), w, seed=seed, warmup_successes=0, measured_successes=n,
                    read_holds_line=read_holds_line, record_trace=True)
    return cfg, run(cfg)


def test_single_thread_renewal():
    pl = PlatformParams(P=1)
    w = WorkloadParams(4.0, 20.0)
    s = run(SimConfig(pl, w, seed=11, measured_successes=100_000))
    assert s.throughput == pytest.approx(1 / (20 + 6.5), rel=0.01)
    assert s.fails_per_success == 0


def test_non_contended_limit():
    w = WorkloadParams(1.0, 1e6)
    s = run(SimConfig(PlatformParams(P=8), w, seed=2, warmup_successes=100, measured_successes=2000))
    assert s.fails_per_success < 0.01


def test_deterministic():
    cfg = SimConfig(PlatformParams(P=8), WorkloadParams(1.0, 2.0), seed=5, measured_successes=3000)
    assert run(cfg) == run(cfg)


def test_seed_changes_result():
    cfg = SimConfig(PlatformParams(P=8), WorkloadParams(1.0, 2.0), seed=5, measured_successes=3000)
    assert run(cfg).throughput != run(replace(cfg, seed=6)).throughput


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(PlatformParams(P=2), WorkloadParams(1.0, 1.0), measured_successes=10)
    with pytest.raises(ValueError):
        SimConfig(PlatformParams(P=2), WorkloadParams(1.0, 1.0), warmup_successes=-1)


@pytest.mark.parametrize("hold", [True, False])
def test_version_conservation(hold):
    cfg, s = trace_run(read_holds_line=hold)
    oks = [e for e in s.trace if e[2] == "cas_ok"]
    assert len(oks) == s.final_version == s.successes
    # one success per period: versions advance by exactly one per success
    assert [e[4] for e in oks] == list(range(1, len(oks) + 1))


@pytest.mark.parametrize("hold", [True, False])
def test_line_exclusive(hold):
    cfg, s = trace_run(P=8, read_holds_line=hold)
    cc, rc = cfg.platform.cc, cfg.platform.rc
    spans = [(t, t + cc) for t, _, kind, _, _ in s.trace if kind == "cas_start"]
    if hold:
        spans += [(t, t + rc) for t, _, kind, _, _ in s.trace if kind == "read_start"]
    spans.sort()
    for (a0, a1), (b0, _) in zip(spans, spans[1:]):
        assert b0 >= a1 - 1e-9


@pytest.mark.parametrize("hold", [True, False])
@pytest.mark.parametrize("pw_kind", ["exponential", "constant"])
def test_thread_timelines(hold, pw_kind):
    cw = 1.0
    cfg, s = trace_run(P=6, cw=cw, read_holds_line=hold,
                       pw_dist=Distribution.from_json(pw_kind, 2.0, "pw_dist"))
    cc, rc = cfg.platform.cc, cfg.platform.rc
    per = defaultdict(list)
    for ev in s.trace:
        per[ev[1]].append(ev)
    allowed = {
        None: {"pw_end"},
        "pw_end": {"read_start"},
        "read_start": {"read_end"},
        "read_end": {"cas_start"},
        "cas_start": {"cas_ok", "cas_fail"},
        "cas_fail": {"cas_start"},
        "cas_ok": {"pw_end"},
    }
    for tid, evs in per.items():
        prev = None
        prev_t = 0.0
        for t, _, kind, seen, version in evs:
            assert kind in allowed[prev], (tid, prev, kind)
            assert t >= prev_t - 1e-12
            if kind == "read_end":
                assert t - prev_t == pytest.approx(rc)
            elif kind in ("cas_ok", "cas_fail"):
                assert t - prev_t == pytest.approx(cc)
            elif kind == "cas_start":
                # critical work precedes every CAS request; waiting only adds
                assert t - prev_t >= cw - 1e-9
            prev, prev_t = kind, t


def test_failed_cas_refreshes_version():
    _, s = trace_run(P=8)
    last_fail = {}
    for t, tid, kind, seen, version in s.trace:
        if kind == "cas_fail":
            assert seen != version
            last_fail[tid] = version
        elif kind == "cas_start" and tid in last_fail:
            assert seen == last_fail.pop(tid)


def test_stats_invariants():
    for pw in (0.1, 3.0, 300.0):
        s = run(SimConfig(PlatformParams(P=4), WorkloadParams(2.0, pw), seed=1, measured_successes=2000))
        assert s.throughput > 0
        assert s.fails_per_success >= 0
        assert 0 <= s.mean_retry_occupancy <= 4
        assert s.mean_slack >= 0 and s.mean_expansion_delay >= 0
        assert len(s.batch_throughputs) == 20
        assert s.stderr_throughput > 0


def test_failures_per_period_record():
    cfg = SimConfig(PlatformParams(P=4), WorkloadParams(1.0, 1.0), seed=4, measured_successes=1000,
                    record_failures=True)
    s = run(cfg)
    assert len(s.failures_per_period) == s.successes
    assert sum(s.failures_per_period) == s.failures


def test_each_thread_fails_at_most_once_per_period():
    # a failed CAS hands over the current version, so a second failure
    # inside the same period is impossible
    _, s = trace_run(P=8, cw=4.0, pw=0.1)
    seen_fail = set()
    for t, tid, kind, _, version in s.trace:
        if kind == "cas_ok":
            seen_fail.clear()
        elif kind == "cas_fail":
            assert tid not in seen_fail
            seen_fail.add(tid)


def test_backoff_shifts_parallel_work():
    pl = PlatformParams(P=1)
    s = run(SimConfig(pl, WorkloadParams(1.0, 5.0), seed=3, measured_successes=50_000, backoff=10.0))
    assert s.throughput == pytest.approx(1 / (15 + 3.5), rel=0.015)


def test_sweep_single_point_equals_run():
    cfg = SimConfig(PlatformParams(P=4), WorkloadParams(1.0, 2.0), seed=9, measured_successes=1000)
    [(c, s)] = sweep([cfg])
    assert s == run(cfg)


def test_sweep_order_and_seeds():
    base = SimConfig(PlatformParams(P=4), WorkloadParams(1.0, 2.0), seed=0, measured_successes=1000)
    cfgs = [replace(base, workload=base.workload.with_pw(pw)) for pw in (0.5, 5.0, 50.0)]
    out = sweep(cfgs, base_seed=42)
    assert [c.workload.pw_mean for c, _ in out] == [0.5, 5.0, 50.0]
    assert [c.seed for c, _ in out] == [derive_seed(42, i) for i in range(3)]
    par = sweep(cfgs, base_seed=42, workers=2)
    assert [s for _, s in par] == [s for _, s in out]


def test_sweep_empty():
    with pytest.raises(ValueError):
        sweep([])


def test_throughput_rises_as_pw_falls_for_large_cw():
    pl = PlatformParams(P=4)
    tps = []
    for pw in (40.0, 20.0, 10.0, 5.0, 2.0, 1.0):
        tps.append(run(SimConfig(pl, WorkloadParams(8.0, pw), seed=1, measured_successes=20_000)).throughput)
    for a, b in zip(tps, tps[1:]):
        assert b >= a * 0.97


@settings(max_examples=15, deadline=None)
@given(P=st.integers(1, 8), cw=st.floats(0.1, 6), pw=st.floats(0.0, 50), seed=st.integers(0, 1000),
       hold=st.booleans())
def test_random_configs_consistent(P, cw, pw, seed, hold):
    cfg = SimConfig(PlatformParams(P), WorkloadParams(cw, pw), seed=seed, warmup_successes=50,
                    measured_successes=1000, read_holds_line=hold, record_trace=True)
    s = run(cfg)
    assert s.final_version == 50 + 1000
    assert 0 <= s.mean_retry_occupancy <= P + 1e-9
    # throughput can never beat one uncontended retry per success
    assert s.throughput <= 1 / (cw + cfg.platform.cc) + 1e-9
