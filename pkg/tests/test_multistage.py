import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lfperf.avg import expansion_avg, predict_avg
from lfperf.core import PlatformParams, ValidationError, WorkloadParams
from lfperf.multistage import (MixedWorkload, StageSpec, branch_threshold, expansion_multistage,
                               group_expansion, load_stages, mixed_throughput, multistage_slack,
                               predict_multistage, retry_loop_work, stages_to_json, _Periods)

ENQ = [StageSpec(1.0, 2.0, 1.5, "tail"), StageSpec(1.0, 1.0, 1.5, "next")]


def single(platform, cw):
    return [StageSpec(platform.rc, cw, platform.cc)]


def test_expansion_boundary(platform):
    assert expansion_multistage(1.0, ENQ, platform) == 0.0


def test_expansion_initial_slope(platform):
    h = 1e-3
    rlw = retry_loop_work(ENQ)
    slope = platform.cc * 2 * platform.cc / 2 / rlw
    assert expansion_multistage(1 + h, ENQ, platform) == pytest.approx(slope * h, rel=1e-3)


def test_expansion_single_stage_reduces(platform):
    # with 2cc + cw in the denominator the ODE is the average-based one
    st_ = single(platform, 4.0)
    for trl in np.linspace(0, 8, 33):
        e = expansion_multistage(trl, st_, platform, retry_work=2 * platform.cc + 4.0)
        assert e == pytest.approx(expansion_avg(trl, platform, 4.0), abs=1e-6)


def test_expansion_monotone(platform):
    es = [expansion_multistage(x, ENQ, platform) for x in np.linspace(0, 10, 200)]
    assert np.all(np.diff(es) >= 0)


def test_group_expansion():
    stages = [StageSpec(1, 1, 1.5, "a"), StageSpec(1, 1, 1.5, "b"), StageSpec(1, 1, 1.5, "a")]
    assert group_expansion(stages, [1.0, 2.0, 3.0]) == [4.0, 2.0, 4.0]
    distinct = [StageSpec(1, 1, 1.5, "x"), StageSpec(1, 1, 1.5, "y")]
    assert group_expansion(distinct, [1.0, 2.0]) == [1.0, 2.0]
    assert group_expansion([StageSpec(1, 1, 1.5)], [0.7]) == [0.7]


@settings(max_examples=100, deadline=None)
@given(labels=st.lists(st.sampled_from(["a", "b", "c", ""]), min_size=1, max_size=6),
       data=st.data())
def test_group_expansion_properties(labels, data):
    stages = [StageSpec(1, 1, 1.5, v) for v in labels]
    es = data.draw(st.lists(st.floats(0, 10), min_size=len(labels), max_size=len(labels)))
    once = group_expansion(stages, es)
    # idempotent on grouped input only once groups are summed again, so compare
    # permutation invariance and per-group equality instead
    perm = data.draw(st.permutations(range(len(labels))))
    permuted = group_expansion([stages[i] for i in perm], [es[i] for i in perm])
    assert permuted == pytest.approx([once[i] for i in perm])
    for i, s in enumerate(stages):
        if s.var:
            assert all(once[j] == once[i] for j, t in enumerate(stages) if t.var == s.var)


def test_group_expansion_idempotent_on_singletons():
    stages = [StageSpec(1, 1, 1.5, "a"), StageSpec(1, 1, 1.5, "b")]
    once = group_expansion(stages, [1.0, 2.0])
    assert group_expansion(stages, once) == once


def test_slack_examples():
    st_ = [StageSpec(1.0, 4.0, 1.5)]
    assert multistage_slack(3.0, st_, 0.0) == pytest.approx(6.5 / 4)
    assert multistage_slack(1e9, st_, 0.0) < 1e-8
    # two-stage enqueue, trl = 4, e = 0.5: (8 + 0.5) / (2 * 5)
    assert multistage_slack(4.0, ENQ, 0.5) == pytest.approx(0.85)


def test_reduction_to_average_model():
    for P in (1, 2, 4, 8, 16):
        pl = PlatformParams(P=P)
        for cw in (0.5, 1.0, 4.0, 8.0):
            for pw in np.logspace(-2, 4, 15):
                w = WorkloadParams(cw, pw)
                a = predict_avg(pl, w).throughput
                m = predict_multistage(pl, w, single(pl, cw)).throughput
                assert abs(m - a) <= 1e-6 * a


def test_threshold_matches_closed_form(platform):
    from lfperf.avg import contention_threshold
    t = branch_threshold(_Periods(tuple(single(platform, 4.0)), platform))
    assert t == pytest.approx(contention_threshold(platform, 4.0), abs=1e-8)


def test_non_contended_limit(platform):
    p = predict_multistage(platform, WorkloadParams(1.0, 1e5), ENQ)
    assert p.throughput == pytest.approx(8 / (1e5 + retry_loop_work(ENQ)), rel=0.01)


def test_two_stage_bound(platform):
    p = predict_multistage(platform, WorkloadParams(1.0, 10.0), ENQ)
    assert p.throughput <= 1 / retry_loop_work(ENQ)


def test_throughput_non_increasing_in_cw(platform):
    for pw in (0.5, 5.0, 50.0):
        prev = None
        for cw in np.linspace(0.2, 10, 25):
            st_ = [StageSpec(1.0, cw, 1.5, "t"), StageSpec(1.0, 1.0, 1.5, "n")]
            tp = predict_multistage(platform, WorkloadParams(1.0, pw), st_).throughput
            if prev is not None:
                assert tp <= prev * (1 + 1e-9)
            prev = tp


def test_mixed_pure_weights(platform):
    push = [StageSpec(1.0, 1.0, 1.5, "anchor"), StageSpec(1.0, 0.5, 1.5, "node"),
            StageSpec(1.0, 0.5, 1.5, "anchor")]
    pop = [StageSpec(1.0, 1.0, 1.5, "anchor")]
    pure = predict_multistage(platform, WorkloadParams(1.0, 5.0), push)
    mixed = mixed_throughput(MixedWorkload.of([(push, 1.0), (pop, 0.0)]), platform, 5.0)
    assert mixed.throughput == pure.throughput
    same = mixed_throughput(MixedWorkload.of([(pop, 0.3), (pop, 0.7)]), platform, 5.0)
    assert same.throughput == pytest.approx(
        predict_multistage(platform, WorkloadParams(1.0, 5.0), pop).throughput, rel=1e-12)
    mix = mixed_throughput(MixedWorkload.of([(push, 0.75), (pop, 0.25)]), platform, 5.0)
    lo, hi = sorted([pure.throughput, predict_multistage(platform, WorkloadParams(1.0, 5.0), pop).throughput])
    assert lo <= mix.throughput <= hi


def test_mixed_weights_validated():
    with pytest.raises(ValidationError):
        MixedWorkload.of([(ENQ, 0.5), (ENQ, 0.2)])
    with pytest.raises(ValidationError):
        MixedWorkload.of([(ENQ, 1.5), (ENQ, -0.5)])


def test_stage_json_round_trip(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps(stages_to_json(ENQ)))
    assert load_stages(path) == ENQ


def test_stage_json_errors(tmp_path):
    path = tmp_path / "s.json"
    path.write_text('{"stages": []}')
    with pytest.raises(ValidationError):
        load_stages(path)
    path.write_text('{"stages": [{"rc": 1, "cw": 0, "cc": 1}]}')
    with pytest.raises(ValidationError):
        load_stages(path)
