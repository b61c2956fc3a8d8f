"""Tuning advice derived from model predictions.

Constant back-off moves the parallel work to the throughput peak; adaptive
back-off first infers the effective parallel work from observed failures;
the memory-management planner picks how many reclamation quanta to fold
into each parallel section.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

from . import avg, markov
from .core import PlatformParams, Prediction, WorkloadParams

PW_LO_FACTOR = 1e-2
PW_HI_FACTOR = 1e4
SEARCH_RTOL = 1e-3
INVERT_TOL = 1e-6
DEFAULT_WINDOW = 64
_INV_PHI = (math.sqrt(5) - 1) / 2

FLAG_EDGE_LOW = "peak_at_lower_edge"
FLAG_EDGE_HIGH = "peak_at_upper_edge"
FLAG_SATURATED = "saturated"
FLAG_NON_CONTENDED = "non_contended"


def predictor(model: str) -> Callable[[PlatformParams, WorkloadParams], Prediction]:
    if model == "avg":
        return avg.predict_avg
    if model == "markov":
        return lambda platform, workload: markov.predict_markov(platform, workload)[0]
    raise ValueError(f"unknown model {model!r} (expected avg or markov)")


def search_bracket(cw: float) -> tuple[float, float]:
    return PW_LO_FACTOR * cw, PW_HI_FACTOR * cw


@dataclass(frozen=True)
class PeakResult:
    pw_star: float
    throughput: float
    flags: tuple[str, ...] = ()


def peak_pw(platform: PlatformParams, workload: WorkloadParams, model: str = "avg",
            rtol: float = SEARCH_RTOL) -> PeakResult:
    """Parallel work maximizing predicted throughput (golden section on log pw)."""
    predict = predictor(model)
    lo, hi = search_bracket(workload.cw_mean)

    cache: dict[float, float] = {}

    def tp(x: float) -> float:
        if x not in cache:
            cache[x] = predict(platform, workload.with_pw(math.exp(x))).throughput
        return cache[x]

    a, b = math.log(lo), math.log(hi)
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    # log-width below rtol means relative width in pw below rtol
    while b - a > rtol:
        if tp(c) >= tp(d):
            b, d = d, c
            c = b - _INV_PHI * (b - a)
        else:
            a, c = c, d
            d = a + _INV_PHI * (b - a)
    x = 0.5 * (a + b)
    candidates = [(tp(x), x), (tp(math.log(lo)), math.log(lo)), (tp(math.log(hi)), math.log(hi))]
    best_tp, best_x = max(candidates, key=lambda t: (t[0], -t[1]))
    flags = []
    if best_x - math.log(lo) <= rtol:
        flags.append(FLAG_EDGE_LOW)
        best_x = math.log(lo)
    elif math.log(hi) - best_x <= rtol:
        flags.append(FLAG_EDGE_HIGH)
        best_x = math.log(hi)
    return PeakResult(math.exp(best_x), tp(best_x), tuple(flags))


def constant_backoff(platform: PlatformParams, workload: WorkloadParams, model: str = "avg",
                     peak: PeakResult | None = None) -> float:
    """max(0, pw* - pw): idle time to add to every parallel section."""
    if peak is None:
        peak = peak_pw(platform, workload, model)
    return max(0.0, peak.pw_star - workload.pw_mean)


@dataclass(frozen=True)
class PwEstimate:
    pw: float
    flags: tuple[str, ...] = ()


def estimate_pw_from_failures(observed: float, platform: PlatformParams, cw: float,
                              model: str = "avg", template: WorkloadParams | None = None) -> PwEstimate:
    """Invert the model's failures-per-success curve by bisection on log pw."""
    if not (math.isfinite(observed) and observed >= 0):
        raise ValueError("observed fails_per_success must be >= 0")
    predict = predictor(model)
    base = template if template is not None else WorkloadParams(cw, cw)
    lo, hi = search_bracket(cw)

    def fails(pw: float) -> float:
        return predict(platform, base.with_pw(pw)).fails_per_success

    f_lo, f_hi = fails(lo), fails(hi)
    if not f_lo > f_hi:
        raise ValueError("failure curve is not decreasing over the search bracket")
    if observed >= f_lo:
        return PwEstimate(lo, (FLAG_SATURATED,))
    if observed <= f_hi:
        return PwEstimate(hi, (FLAG_NON_CONTENDED,))
    a, b = math.log(lo), math.log(hi)
    while True:
        m = 0.5 * (a + b)
        f = fails(math.exp(m))
        if abs(f - observed) <= INVERT_TOL or b - a < 1e-12:
            return PwEstimate(math.exp(m))
        if f > observed:
            a = m
        else:
            b = m


@dataclass(frozen=True)
class AdaptiveAdvice:
    backoff: float
    pw_estimate: float
    flags: tuple[str, ...] = ()


def adaptive_backoff(window: Sequence[float], platform: PlatformParams, cw: float,
                     model: str = "avg", template: WorkloadParams | None = None) -> AdaptiveAdvice:
    """Back-off from a window of recent per-success failure counts.

    The window mean is inverted to a parallel-work estimate, and the advice
    is the constant back-off for that estimate. When a back-off is already
    applied the estimate is the effective parallel work, so the advice is
    an increment on top of it (see :func:`next_backoff`).
    """
    if len(window) == 0:
        raise ValueError("window must be nonempty")
    mean = float(sum(window)) / len(window)
    est = estimate_pw_from_failures(mean, platform, cw, model, template)
    if FLAG_NON_CONTENDED in est.flags:
        return AdaptiveAdvice(0.0, est.pw, est.flags)
    base = template if template is not None else WorkloadParams(cw, cw)
    peak = peak_pw(platform, base, model)
    return AdaptiveAdvice(max(0.0, peak.pw_star - est.pw), est.pw, est.flags + peak.flags)


def next_backoff(applied: float, window: Sequence[float], platform: PlatformParams, cw: float,
                 model: str = "avg", template: WorkloadParams | None = None) -> float:
    """One closed-loop step: the applied back-off plus the advice for the last window."""
    return applied + adaptive_backoff(window, platform, cw, model, template).backoff


@dataclass(frozen=True)
class MMPlan:
    k: int
    throughput: float
    throughputs: list[float] = field(repr=False)
    list_threshold: int | None = None


def mm_plan(platform: PlatformParams, workload: WorkloadParams, quantum_work: float, k_max: int,
            model: str = "avg", list_threshold: int | None = None) -> MMPlan:
    """Number k of reclamation quanta per parallel section maximizing throughput.

    Effective pw is base pw + k * quantum_work; ties go to the smaller k.
    ``list_threshold`` caps the deferred-node list; it is policy and is only
    carried through to the report.
    """
    if not quantum_work > 0:
        raise ValueError("quantum_work > 0 required")
    if k_max < 0:
        raise ValueError("k_max >= 0 required")
    predict = predictor(model)
    tps = [predict(platform, workload.with_pw(workload.pw_mean + k * quantum_work)).throughput
           for k in range(k_max + 1)]
    best = max(range(k_max + 1), key=lambda k: (tps[k], -k))
    return MMPlan(best, tps[best], tps, list_threshold)


def advisory_report(platform: PlatformParams, workload: WorkloadParams, model: str = "avg",
                    quantum_work: float | None = None, k_max: int = 0,
                    list_threshold: int | None = None) -> dict:
    """{pw_star, backoff_uow, backoff_cycles, mm_k, flags} for the given workload."""
    peak = peak_pw(platform, workload, model)
    backoff = constant_backoff(platform, workload, model, peak)
    flags = list(peak.flags)
    mm_k = None
    if quantum_work is not None:
        plan = mm_plan(platform, workload, quantum_work, k_max, model, list_threshold)
        mm_k = plan.k
    report = {
        "pw_star": peak.pw_star,
        "backoff_uow": backoff,
        "backoff_cycles": backoff * platform.unit_cycles,
        "mm_k": mm_k,
        "flags": flags,
    }
    if list_threshold is not None:
        report["list_threshold"] = list_threshold
    return report


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
