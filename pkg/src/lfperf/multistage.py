"""Average-based model for operations made of several CAS stages.

Helping-based operations (queue enqueue, deque push/pop) finish only after
S successive pointer updates. The retry loop becomes the sum of the stages,
the CAS expansion follows a stage-aware ODE, and stages whose CAS targets
the same variable inflate each other's expansion.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from . import avg
from .core import Mode, PlatformParams, Prediction, ValidationError, WorkloadParams

THRESHOLD_TOL = 1e-9


@dataclass(frozen=True)
class StageSpec:
    rc: float
    cw: float
    cc: float
    var: str = ""

    def __post_init__(self):
        for name in ("rc", "cw", "cc"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValidationError(f"stages.{name}", f"{name} > 0 required")

    @property
    def retry_work(self) -> float:
        return self.rc + self.cw + self.cc


def _check_stages(stages: Sequence[StageSpec]) -> None:
    if len(stages) < 1:
        raise ValidationError("stages", "at least one stage required")


def retry_loop_work(stages: Sequence[StageSpec]) -> float:
    """rlw = sum of rc + cw + cc over the stages."""
    return sum(s.retry_work for s in stages)


def contended_loop_work(stages: Sequence[StageSpec]) -> float:
    """Retry work once the version comes from a failed CAS: sum of 2cc + cw."""
    return sum(2 * s.cc + s.cw for s in stages)


def expansion_multistage(trl: float, stages: Sequence[StageSpec], platform: PlatformParams,
                         retry_work: float | None = None) -> float:
    """Total expansion: e' = cc (S cc/2 + e) / (rlw + e) with e(1) = 0.

    ``retry_work`` overrides rlw in the denominator.
    """
    _check_stages(stages)
    if trl < 0:
        raise ValueError("trl >= 0 required")
    rlw = retry_loop_work(stages) if retry_work is None else retry_work
    cc = platform.cc
    return avg.integrate_expansion(trl - 1.0, cc, len(stages) * cc / 2.0, rlw)


def group_expansion(stages: Sequence[StageSpec], expansions: Sequence[float]) -> list[float]:
    """Every stage receives the sum of the expansions of its shared-variable group.

    Stages with an empty ``var`` label are their own group.
    """
    if len(stages) != len(expansions):
        raise ValueError("one expansion per stage required")
    totals: dict[str, float] = {}
    for s, e in zip(stages, expansions):
        if s.var:
            totals[s.var] = totals.get(s.var, 0.0) + e
    return [totals[s.var] if s.var else float(e) for s, e in zip(stages, expansions)]


def multistage_slack(trl: float, stages: Sequence[StageSpec], expansion: float,
                     window: float | None = None) -> float:
    """(rlw + e) / (S (trl + 1)); ``window`` replaces rlw when given."""
    _check_stages(stages)
    if trl < 0:
        raise ValueError("trl >= 0 required")
    rlw = retry_loop_work(stages) if window is None else window
    return (rlw + expansion) / (len(stages) * (trl + 1))


@dataclass(frozen=True)
class _Periods:
    """Both branches of the multi-stage success period."""

    stages: tuple[StageSpec, ...]
    platform: PlatformParams

    def stage_expansions(self, trl: float) -> list[float]:
        S = len(self.stages)
        total = expansion_multistage(trl, self.stages, self.platform,
                                     retry_work=contended_loop_work(self.stages))
        return group_expansion(self.stages, [total / S] * S)

    def uncontended(self, trl: float) -> float:
        return retry_loop_work(self.stages) / trl

    def contended(self, trl: float) -> float:
        es = self.stage_expansions(trl)
        E = sum(es)
        cw = sum(s.cw for s in self.stages)
        slack = multistage_slack(trl, self.stages, E, window=cw)
        completion = self.stages[0].cc + sum(s.cw + e + s.cc for s, e in zip(self.stages, es))
        return slack + completion


def branch_threshold(periods: _Periods, tol: float = THRESHOLD_TOL) -> float:
    """Crossing of the two branches on (0, 1], by bisection.

    Returns 1 when the uncontended branch is still the larger one at 1.
    """
    def gap(x):
        return periods.uncontended(x) - periods.contended(x)

    if gap(1.0) >= 0:
        return 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if gap(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _success_period(periods: _Periods, threshold: float):
    def S(trl: float) -> float:
        return periods.uncontended(trl) if trl <= threshold else periods.contended(trl)
    return S


def predict_multistage(platform: PlatformParams, workload: WorkloadParams,
                       stages: Sequence[StageSpec]) -> Prediction:
    """Little's-law fixed point with the multi-stage success period.

    ``workload`` supplies pw; the critical work lives in the stages.
    """
    _check_stages(stages)
    periods = _Periods(tuple(stages), platform)
    # a lone thread never contends
    threshold = math.inf if platform.P == 1 else branch_threshold(periods)
    S = _success_period(periods, threshold)
    trl, iters = avg.solve_balance(S, platform.P, workload.pw_mean, retry_loop_work(stages))
    period = S(trl)
    contended = trl > threshold
    return Prediction(
        throughput=1.0 / period,
        fails_per_success=max(0.0, trl - 1.0),
        mean_retry_occupancy=trl,
        mode=Mode.CONTENDED if contended else Mode.NON_CONTENDED,
        model="multistage",
        extra={"threshold": threshold, "iterations": iters,
               "expansion": sum(periods.stage_expansions(trl)) if contended else 0.0},
    )


@dataclass(frozen=True)
class MixedWorkload:
    operations: tuple[tuple[tuple[StageSpec, ...], float], ...]

    def __post_init__(self):
        if not self.operations:
            raise ValidationError("mix", "at least one operation required")
        weights = [w for _, w in self.operations]
        if any(not math.isfinite(w) or w < 0 for w in weights):
            raise ValidationError("mix", "weights must be >= 0")
        if abs(sum(weights) - 1.0) > 1e-9:
            raise ValidationError("mix", "weights must sum to 1")

    @classmethod
    def of(cls, pairs) -> MixedWorkload:
        return cls(tuple((tuple(stages), float(w)) for stages, w in pairs))


def mixed_throughput(mix: MixedWorkload, platform: PlatformParams, pw: float) -> Prediction:
    """Weighted average of the per-operation success periods."""
    preds = [(predict_multistage(platform, WorkloadParams(1.0, pw), st), w)
             for st, w in mix.operations]
    if len(preds) == 1 or sum(1 for _, w in preds if w > 0) == 1:
        # a single active operation: return its prediction untouched
        return next(p for p, w in preds if w > 0)
    period = sum(w * p.success_period for p, w in preds)
    return Prediction(
        throughput=1.0 / period,
        fails_per_success=sum(w * p.fails_per_success for p, w in preds),
        mean_retry_occupancy=sum(w * p.mean_retry_occupancy for p, w in preds),
        mode=Mode.MIXED,
        model="multistage-mix",
    )


def stages_from_json(data) -> list[StageSpec]:
    try:
        raw = data["stages"]
        stages = [StageSpec(float(s["rc"]), float(s["cw"]), float(s["cc"]), str(s.get("var", "")))
                  for s in raw]
    except (KeyError, TypeError, ValueError):
        raise ValidationError("stages", "expected {\"stages\": [{\"rc\", \"cw\", \"cc\", \"var\"}...]}") from None
    _check_stages(stages)
    return stages


def stages_to_json(stages: Sequence[StageSpec]) -> dict:
    return {"stages": [{"rc": s.rc, "cw": s.cw, "cc": s.cc, "var": s.var} for s in stages]}


def load_stages(path: str | Path) -> list[StageSpec]:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ValidationError("stages", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError("stages", f"malformed JSON: {exc.msg} at line {exc.lineno}") from None
    return stages_from_json(data)
