"""Shared domain types, parameter validation and random-variate sampling.

All durations are expressed in units of work (uow); one uow is
``unit_cycles`` processor cycles (50 by default).
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

DEFAULT_UNIT_CYCLES = 50.0
DEFAULT_CC = 1.5
DEFAULT_RC = 1.0


class ValidationError(ValueError):
    """A parameter violates one of the domain invariants.

    ``field`` names the offending parameter so front ends can report it.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ConvergenceError(RuntimeError):
    """An iterative solver stopped without meeting its tolerance."""

    def __init__(self, message: str, last_iterate: float):
        super().__init__(f"{message} (last iterate {last_iterate!r})")
        self.last_iterate = last_iterate


class Kind(str, enum.Enum):
    CONSTANT = "constant"
    EXPONENTIAL = "exponential"
    POISSON = "poisson"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class Distribution:
    """Duration distribution with a given mean.

    ``lo``/``hi`` are only meaningful for ``Kind.UNIFORM``; use
    :meth:`uniform` to build one so the mean stays consistent.
    """

    kind: Kind
    mean: float
    lo: float | None = None
    hi: float | None = None

    @classmethod
    def constant(cls, mean: float) -> Distribution:
        return cls(Kind.CONSTANT, float(mean))

    @classmethod
    def exponential(cls, mean: float) -> Distribution:
        return cls(Kind.EXPONENTIAL, float(mean))

    @classmethod
    def poisson(cls, mean: float) -> Distribution:
        return cls(Kind.POISSON, float(mean))

    @classmethod
    def uniform(cls, lo: float, hi: float) -> Distribution:
        return cls(Kind.UNIFORM, (lo + hi) / 2.0, float(lo), float(hi))

    def with_mean(self, mean: float) -> Distribution:
        """Same kind, different mean (uniform ranges keep their relative width)."""
        if self.kind is Kind.UNIFORM:
            if self.mean == 0:
                return Distribution.uniform(mean, mean)
            scale = mean / self.mean
            return Distribution.uniform(self.lo * scale, self.hi * scale)
        return Distribution(self.kind, float(mean))

    def to_json(self) -> Any:
        if self.kind is Kind.UNIFORM:
            return {"kind": "uniform", "lo": self.lo, "hi": self.hi}
        return self.kind.value

    @classmethod
    def from_json(cls, value: Any, mean: float, field: str) -> Distribution:
        if isinstance(value, dict):
            kind = value.get("kind")
            if kind != "uniform":
                raise ValidationError(field, f"unknown distribution {kind!r}")
            try:
                return cls.uniform(float(value["lo"]), float(value["hi"]))
            except (KeyError, TypeError, ValueError):
                raise ValidationError(field, "uniform needs numeric lo and hi") from None
        try:
            kind = Kind(str(value).lower())
        except ValueError:
            raise ValidationError(field, f"unknown distribution {value!r}") from None
        if kind is Kind.UNIFORM:
            return cls.uniform(0.0, 2.0 * mean)
        return cls(kind, float(mean))


@dataclass(frozen=True)
class PlatformParams:
    P: int
    cc: float = DEFAULT_CC
    rc: float = DEFAULT_RC
    unit_cycles: float = DEFAULT_UNIT_CYCLES


@dataclass(frozen=True)
class WorkloadParams:
    cw_mean: float
    pw_mean: float
    cw_dist: Distribution = None  # type: ignore[assignment]
    pw_dist: Distribution = None  # type: ignore[assignment]

    def __post_init__(self):
        # default kinds follow the constructive model's scope
        if self.cw_dist is None:
            object.__setattr__(self, "cw_dist", Distribution.constant(self.cw_mean))
        if self.pw_dist is None:
            object.__setattr__(self, "pw_dist", Distribution.exponential(self.pw_mean))

    @property
    def arrival_rate(self) -> float:
        return math.inf if self.pw_mean == 0 else 1.0 / self.pw_mean

    def with_pw(self, pw: float) -> WorkloadParams:
        return WorkloadParams(self.cw_mean, pw, self.cw_dist, self.pw_dist.with_mean(pw))

    def with_cw(self, cw: float) -> WorkloadParams:
        return WorkloadParams(cw, self.pw_mean, self.cw_dist.with_mean(cw), self.pw_dist)


class Mode(str, enum.Enum):
    NON_CONTENDED = "non-contended"
    CONTENDED = "contended"
    MIXED = "mixed"


@dataclass(frozen=True)
class Prediction:
    throughput: float
    fails_per_success: float
    mean_retry_occupancy: float
    mode: Mode
    model: str = ""
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def success_period(self) -> float:
        return 1.0 / self.throughput


@dataclass(frozen=True)
class Params:
    """A validated (platform, workload) pair."""

    platform: PlatformParams
    workload: WorkloadParams


def _check_distribution(dist: Distribution, name: str) -> None:
    if not math.isfinite(dist.mean) or dist.mean < 0:
        raise ValidationError(name, "mean must be >= 0")
    if dist.kind is Kind.UNIFORM:
        if dist.lo is None or dist.hi is None or not 0 <= dist.lo <= dist.hi:
            raise ValidationError(name, "uniform range needs 0 <= lo <= hi")
        if abs(dist.mean - (dist.lo + dist.hi) / 2) > 1e-12 * max(1.0, dist.mean):
            raise ValidationError(name, "uniform mean must be (lo+hi)/2")


def validate_platform(platform: PlatformParams) -> PlatformParams:
    if not isinstance(platform.P, (int, np.integer)) or platform.P < 1:
        raise ValidationError("P", "P >= 1 required")
    for name in ("cc", "rc", "unit_cycles"):
        value = getattr(platform, name)
        if not (math.isfinite(value) and value > 0):
            raise ValidationError(name, f"{name} > 0 required")
    if platform.cc < platform.rc:
        raise ValidationError("cc", "cc < rc unsupported (cc >= rc required)")
    return platform


def validate(platform: PlatformParams, workload: WorkloadParams) -> Params:
    """Check every invariant and return the bundle, or raise on the first violation."""
    validate_platform(platform)
    if not (math.isfinite(workload.cw_mean) and workload.cw_mean > 0):
        raise ValidationError("cw_mean", "cw > 0 required")
    if not (math.isfinite(workload.pw_mean) and workload.pw_mean >= 0):
        raise ValidationError("pw_mean", "pw >= 0 required")
    _check_distribution(workload.cw_dist, "cw_dist")
    _check_distribution(workload.pw_dist, "pw_dist")
    for name, dist, mean in (
        ("cw_dist", workload.cw_dist, workload.cw_mean),
        ("pw_dist", workload.pw_dist, workload.pw_mean),
    ):
        if abs(dist.mean - mean) > 1e-9 * max(1.0, mean):
            raise ValidationError(name, f"distribution mean {dist.mean} != {mean}")
    return Params(platform, workload)


def sample(dist: Distribution, rng: np.random.Generator) -> float:
    """Draw one duration from ``dist``."""
    return float(sample_block(dist, rng, 1)[0])


def sample_block(dist: Distribution, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` durations at once; the simulator refills its buffers with this."""
    kind = dist.kind
    if kind is Kind.CONSTANT:
        return np.full(n, dist.mean)
    if kind is Kind.EXPONENTIAL:
        return rng.exponential(dist.mean, n) if dist.mean > 0 else np.zeros(n)
    if kind is Kind.POISSON:
        return rng.poisson(dist.mean, n).astype(float)
    if kind is Kind.UNIFORM:
        return rng.uniform(dist.lo, dist.hi, n)
    raise ValueError(f"unsupported distribution {kind}")


# JSON parameter files ------------------------------------------------------

def params_from_dict(data: dict) -> Params:
    try:
        plat = data["platform"]
        work = data["workload"]
    except (KeyError, TypeError):
        raise ValidationError("platform/workload", "both sections are required") from None

    def number(section: dict, key: str, default=None, cast=float):
        if key not in section:
            if default is None:
                raise ValidationError(key, "missing")
            return default
        try:
            value = section[key]
            if isinstance(value, bool):
                raise TypeError
            return cast(value)
        except (TypeError, ValueError):
            raise ValidationError(key, f"not a number: {section[key]!r}") from None

    p_raw = number(plat, "P")
    if p_raw != int(p_raw):
        raise ValidationError("P", "must be an integer")
    platform = PlatformParams(
        P=int(p_raw),
        cc=number(plat, "cc_uow", DEFAULT_CC),
        rc=number(plat, "rc_uow", DEFAULT_RC),
        unit_cycles=number(plat, "unit_cycles", DEFAULT_UNIT_CYCLES),
    )
    cw = number(work, "cw_mean")
    pw = number(work, "pw_mean")
    workload = WorkloadParams(
        cw_mean=cw,
        pw_mean=pw,
        cw_dist=Distribution.from_json(work.get("cw_dist", "constant"), cw, "cw_dist"),
        pw_dist=Distribution.from_json(work.get("pw_dist", "exponential"), pw, "pw_dist"),
    )
    return validate(platform, workload)


def params_to_dict(platform: PlatformParams, workload: WorkloadParams) -> dict:
    return {
        "platform": {
            "P": platform.P,
            "cc_uow": platform.cc,
            "rc_uow": platform.rc,
            "unit_cycles": platform.unit_cycles,
        },
        "workload": {
            "cw_mean": workload.cw_mean,
            "cw_dist": workload.cw_dist.to_json(),
            "pw_mean": workload.pw_mean,
            "pw_dist": workload.pw_dist.to_json(),
        },
    }


def load_params(path: str | Path) -> Params:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError("params", f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError("params", f"malformed JSON: {exc.msg} at line {exc.lineno}") from None
    return params_from_dict(data)
