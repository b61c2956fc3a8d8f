"""Constructive (Markov-chain) throughput model.

Exponential parallel work and constant critical work. The chain's state is
the number of threads inside the retry loop when a success period begins;
per-state success periods, slack and failure counts are averaged under the
stationary distribution.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .core import Kind, Mode, PlatformParams, Prediction, WorkloadParams

RECURRENCE_TOL = 1e-8
POWER_TOL = 1e-12
POWER_MAX_STEPS = 1_000_000


class UnsupportedWorkload(ValueError):
    pass


def _ceil_ratio(cw: float, cc: float) -> int:
    # guard against 3.0000000000000004-style ratios for exact multiples
    r = cw / cc
    return math.ceil(r - 1e-12 * max(1.0, r))


@dataclass(frozen=True)
class ContentionPartition:
    P: int
    i_hi: int

    @property
    def noc(self) -> range:
        return range(0, 1)

    @property
    def mid(self) -> range:
        return range(1, min(self.i_hi, self.P))

    @property
    def hi(self) -> range:
        return range(min(self.i_hi, self.P), self.P)

    def mode_of(self, i: int) -> Mode:
        if i == 0:
            return Mode.NON_CONTENDED
        return Mode.CONTENDED if i >= self.i_hi else Mode.MIXED


def contention_partition(platform: PlatformParams, cw: float) -> ContentionPartition:
    """Split states [0, P-1] by whether the CASes of i threads outlast cw."""
    i_hi = max(1, math.floor(cw / platform.cc) + 1)
    # floor(cw/cc)+1 is the smallest i with i*cc > cw, up to rounding
    while (i_hi - 1) >= 1 and (i_hi - 1) * platform.cc > cw:
        i_hi -= 1
    while i_hi * platform.cc <= cw:
        i_hi += 1
    return ContentionPartition(platform.P, i_hi)


def expected_failed_draws(n: int) -> float:
    """sum_{j=1..n} j(j-1)/n^j * (n-1)!/(n-j)!, via running products."""
    if n < 1:
        raise ValueError("n >= 1 required")
    total = 0.0
    prod = 1.0  # prod_{m<j} (n-m)/n
    for j in range(1, n + 1):
        if j > 1:
            prod *= (n - (j - 1)) / n
            if prod == 0.0:
                break
        total += j * (j - 1) / n * prod
    return total


def expansion_high(i: int, platform: PlatformParams, cw: float) -> float:
    """Expected wait between the first CASer's return from cw and the successful CAS.

    Valid once the i threads' CASes cover the critical work
    (``i >= ceil(cw/cc)``); raises otherwise.
    """
    cc = platform.cc
    q = _ceil_ratio(cw, cc)
    n = i - q + 1
    if i < 1 or n < 1:
        raise ValueError(f"state {i} is not highly contended (needs i >= {max(q, 1)})")
    return q * cc - cw + expected_failed_draws(n) * cc


@dataclass(frozen=True)
class InternalProfile:
    slack: np.ndarray        # w_i; inf for i = 0
    completion: np.ndarray   # rw_i = 2cc + cw + e(i), length P+1
    expansion: np.ndarray    # e(i), length P+1


def internal_profile(partition: ContentionPartition, platform: PlatformParams, cw: float) -> InternalProfile:
    P = partition.P
    e = np.zeros(P + 1)
    w = np.zeros(P + 1)
    w[0] = math.inf
    for i in range(1, P + 1):
        if i >= partition.i_hi:
            e[i] = expansion_high(i, platform, cw)
        else:
            # mid contention: minimum of i uniform remaining times over cw
            w[i] = cw / (i + 1)
    rw = 2 * platform.cc + cw + e
    return InternalProfile(slack=w, completion=rw, expansion=e)


def _binom_pmf(trials: int, rate_time: float) -> np.ndarray:
    """Binomial(trials, 1 - exp(-rate_time)) pmf, in log space.

    Working from log q = -rate_time keeps P(0 arrivals) positive when
    1 - exp(-rate_time) rounds to 1.
    """
    k = np.arange(trials + 1)
    log_q = -rate_time
    log_p = math.log(-math.expm1(-rate_time)) if rate_time > 0 else -math.inf
    with np.errstate(invalid="ignore"):
        logc = gammaln(trials + 1) - gammaln(k + 1) - gammaln(trials - k + 1)
        terms = logc + np.where(k > 0, k * log_p, 0.0) + np.where(trials - k > 0, (trials - k) * log_q, 0.0)
    return np.exp(terms)


def arrival_probs(partition: ContentionPartition, profile: InternalProfile,
                  platform: PlatformParams, pw: float) -> tuple[np.ndarray, np.ndarray]:
    """Arrival tables: A[i, k] (k arrivals during rw_i) and B[i] (none during w_i)."""
    if pw <= 0:
        raise ValueError("pw must be > 0")
    P = platform.P
    lam = 1.0 / pw
    A = np.zeros((P + 1, P + 1))
    for i in range(P + 1):
        A[i, : P - i + 1] = _binom_pmf(P - i, lam * profile.completion[i])
    B = np.zeros(P)
    for i in range(1, P):
        w = profile.slack[i]
        B[i] = 1.0 if w == 0 else math.exp(-lam * w * (P - i))
    return A, B


def transition_matrix(A: np.ndarray, B: np.ndarray, P: int) -> np.ndarray:
    M = np.zeros((P, P))
    for i in range(P):
        ks = np.arange(0, P - i)
        M[i, i + ks] = B[i] * A[i, ks + 1] + (1 - B[i]) * A[i + 1, ks]
        if i >= 1:
            M[i, i - 1] = B[i] * A[i, 0]
    return M


def _residual(v: np.ndarray, M: np.ndarray) -> float:
    return float(np.max(np.abs(v @ M - v)))


def solve_stationary(M: np.ndarray) -> tuple[np.ndarray, str]:
    """Stationary distribution and the path used ("recurrence" or "power").

    The forward recurrence exploits the upper-Hessenberg shape; it can cancel
    badly for extreme parameters, in which case power iteration takes over.
    """
    P = M.shape[0]
    v = np.empty(P)
    v[0] = 1.0
    ok = True
    with np.errstate(all="ignore"):
        for i in range(P - 1):
            sub = M[i + 1, i]
            if sub <= 0:
                ok = False
                break
            v[i + 1] = ((1 - M[i, i]) * v[i] - v[:i] @ M[:i, i]) / sub
    if ok and np.all(np.isfinite(v)) and np.all(v > 0):
        v /= v.sum()
        if _residual(v, M) <= RECURRENCE_TOL:
            return v, "recurrence"
    return _power_iteration(M), "power"


def _power_iteration(M: np.ndarray) -> np.ndarray:
    P = M.shape[0]
    v = np.full(P, 1.0 / P)
    for _ in range(POWER_MAX_STEPS):
        nxt = v @ M
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - v)) < POWER_TOL:
            return nxt
        v = nxt
    return v


def stationary(M: np.ndarray) -> np.ndarray:
    return solve_stationary(M)[0]


def state_metrics(partition: ContentionPartition, profile: InternalProfile,
                  platform: PlatformParams, workload: WorkloadParams):
    """Per-state expected success period Q, failed CASes F and slack."""
    P = platform.P
    pw, cw, cc, rc = workload.pw_mean, workload.cw_mean, platform.cc, platform.rc
    slack = np.zeros(P)
    Q = np.zeros(P)
    F = np.zeros(P)
    slack[0] = pw / P
    Q[0] = slack[0] + rc + cw + cc
    for i in range(1, P):
        e = profile.expansion[i]
        if i >= partition.i_hi:
            F[i] = 1 + (cw + e) / cc
        else:
            slack[i] = -math.expm1(-(P - i) * profile.slack[i] / pw) * pw / (P - i)
            F[i] = i
        Q[i] = slack[i] + cc + cw + e + cc
    return Q, F, slack


@dataclass(frozen=True)
class MarkovArtifacts:
    partition: ContentionPartition
    profile: InternalProfile
    A: np.ndarray
    B: np.ndarray
    M: np.ndarray
    v: np.ndarray
    Q: np.ndarray
    F: np.ndarray
    slack: np.ndarray
    stationary_method: str

    def to_dict(self) -> dict:
        def arr(x):
            return [None if not math.isfinite(y) else float(y) for y in np.ravel(x)]

        return {
            "P": self.partition.P,
            "i_hi": self.partition.i_hi,
            "M": [arr(row) for row in self.M],
            "v": arr(self.v),
            "Q": arr(self.Q),
            "F": arr(self.F),
            "Eslack": arr(self.slack),
            "w": arr(self.profile.slack[: self.partition.P]),
            "e": arr(self.profile.expansion[: self.partition.P]),
            "stationary_method": self.stationary_method,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def build_artifacts(platform: PlatformParams, workload: WorkloadParams) -> MarkovArtifacts:
    cw = workload.cw_mean
    part = contention_partition(platform, cw)
    prof = internal_profile(part, platform, cw)
    A, B = arrival_probs(part, prof, platform, workload.pw_mean)
    M = transition_matrix(A, B, platform.P)
    v, method = solve_stationary(M)
    Q, F, slack = state_metrics(part, prof, platform, workload)
    return MarkovArtifacts(part, prof, A, B, M, v, Q, F, slack, method)


def check_scope(workload: WorkloadParams) -> None:
    if workload.pw_dist.kind is not Kind.EXPONENTIAL:
        raise UnsupportedWorkload(
            f"markov model needs exponential parallel work, got {workload.pw_dist.kind.value};"
            " use the avg model instead")
    if workload.cw_dist.kind is not Kind.CONSTANT:
        raise UnsupportedWorkload(
            f"markov model needs constant critical work, got {workload.cw_dist.kind.value};"
            " use the avg model instead")
    if workload.pw_mean <= 0:
        raise UnsupportedWorkload("markov model needs pw > 0")


def predict_markov(platform: PlatformParams, workload: WorkloadParams,
                   check: bool = True) -> tuple[Prediction, MarkovArtifacts]:
    if check:
        check_scope(workload)
    art = build_artifacts(platform, workload)
    v = art.v
    pred = Prediction(
        throughput=1.0 / float(v @ art.Q),
        fails_per_success=float(v @ art.F),
        mean_retry_occupancy=float(v @ np.arange(platform.P)),
        mode=Mode.MIXED,
        model="markov",
        extra={"stationary_method": art.stationary_method},
    )
    return pred, art
