"""Average-based (queuing) throughput model.

Little's law on the parallel section gives the balance equation
``S(trl) = pw / (P - trl)`` between the expected success period and the
expected number of threads in the retry loop. The success period is
piecewise: below the contention threshold every retry succeeds first try,
above it the retry is stretched by slack and CAS expansion. The balance is
solved by a monotone fixed-point iteration.

Only the means of the critical and parallel work are used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import ConvergenceError, Mode, PlatformParams, Prediction, WorkloadParams

ODE_STEP = 1e-3
FP_TOL = 1e-9
FP_MAX_ITER = 100_000


def _rk4_grid(gain: float, half: float, base: float, n: int, h: float) -> np.ndarray:
    """Integrate e' = gain*(half + e)/(base + e) from e(0)=0 over n steps of h."""

    def f(e):
        return gain * (half + e) / (base + e)

    out = np.empty(n + 1)
    e = 0.0
    out[0] = e
    for k in range(n):
        k1 = f(e)
        k2 = f(e + 0.5 * h * k1)
        k3 = f(e + 0.5 * h * k2)
        k4 = f(e + h * k3)
        e += h * (k1 + 2 * k2 + 2 * k3 + k4) / 6
        out[k + 1] = e
    return out


@lru_cache(maxsize=256)
def _expansion_table(gain: float, half: float, base: float, n: int) -> np.ndarray:
    table = _rk4_grid(gain, half, base, n, ODE_STEP)
    table.flags.writeable = False
    return table


def integrate_expansion(x: float, gain: float, half: float, base: float) -> float:
    """Expansion ``x`` occupancy units past its onset.

    Solves ``e' = gain * (half + e) / (base + e)`` with ``e = 0`` at the onset,
    on a memoized RK4 grid (step 1e-3), linearly interpolated.
    """
    if x <= 0:
        return 0.0
    # grow tables in blocks so nearby queries share one integration
    n = max(1024, 1 << math.ceil(math.log2(x / ODE_STEP + 2)))
    table = _expansion_table(float(gain), float(half), float(base), n)
    pos = x / ODE_STEP
    k = int(pos)
    frac = pos - k
    if frac == 0.0:
        return float(table[k])
    return float(table[k] + frac * (table[k + 1] - table[k]))


def expansion_avg(trl: float, platform: PlatformParams, cw: float) -> float:
    """Expected CAS expansion with ``trl`` threads in the retry loop.

    Zero up to one occupant; above that it follows
    ``e' = cc (cc/2 + e) / (2cc + cw + e)`` with ``e(1) = 0``.
    """
    cc = platform.cc
    return integrate_expansion(trl - 1.0, cc, cc / 2.0, 2.0 * cc + cw)


def contention_threshold(platform: PlatformParams, cw: float) -> float:
    """Occupancy at which the system switches to the contended regime.

    Positive root of ``x^2 (cw + 2cc) + x (cw + cc - rc) - (rc + cw + cc)``.
    """
    cc, rc = platform.cc, platform.rc
    a = cw + 2 * cc
    b = cc + cw - rc
    c = rc + cw + cc
    disc = math.sqrt(b * b + 4 * a * c)
    # cancellation-free form of (-b + disc) / (2a)
    return 2 * c / (b + disc) if b > 0 else (-b + disc) / (2 * a)


def uncontended_retry(platform: PlatformParams, cw: float) -> float:
    return platform.rc + cw + platform.cc


def branch_point(platform: PlatformParams, cw: float) -> float:
    """Occupancy above which the contended branch applies; a lone thread never contends."""
    return math.inf if platform.P == 1 else contention_threshold(platform, cw)


def expected_success_period(trl: float, platform: PlatformParams, workload: WorkloadParams) -> float:
    cw = workload.cw_mean
    if trl <= branch_point(platform, cw):
        return uncontended_retry(platform, cw) / trl
    e = expansion_avg(trl, platform, cw)
    return (cw + e) * (trl + 2) / (trl + 1) + 2 * platform.cc


def upper_bound(platform: PlatformParams, workload: WorkloadParams) -> float:
    """min(1/(rc+cw+cc), P/(pw+rc+cw+cc))."""
    work = uncontended_retry(platform, workload.cw_mean)
    return min(1.0 / work, platform.P / (workload.pw_mean + work))


@dataclass(frozen=True)
class AvgSolution:
    trl: float
    trl0: float
    expansion: float
    success_period: float
    iterations: int

    @property
    def throughput(self) -> float:
        return 1.0 / self.success_period

    @property
    def fails_per_success(self) -> float:
        return max(0.0, self.trl - 1.0)

    @property
    def mode(self) -> Mode:
        return Mode.NON_CONTENDED if self.trl <= self.trl0 else Mode.CONTENDED

    def prediction(self) -> Prediction:
        return Prediction(
            throughput=self.throughput,
            fails_per_success=self.fails_per_success,
            mean_retry_occupancy=self.trl,
            mode=self.mode,
            model="avg",
            extra={"expansion": self.expansion, "trl0": self.trl0},
        )


def fixed_point_iterates(success_period, P: int, pw: float, u0: float,
                         tol: float = FP_TOL, max_iter: int = FP_MAX_ITER):
    """Yield the iterates u_{n+1} = P * u S(u) / (pw + u S(u)) starting from u0.

    Stops after the step falls under ``tol``; raises ConvergenceError at the cap.
    """
    u = u0
    yield u
    for _ in range(max_iter):
        f1 = u * success_period(u)
        nxt = f1 / (pw + f1) * P
        yield nxt
        if abs(nxt - u) < tol:
            return
        u = nxt
    raise ConvergenceError(f"fixed point not reached in {max_iter} iterations", u)


def solve_balance(success_period, P: int, pw: float, work: float,
                  tol: float = FP_TOL, max_iter: int = FP_MAX_ITER) -> tuple[float, int]:
    """Smallest solution of S(trl) = pw / (P - trl), starting from the uncontended guess.

    At pw = 0 every thread is in the retry loop and the answer is P.
    """
    if pw < 0:
        raise ValueError("pw must be >= 0 for the fixed-point solver")
    u0 = work / (pw + work) * P
    n = -1
    u = u0
    for n, u in enumerate(fixed_point_iterates(success_period, P, pw, u0, tol, max_iter)):
        pass
    return u, n


def solve_fixed_point(platform: PlatformParams, workload: WorkloadParams) -> AvgSolution:
    cw = workload.cw_mean
    trl, iters = solve_balance(
        lambda u: expected_success_period(u, platform, workload),
        platform.P, workload.pw_mean, uncontended_retry(platform, cw),
    )
    return AvgSolution(
        trl=trl,
        trl0=branch_point(platform, cw),
        expansion=expansion_avg(trl, platform, cw),
        success_period=expected_success_period(trl, platform, workload),
        iterations=iters,
    )


def predict_avg(platform: PlatformParams, workload: WorkloadParams) -> Prediction:
    return solve_fixed_point(platform, workload).prediction()
