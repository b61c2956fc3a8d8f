"""Real-hardware CAS benchmarks and latency calibration.

The C kernel (``lfbench.c``) is compiled on first use with the system C
compiler and loaded through ctypes. Hardware numbers are machine-specific;
they are exported next to model predictions for comparison, never asserted.
"""

from __future__ import annotations

import ctypes
import hashlib
import os
import shutil
import subprocess
import tempfile
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from ..core import PlatformParams, WorkloadParams, Kind, DEFAULT_UNIT_CYCLES

MIN_TRIALS = 100_000
MAX_TIMER_RESOLUTION = 100  # cycles

FLAG_UNPINNED = "unpinned"
FLAG_OVERSUBSCRIBED = "oversubscribed"
FLAG_CC_LT_RC = "cc_below_rc_review"


class HarnessError(RuntimeError):
    pass


class _Config(ctypes.Structure):
    _fields_ = [
        ("structure", ctypes.c_int),
        ("threads", ctypes.c_int),
        ("pin", ctypes.c_int),
        ("pw_exponential", ctypes.c_int),
        ("pw_ticks", ctypes.c_double),
        ("backoff_ticks", ctypes.c_double),
        ("cw_ticks", ctypes.c_double),
        ("duration_s", ctypes.c_double),
        ("seed", ctypes.c_uint64),
        ("stack_nodes", ctypes.c_int),
        ("initial_depth", ctypes.c_int),
        ("stride", ctypes.c_int),
    ]


class _ThreadStats(ctypes.Structure):
    _fields_ = [(name, ctypes.c_uint64) for name in
                ("successes", "failures", "pushes", "pops", "empty_pops")]


class _Result(ctypes.Structure):
    _fields_ = [
        ("counter_final", ctypes.c_uint64),
        ("stack_final_depth", ctypes.c_int64),
        ("pinned", ctypes.c_int),
        ("stack_ok", ctypes.c_int),
        ("elapsed_s", ctypes.c_double),
    ]


def compiler() -> str | None:
    for name in (os.environ.get("CC"), "cc", "gcc", "clang"):
        if name and shutil.which(name):
            return name
    return None


def _cache_dir() -> Path:
    base = os.environ.get("XDG_CACHE_HOME") or os.path.join(os.path.expanduser("~"), ".cache")
    path = Path(base) / "lfperf"
    try:
        path.mkdir(parents=True, exist_ok=True)
        return path
    except OSError:
        return Path(tempfile.gettempdir())


_lib = None


def load_library() -> ctypes.CDLL:
    """Compile (once per source revision) and load the benchmark kernel."""
    global _lib
    if _lib is not None:
        return _lib
    src = resources.files(__package__).joinpath("lfbench.c").read_bytes()
    digest = hashlib.sha256(src).hexdigest()[:16]
    so = _cache_dir() / f"lfbench-{digest}.so"
    if not so.exists():
        cc = compiler()
        if cc is None:
            raise HarnessError("no C compiler found (set CC)")
        with tempfile.TemporaryDirectory() as tmp:
            c_path = Path(tmp) / "lfbench.c"
            c_path.write_bytes(src)
            out = Path(tmp) / so.name
            cmd = [cc, "-O2", "-shared", "-fPIC", "-pthread", str(c_path), "-o", str(out), "-lm"]
            proc = subprocess.run(cmd, capture_output=True, text=True)
            if proc.returncode != 0:
                raise HarnessError(f"compiling the benchmark kernel failed:\n{proc.stderr}")
            shutil.move(str(out), so)
    lib = ctypes.CDLL(str(so))
    lib.lf_bench.argtypes = [ctypes.POINTER(_Config), ctypes.POINTER(_ThreadStats), ctypes.POINTER(_Result)]
    lib.lf_bench.restype = ctypes.c_int
    lib.lf_timer_resolution.restype = ctypes.c_uint64
    lib.lf_calibrate.argtypes = [ctypes.c_int, ctypes.c_int, ctypes.c_int, ctypes.c_int,
                                 ctypes.POINTER(ctypes.c_int)]
    lib.lf_calibrate.restype = ctypes.c_uint64
    lib.lf_calibrate_local.argtypes = [ctypes.c_int, ctypes.c_int]
    lib.lf_calibrate_local.restype = ctypes.c_uint64
    _lib = lib
    return lib


def available_cpus() -> list[int]:
    try:
        return sorted(os.sched_getaffinity(0))
    except AttributeError:
        return list(range(os.cpu_count() or 1))


@dataclass
class Calibration:
    cc_cycles: float
    rc_cycles: float
    cc_local_cycles: float
    rc_local_cycles: float
    timer_resolution: int
    unit_cycles: float = DEFAULT_UNIT_CYCLES
    flags: list[str] = field(default_factory=list)

    @property
    def cc_uow(self) -> float:
        return self.cc_cycles / self.unit_cycles

    @property
    def rc_uow(self) -> float:
        return self.rc_cycles / self.unit_cycles

    def platform(self, P: int) -> PlatformParams:
        return PlatformParams(P, self.cc_uow, self.rc_uow, self.unit_cycles)

    def platform_json(self, P: int | None = None) -> dict:
        return {
            "platform": {
                "P": P if P is not None else len(available_cpus()),
                "cc_uow": self.cc_uow,
                "rc_uow": self.rc_uow,
                "unit_cycles": self.unit_cycles,
            },
            "calibration": {
                "cc_cycles": self.cc_cycles,
                "rc_cycles": self.rc_cycles,
                "cc_local_cycles": self.cc_local_cycles,
                "rc_local_cycles": self.rc_local_cycles,
                "timer_resolution_cycles": self.timer_resolution,
                "flags": list(self.flags),
            },
        }


def calibrate(trials: int = MIN_TRIALS, cpus: tuple[int, int] | None = None,
              unit_cycles: float = DEFAULT_UNIT_CYCLES) -> Calibration:
    """Median cross-core CAS and Read latencies, in cycles.

    Needs two hardware threads. Same-core medians are reported as a control.
    """
    if trials < MIN_TRIALS:
        raise ValueError(f"trials >= {MIN_TRIALS} required")
    if cpus is None:
        avail = available_cpus()
        if len(avail) < 2:
            raise HarnessError(f"calibration needs 2 hardware threads, found {len(avail)}")
        cpus = (avail[0], avail[1])
    lib = load_library()
    res = int(lib.lf_timer_resolution())
    if res > MAX_TIMER_RESOLUTION:
        raise HarnessError(f"timer resolution too coarse: {res} cycles")
    pinned = ctypes.c_int(0)
    cc = float(lib.lf_calibrate(0, cpus[0], cpus[1], trials, ctypes.byref(pinned)))
    cas_pinned = pinned.value
    rc = float(lib.lf_calibrate(1, cpus[0], cpus[1], trials, ctypes.byref(pinned)))
    flags = []
    if not (cas_pinned and pinned.value):
        flags.append(FLAG_UNPINNED)
    if cc < rc:
        flags.append(FLAG_CC_LT_RC)
    return Calibration(
        cc_cycles=cc,
        rc_cycles=rc,
        cc_local_cycles=float(lib.lf_calibrate_local(0, trials)),
        rc_local_cycles=float(lib.lf_calibrate_local(1, trials)),
        timer_resolution=res,
        unit_cycles=unit_cycles,
        flags=flags,
    )


@dataclass
class BenchStats:
    structure: str
    threads: int
    successes: list[int]
    failures: list[int]
    pushes: list[int]
    pops: list[int]
    elapsed_s: float
    counter_final: int
    stack_final_depth: int
    initial_depth: int
    conservation_ok: bool
    flags: list[str] = field(default_factory=list)

    @property
    def total_successes(self) -> int:
        return sum(self.successes)

    @property
    def throughput_ops(self) -> float:
        return self.total_successes / self.elapsed_s

    @property
    def fails_per_success(self) -> float:
        s = self.total_successes
        return sum(self.failures) / s if s else 0.0


STRUCTURES = ("counter", "stack")


def bench(structure: str, threads: int, workload: WorkloadParams, backoff: float = 0.0,
          duration: float = 1.0, unit_cycles: float = DEFAULT_UNIT_CYCLES, pin: bool = True,
          seed: int = 0, stack_nodes: int = 4096, initial_depth: int = 1024, stride: int = 1,
          allow_oversubscribe: bool = False) -> BenchStats:
    """Run the counter or stack benchmark for ``duration`` seconds.

    Parallel work is an idle spin (constant or exponential, from the
    workload's distribution) plus ``backoff``; critical work is a constant
    spin of cw. Durations are given in uow and converted with
    ``unit_cycles``. ``stride`` spreads stack nodes over memory and has no
    modeled effect.
    """
    if structure not in STRUCTURES:
        raise ValueError(f"structure must be one of {STRUCTURES}")
    if threads < 1:
        raise ValueError("threads >= 1 required")
    if duration <= 0:
        raise ValueError("duration > 0 required")
    flags: list[str] = []
    ncpu = len(available_cpus())
    if threads > ncpu:
        if not allow_oversubscribe:
            raise HarnessError(f"{threads} threads requested but only {ncpu} CPUs available")
        flags.append(FLAG_OVERSUBSCRIBED)
    if structure == "stack" and not 0 <= initial_depth <= stack_nodes:
        raise ValueError("0 <= initial_depth <= stack_nodes required")
    lib = load_library()
    cfg = _Config(
        structure=STRUCTURES.index(structure),
        threads=threads,
        pin=1 if pin else 0,
        pw_exponential=1 if workload.pw_dist.kind is Kind.EXPONENTIAL else 0,
        pw_ticks=workload.pw_mean * unit_cycles,
        backoff_ticks=backoff * unit_cycles,
        cw_ticks=workload.cw_mean * unit_cycles,
        duration_s=duration,
        seed=seed,
        stack_nodes=stack_nodes if structure == "stack" else 0,
        initial_depth=initial_depth if structure == "stack" else 0,
        stride=max(1, stride),
    )
    stats = (_ThreadStats * threads)()
    res = _Result()
    rc = lib.lf_bench(ctypes.byref(cfg), stats, ctypes.byref(res))
    if rc != 0:
        raise HarnessError(f"benchmark kernel failed with status {rc}")
    if not res.pinned:
        flags.append(FLAG_UNPINNED)
        if pin:
            warnings.warn("thread pinning unavailable; running unpinned", RuntimeWarning, stacklevel=2)
    succ = [s.successes for s in stats]
    pushes = [s.pushes for s in stats]
    pops = [s.pops for s in stats]
    if structure == "counter":
        ok = res.counter_final == sum(succ)
        depth = 0
        init = 0
    else:
        init = initial_depth
        depth = int(res.stack_final_depth)
        ok = bool(res.stack_ok) and sum(pushes) - sum(pops) == depth - init
    return BenchStats(
        structure=structure,
        threads=threads,
        successes=succ,
        failures=[s.failures for s in stats],
        pushes=pushes,
        pops=pops,
        elapsed_s=res.elapsed_s,
        counter_final=int(res.counter_final),
        stack_final_depth=depth,
        initial_depth=init,
        conservation_ok=ok,
        flags=flags,
    )


def bench_row(stats: BenchStats, workload: WorkloadParams, platform: PlatformParams,
              seed: int = 0) -> dict:
    """One row in the simulator CSV schema plus ``source=hardware``.

    Throughput is converted to successes per uow using the cycle counter's
    rate, estimated from the wall clock.
    """
    tick_rate = tick_rate_hz()
    per_uow = stats.total_successes / (stats.elapsed_s * tick_rate / platform.unit_cycles)
    return {
        "pw": workload.pw_mean,
        "cw": workload.cw_mean,
        "P": stats.threads,
        "cc": platform.cc,
        "rc": platform.rc,
        "pw_dist": workload.pw_dist.kind.value,
        "cw_dist": "constant",
        "seed": seed,
        "throughput": per_uow,
        "fails_per_success": stats.fails_per_success,
        "occupancy": float("nan"),
        "stderr_throughput": float("nan"),
        "source": "hardware",
    }


_tick_rate = None


def tick_rate_hz() -> float:
    """Cycle-counter ticks per second, measured once against the wall clock."""
    global _tick_rate
    if _tick_rate is None:
        import time
        lib = load_library()
        lib.lf_ticks.restype = ctypes.c_uint64
        t0, c0 = time.perf_counter(), lib.lf_ticks()
        time.sleep(0.05)
        t1, c1 = time.perf_counter(), lib.lf_ticks()
        _tick_rate = (c1 - c0) / (t1 - t0)
    return _tick_rate
