"""Flow-model overhead and scalability experiments.

Every flow runs a calibrated busy loop doing 1/n-th of the baseline work,
giving up the processor after each fixed work slice so that the number of
context switches is comparable across models.
"""
import csv
import io
import logging
import multiprocessing
import os
import platform
import statistics
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence

import psutil

from .catalog import ModuleCatalog
from .core import ModuleDef
from .errors import CalibrationError, WeaveError
from .sweep import SweepParams, run_sweep
from .tapestry_config import BeadDecl, ModuleDecl, StringDecl, TapestryPlan, WeaveDecl, instantiate

logger = logging.getLogger(__name__)

MODELS = ("baseline", "host-threads", "processes", "weaves")
REPORT_HEADER = ["model", "n_flows", "total_wall_ms", "overhead_pct", "reps"]
SETUP_HEADER = ["model", "n_flows", "setup_ms"]


def spin(iterations: int) -> int:
    acc = 0
    for i in range(iterations):
        acc ^= i
    return acc


def _median_ms(fn: Callable[[], None], samples: int) -> float:
    timings = []
    for _ in range(samples):
        started = time.perf_counter()
        fn()
        timings.append((time.perf_counter() - started) * 1000.0)
    return statistics.median(timings)


def calibrate_delay(target_ms: float, tolerance: float = 0.02, attempts: int = 10, samples: int = 3) -> int:
    """Iterations of :func:`spin` whose median wall time is within ``tolerance`` of ``target_ms``."""
    if not target_ms or target_ms <= 0:
        raise CalibrationError(f"Calibration target must be positive, got {target_ms}")
    iterations = 10_000
    # rough rate first, on a run long enough to be measurable
    while True:
        elapsed = _median_ms(lambda: spin(iterations), 1)
        if elapsed >= min(20.0, target_ms / 4) or iterations > 1 << 40:
            break
        iterations *= 4
    iterations = max(1, int(iterations * target_ms / max(elapsed, 1e-6)))
    for attempt in range(attempts):
        measured = _median_ms(lambda: spin(iterations), samples)
        error = (measured - target_ms) / target_ms
        logger.debug(f"Calibration attempt {attempt}: {iterations} iterations -> {measured:.2f}ms")
        if abs(error) <= tolerance:
            logger.info(f"Calibrated {target_ms}ms delay to {iterations} iterations")
            return iterations
        iterations = max(1, int(iterations * target_ms / measured))
    raise CalibrationError(f"Delay loop did not settle within {tolerance:.0%} of {target_ms}ms "
                           f"after {attempts} attempts")


def split_work(total: int, n_flows: int) -> List[int]:
    """Integer shares summing exactly to ``total``; flow 0 takes the remainder."""
    if n_flows < 1:
        raise WeaveError(f"n_flows must be at least 1, got {n_flows}", "invalid-params")
    share, remainder = divmod(total, n_flows)
    return [share + remainder] + [share] * (n_flows - 1)


def _slices(iterations: int, slice_iterations: int) -> Iterable[int]:
    while iterations > 0:
        step = min(slice_iterations, iterations)
        yield step
        iterations -= step


# -- flow bodies ------------------------------------------------------------------------

def _sliced_spin(iterations: int, slice_iterations: int, give_up: Callable[[], None]) -> None:
    for step in _slices(iterations, slice_iterations):
        spin(step)
        give_up()


def _no_switch() -> None:
    pass


def _process_flow(iterations: int, slice_iterations: int) -> None:
    _sliced_spin(iterations, slice_iterations, lambda: time.sleep(0))


def delay_main(ctx, iterations: int, slice_iterations: int) -> None:
    for step in _slices(iterations, slice_iterations):
        spin(step)
        ctx.set("slices", ctx.get("slices") + 1)
        ctx.yield_current()


def delay_module() -> ModuleDef:
    return ModuleDef.build("delay", [("slices", "int", 0)], {"main": delay_main})


# -- records ---------------------------------------------------------------------------------

@dataclass
class TimingRecord:
    model: str
    n_flows: int
    total_wall_ms: float
    overhead_pct: float = 0.0
    reps: int = 1
    setup_ms: float = 0.0
    skipped: bool = False
    samples: List[float] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "n_flows": self.n_flows,
            "total_wall_ms": self.total_wall_ms,
            "overhead_pct": self.overhead_pct,
            "reps": self.reps,
            "setup_ms": self.setup_ms,
            "skipped": self.skipped,
        }


@dataclass
class _Measured:
    wall_ms: float
    setup_ms: float = 0.0


def _measure_baseline(iterations: int, slice_iterations: int) -> _Measured:
    started = time.perf_counter()
    _sliced_spin(iterations, slice_iterations, _no_switch)
    return _Measured((time.perf_counter() - started) * 1000.0)


def _measure_threads(shares: Sequence[int], slice_iterations: int) -> _Measured:
    started = time.perf_counter()
    threads = [threading.Thread(target=_sliced_spin, args=(share, slice_iterations, lambda: time.sleep(0)))
               for share in shares]
    setup = (time.perf_counter() - started) * 1000.0
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()
    return _Measured((time.perf_counter() - started) * 1000.0 - setup, setup)


def _measure_processes(shares: Sequence[int], slice_iterations: int) -> _Measured:
    context = multiprocessing.get_context()
    started = time.perf_counter()
    processes = [context.Process(target=_process_flow, args=(share, slice_iterations)) for share in shares]
    setup = (time.perf_counter() - started) * 1000.0
    for process in processes:
        process.start()
    for process in processes:
        process.join()
    failed = [p.exitcode for p in processes if p.exitcode != 0]
    if failed:
        raise OSError(f"worker processes exited with {failed}")
    return _Measured((time.perf_counter() - started) * 1000.0 - setup, setup)


def delay_plan(shares: Sequence[int], slice_iterations: int) -> TapestryPlan:
    """A private delay bead and weave per flow."""
    plan = TapestryPlan(modules=[ModuleDecl("delay")])
    for index, share in enumerate(shares):
        plan.beads.append(BeadDecl(f"D{index}", "delay"))
        plan.weaves.append(WeaveDecl(f"W{index}", (f"D{index}",)))
        plan.strings.append(StringDecl(f"f{index}", f"W{index}", "delay", "main", (share, slice_iterations)))
    return plan


def _measure_weaves(shares: Sequence[int], slice_iterations: int,
                    catalog: Optional[ModuleCatalog] = None) -> _Measured:
    started = time.perf_counter()
    handle = instantiate(delay_plan(shares, slice_iterations), catalog, name="bench")
    setup = (time.perf_counter() - started) * 1000.0
    report = handle.run()
    if report.errors:
        raise WeaveError(f"Delay strings failed: {report.errors}", "run-failed")
    return _Measured(report.wall_ms, setup)


def processes_supported() -> bool:
    try:
        multiprocessing.get_context()
        return os.cpu_count() is not None and platform.system() != "Emscripten"
    except (ValueError, NotImplementedError, ImportError):
        return False


def run_flow_experiment(model: str, n_flows: int, target_ms: float, reps: int,
                        iterations: Optional[int] = None, baseline_ms: Optional[float] = None,
                        slice_ms: float = 1.0, catalog: Optional[ModuleCatalog] = None) -> TimingRecord:
    """Median wall time over ``reps`` for ``n_flows`` flows of ``model`` sharing one baseline's work."""
    if model not in MODELS:
        raise WeaveError(f"Unknown flow model {model!r}; choose from {MODELS}", "invalid-params")
    if n_flows < 1 or reps < 1:
        raise WeaveError("n_flows and reps must be at least 1", "invalid-params")
    if iterations is None:
        iterations = calibrate_delay(target_ms)
    slice_iterations = max(1, int(iterations * slice_ms / target_ms))
    shares = split_work(iterations, n_flows)
    if baseline_ms is None:
        baseline_ms = statistics.median(
            _measure_baseline(iterations, slice_iterations).wall_ms for _ in range(reps))

    measured: List[_Measured] = []
    try:
        for _ in range(reps):
            if model == "baseline":
                measured.append(_measure_baseline(iterations, slice_iterations))
            elif model == "host-threads":
                measured.append(_measure_threads(shares, slice_iterations))
            elif model == "processes":
                if not processes_supported():
                    raise NotImplementedError("process spawning is unavailable")
                measured.append(_measure_processes(shares, slice_iterations))
            else:
                measured.append(_measure_weaves(shares, slice_iterations, catalog))
    except (OSError, NotImplementedError) as e:
        logger.warning(f"Skipping model {model} at n={n_flows}: {e}")
        return TimingRecord(model, n_flows, 0.0, 0.0, reps, skipped=True)

    samples = [m.wall_ms for m in measured]
    total = statistics.median(samples)
    record = TimingRecord(
        model=model,
        n_flows=n_flows,
        total_wall_ms=total,
        overhead_pct=(total - baseline_ms) / baseline_ms * 100.0,
        reps=reps,
        setup_ms=statistics.median(m.setup_ms for m in measured),
        samples=samples,
    )
    logger.info(f"{model} n={n_flows}: {total:.1f}ms ({record.overhead_pct:+.2f}% vs baseline)")
    return record


def run_flow_suite(models: Sequence[str], flow_counts: Sequence[int], target_ms: float, reps: int,
                   slice_ms: float = 1.0) -> List[TimingRecord]:
    """One calibration and one baseline shared by every (model, n) cell."""
    iterations = calibrate_delay(target_ms)
    slice_iterations = max(1, int(iterations * slice_ms / target_ms))
    baseline_ms = statistics.median(
        _measure_baseline(iterations, slice_iterations).wall_ms for _ in range(reps))
    records = []
    for model in models:
        for n_flows in flow_counts:
            records.append(run_flow_experiment(model, n_flows, target_ms, reps, iterations,
                                               baseline_ms, slice_ms))
    return records


def _sort_key(record: TimingRecord):
    return record.model, record.n_flows


def emit_report(records: Sequence[TimingRecord]) -> bytes:
    if not records:
        raise WeaveError("No timing records to report", "invalid-params")
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(REPORT_HEADER)
    for r in sorted(records, key=_sort_key):
        if r.skipped:
            writer.writerow([r.model, r.n_flows, "skipped", "skipped", r.reps])
        else:
            writer.writerow([r.model, r.n_flows, f"{r.total_wall_ms:.3f}", f"{r.overhead_pct:.3f}", r.reps])
    return buffer.getvalue().encode("utf-8")


def emit_setup_report(records: Sequence[TimingRecord]) -> bytes:
    """Creation cost, kept apart from the steady-state numbers."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(SETUP_HEADER)
    for r in sorted(records, key=_sort_key):
        if not r.skipped:
            writer.writerow([r.model, r.n_flows, f"{r.setup_ms:.3f}"])
    return buffer.getvalue().encode("utf-8")


# -- scalability -------------------------------------------------------------------------------

@dataclass
class ScaleReport:
    n_weaves: int
    grid: tuple
    wall_ms: List[float]
    digests: List[str]
    setup_ms: List[float]
    peak_rss_mb: float

    @property
    def identical(self) -> bool:
        return len(set(self.digests)) == 1

    @property
    def variation_pct(self) -> float:
        """Spread of wall times relative to their median."""
        middle = statistics.median(self.wall_ms)
        return (max(self.wall_ms) - min(self.wall_ms)) / middle * 100.0 if middle else 0.0

    def to_csv(self) -> bytes:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["n_weaves", "run", "wall_ms", "setup_ms", "digest", "peak_rss_mb"])
        for run, (wall, setup, digest) in enumerate(zip(self.wall_ms, self.setup_ms, self.digests)):
            writer.writerow([self.n_weaves, run, f"{wall:.3f}", f"{setup:.3f}", digest, f"{self.peak_rss_mb:.1f}"])
        return buffer.getvalue().encode("utf-8")


def run_scalability(n_weaves: int, seed: int = 42, runs: int = 3, plane: Sequence[int] = (8, 8),
                    sweeps: int = 2, catalog: Optional[ModuleCatalog] = None) -> ScaleReport:
    """Sweep kernel with one x-plane of ``plane`` per virtual machine, repeated ``runs`` times."""
    if n_weaves < 1:
        raise WeaveError(f"n_weaves must be at least 1, got {n_weaves}", "invalid-params")
    if runs < 1:
        raise WeaveError("runs must be at least 1", "invalid-params")
    ny, nz = plane
    params = SweepParams((n_weaves, ny, nz), n_weaves, sweeps, seed)
    process = psutil.Process()
    peak = process.memory_info().rss
    walls, digests, setups = [], [], []
    for run in range(runs):
        try:
            result = run_sweep(params, catalog=catalog)
        except MemoryError:
            logger.error(f"Memory exhausted at n_weaves={n_weaves}")
            raise WeaveError(f"Memory exhausted at n_weaves={n_weaves}", "memory-exhausted")
        peak = max(peak, process.memory_info().rss)
        walls.append(result.wall_ms)
        setups.append(result.setup_ms)
        digests.append(result.digest)
        logger.info(f"Scale run {run} at {n_weaves} weaves: {result.wall_ms:.1f}ms digest={result.digest[:12]}")
        del result
    return ScaleReport(n_weaves, (n_weaves, ny, nz), walls, digests, setups, peak / (1024 * 1024))
