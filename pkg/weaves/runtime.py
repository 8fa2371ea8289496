"""String runtime: a cooperative user-level scheduler over greenlets.

Each string is a flow of execution bound to exactly one weave. Switching
flows switches the namespace by repointing the active indirection table,
a single attribute store whatever the number of weaves or symbols.
Message callbacks run as extra flows of the receiving string, under its
weave.

All tapestry state is touched only by the thread driving :meth:`Runtime.run`.
Other threads (monitor front-ends) go through :meth:`Runtime.submit`, which
queues the work for the next switch boundary.
"""
import csv
import heapq
import io
import logging
import queue
import threading
import time
from collections import deque
from concurrent.futures import Future
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Deque, Dict, FrozenSet, List, Optional, Sequence, Tuple

from greenlet import GreenletExit, getcurrent, greenlet

from .core import Tapestry, WeaveRef
from .errors import FabricError, ModuleNotInWeave, RuntimeMisuse, UnknownReference, WeaveError
from .values import Value, conform_value

logger = logging.getLogger(__name__)


class Status(str, Enum):
    CREATED = "created"
    RUNNABLE = "runnable"
    RUNNING = "running"
    BLOCKED = "blocked"
    FINISHED = "finished"


@dataclass(frozen=True)
class SchedulerPolicy:
    mode: str = "cooperative"
    quantum: int = 0

    @property
    def preemptive(self) -> bool:
        return self.mode == "simulated-preemptive"

    @classmethod
    def parse(cls, text: str) -> "SchedulerPolicy":
        text = (text or "cooperative").strip()
        if text == "cooperative":
            return cls()
        if text.startswith("preempt:"):
            try:
                quantum = int(text.split(":", 1)[1])
            except ValueError:
                raise WeaveError(f"Bad preemption quantum in {text!r}", "bad-policy")
            if quantum < 1:
                raise WeaveError("Preemption quantum must be >= 1", "bad-policy")
            return cls("simulated-preemptive", quantum)
        raise WeaveError(f"Unknown scheduler policy {text!r}", "bad-policy")

    def __str__(self) -> str:
        return f"preempt:{self.quantum}" if self.preemptive else "cooperative"


@dataclass(eq=False)
class StringState:
    id: int
    name: str
    weave: int
    entry: Tuple[str, str]
    args: Tuple[Value, ...]
    status: Status = Status.CREATED
    blocked_reason: Optional[str] = None
    eq_class: int = -1
    exit_status: str = ""
    retired: bool = False
    switches: int = 0
    guest_calls: int = 0
    wall_ms: float = 0.0

    @property
    def live(self) -> bool:
        return not self.retired

    def describe_status(self) -> str:
        if self.exit_status:
            return self.exit_status
        if self.status == Status.BLOCKED:
            return f"blocked:{self.blocked_reason}"
        return self.status.value


@dataclass
class Frame:
    bead: int
    module: str
    entry: str


@dataclass(eq=False)
class Flow:
    """A schedulable flow: a string's main body or one callback activation."""

    string: StringState
    body: Callable[["GuestContext"], Any]
    kind: str = "main"
    frames: List[Frame] = field(default_factory=list)
    glet: Optional[greenlet] = None
    wake_error: Optional[BaseException] = None
    on_exit: Optional[Callable[["Flow"], None]] = None
    finished: bool = False


@dataclass(frozen=True)
class EquivalenceClasses:
    classes: Tuple[FrozenSet[int], ...]

    def class_of(self, string_id: int) -> int:
        for index, members in enumerate(self.classes):
            if string_id in members:
                return index
        raise UnknownReference(f"String {string_id} is not live", "unknown-string")

    def as_sets(self) -> List[FrozenSet[int]]:
        return list(self.classes)


@dataclass
class StringReport:
    string_id: int
    name: str
    status: str
    switches: int
    guest_calls: int
    wall_ms: float


@dataclass
class RunReport:
    strings: List[StringReport] = field(default_factory=list)
    switches: int = 0
    guest_calls: int = 0
    wall_ms: float = 0.0
    virtual_time: int = 0
    deadlocked: List[int] = field(default_factory=list)
    errors: List[str] = field(default_factory=list)

    @property
    def deadlock(self) -> bool:
        return bool(self.deadlocked)

    def status_counts(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for row in self.strings:
            key = row.status.split(":", 1)[0]
            counts[key] = counts.get(key, 0) + 1
        return counts

    def finished(self) -> List[int]:
        return [row.string_id for row in self.strings if row.status == "finished"]

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["string_id", "status", "switches", "guest_calls", "wall_ms"])
        for row in self.strings:
            writer.writerow([row.string_id, row.status, row.switches, row.guest_calls, f"{row.wall_ms:.3f}"])
        return buffer.getvalue()


class Runtime:
    """Scheduler and guest API for one tapestry."""

    def __init__(self, tapestry: Tapestry, policy: Optional[SchedulerPolicy] = None):
        self.tapestry = tapestry
        self.policy = policy or SchedulerPolicy()
        self.strings: List[StringState] = []
        self.flows: Dict[int, Flow] = {}  # string id -> main flow
        self._live_flows: List[Flow] = []  # unfinished main and callback flows
        self.fabric = None
        self.switch_hooks: List[Callable[[Optional[Flow], Flow], None]] = []
        self.clock = 0
        self.switch_count = 0
        self.guest_call_count = 0
        self.errors: List[str] = []
        self._ready: Deque[Flow] = deque()
        self._current: Optional[Flow] = None
        self._previous: Optional[Flow] = None
        self._table = None
        self._sched_glet: Optional[greenlet] = None
        self._since_switch = 0
        self._timers: List[Tuple[int, int, Callable[[], None]]] = []
        self._timer_seq = 0
        self._commands: "queue.Queue[Tuple[Callable[[], Any], Future]]" = queue.Queue()
        self._lock = threading.RLock()
        self._running = False
        self._paused = False
        self._shutdown = False
        self._held_back: List[int] = []
        self._strings_version = 0
        self._classes_key: Optional[Tuple[int, int]] = None
        self._classes: Optional[EquivalenceClasses] = None
        self._shared: FrozenSet[int] = frozenset()

    # -- strings ------------------------------------------------------------

    def spawn_string(self, weave: WeaveRef, entry: Tuple[str, str], args: Sequence[Any] = (),
                     name: Optional[str] = None) -> int:
        w, fn = self.check_spawn(weave, entry, name)
        module, entry_name = entry
        values = tuple(conform_value(a) for a in args)
        string_id = len(self.strings)
        state = StringState(string_id, name or f"string#{string_id}", w.id, (module, entry_name), values)

        def body(ctx: "GuestContext") -> Any:
            return fn(ctx, *values)

        flow = Flow(state, body, "main", [Frame(w.modules[module], module, entry_name)])
        self.strings.append(state)
        self.flows[string_id] = flow
        self._live_flows.append(flow)
        state.status = Status.RUNNABLE
        self._ready.append(flow)
        self._strings_version += 1
        logger.debug(f"Spawned string {string_id} on weave {w.name} at {module}.{entry_name}")
        return string_id

    def check_spawn(self, weave: WeaveRef, entry: Tuple[str, str], name: Optional[str] = None):
        w = self.tapestry.weave(weave)
        module, entry_name = entry
        if module not in w.modules:
            raise ModuleNotInWeave(f"Entry module {module} has no bead in weave {w.name}")
        fn = self.tapestry.module(module).entries.get(entry_name)
        if fn is None:
            raise UnknownReference(f"Module {module} has no entry {entry_name}", "unknown-entry")
        if name is not None and any(s.name == name for s in self.strings):
            raise WeaveError(f"String {name} already exists", "duplicate-name")
        return w, fn

    def string(self, string_id: int) -> StringState:
        if not isinstance(string_id, int) or not 0 <= string_id < len(self.strings):
            raise UnknownReference(f"Unknown string {string_id}", "unknown-string")
        return self.strings[string_id]

    def string_by_name(self, name: str) -> StringState:
        for state in self.strings:
            if state.name == name:
                return state
        raise UnknownReference(f"Unknown string {name}", "unknown-string")

    def remove_string(self, string_id: int) -> None:
        state = self.string(string_id)
        if state.retired:
            raise UnknownReference(f"String {string_id} already retired", "unknown-string")
        # main first: its exit closes the endpoint so no new callbacks start
        self._stop_flow(self.flows[string_id])
        for flow in [f for f in self._live_flows if f.kind == "callback" and f.string is state]:
            self._stop_flow(flow)
        if not state.exit_status:
            state.exit_status = "removed"
        state.retired = True
        self._strings_version += 1
        logger.info(f"Retired string {string_id}")

    def _stop_flow(self, flow: Flow) -> None:
        if flow.finished:
            return
        if flow in self._ready:
            self._ready.remove(flow)
        if flow.glet is not None and not flow.glet.dead:
            flow.glet.parent = getcurrent()
            flow.glet.throw(GreenletExit)
        else:
            self._finish(flow, "removed")

    # -- equivalence classes ---------------------------------------------------

    def equivalence_classes(self) -> EquivalenceClasses:
        key = (self.tapestry.generation, self._strings_version)
        if self._classes_key == key and self._classes is not None:
            return self._classes
        live = [s for s in self.strings if s.live]
        parent = {s.id: s.id for s in live}

        def find(x: int) -> int:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        owners: Dict[int, List[int]] = {}
        for s in live:
            for bead_id in self.tapestry.weaves[s.weave].beads:
                owners.setdefault(bead_id, []).append(s.id)
        for members in owners.values():
            root = find(members[0])
            for other in members[1:]:
                other_root = find(other)
                if other_root != root:
                    parent[other_root] = root
        groups: Dict[int, set] = {}
        for s in live:
            groups.setdefault(find(s.id), set()).add(s.id)
        classes = tuple(sorted((frozenset(g) for g in groups.values()), key=min))
        for index, members in enumerate(classes):
            for sid in members:
                self.strings[sid].eq_class = index
        self._shared = frozenset(b for b, m in owners.items() if len(m) > 1)
        self._classes = EquivalenceClasses(classes)
        self._classes_key = key
        return self._classes

    def shared_beads(self) -> FrozenSet[int]:
        self.equivalence_classes()
        return self._shared

    def in_shared_nonreentrant(self, flow: Flow) -> bool:
        shared = self.shared_beads()
        for frame in flow.frames:
            if frame.bead in shared and not self.tapestry.modules[frame.module].reentrant:
                return True
        return False

    # -- commands ---------------------------------------------------------------

    def submit(self, fn: Callable[[], Any]) -> Future:
        """Run ``fn`` against the tapestry at the next switch boundary, or now when idle."""
        future: Future = Future()
        self._commands.put((fn, future))
        while not self._running and not future.done():
            if self._lock.acquire(timeout=0.01):
                try:
                    if not self._running:
                        self._drain_commands()
                finally:
                    self._lock.release()
        return future

    def call(self, fn: Callable[[], Any], timeout: Optional[float] = None) -> Any:
        return self.submit(fn).result(timeout)

    def _execute(self, fn: Callable[[], Any], future: Future) -> None:
        if not future.set_running_or_notify_cancel():
            return
        try:
            future.set_result(fn())
        except BaseException as e:  # delivered to the submitter
            future.set_exception(e)

    def _drain_commands(self) -> int:
        count = 0
        while True:
            try:
                fn, future = self._commands.get_nowait()
            except queue.Empty:
                return count
            self._execute(fn, future)
            count += 1

    def pause(self) -> None:
        if self._paused:
            raise WeaveError("Runtime already paused", "already-paused")
        self._paused = True
        logger.info("Runtime paused")

    def resume(self) -> None:
        if not self._paused:
            raise WeaveError("Runtime is not paused", "not-paused")
        self._paused = False
        logger.info("Runtime resumed")

    @property
    def paused(self) -> bool:
        return self._paused

    @property
    def running(self) -> bool:
        return self._running

    def shutdown(self) -> None:
        self._shutdown = True
        self._commands.put((lambda: None, Future()))

    # -- timers ---------------------------------------------------------------------

    def call_later(self, ticks: int, fn: Callable[[], None]) -> None:
        self._timer_seq += 1
        heapq.heappush(self._timers, (self.clock + max(0, ticks), self._timer_seq, fn))

    def _fire_timers(self, jump: bool) -> bool:
        if not self._timers:
            return False
        if jump and self._timers[0][0] > self.clock:
            self.clock = self._timers[0][0]
        fired = False
        while self._timers and self._timers[0][0] <= self.clock:
            _, _, fn = heapq.heappop(self._timers)
            fn()
            fired = True
        return fired

    # -- scheduling ---------------------------------------------------------------------

    def run(self, policy: Optional[SchedulerPolicy] = None, keep_alive: bool = False) -> RunReport:
        if policy is not None:
            self.policy = policy
        if self._running:
            raise RuntimeMisuse("run() is already active")
        started = time.perf_counter()
        switches_before = self.switch_count
        calls_before = self.guest_call_count
        with self._lock:
            self._running = True
            self._shutdown = False
            self._held_back = []
            self._sched_glet = getcurrent()
            try:
                self._loop(keep_alive)
            finally:
                self._running = False
                self._sched_glet = None
                self._drain_commands()
        report = self._report(time.perf_counter() - started, switches_before, calls_before)
        if report.deadlocked:
            logger.warning(f"Run ended in deadlock; blocked strings {report.deadlocked}")
        logger.info(f"Run finished: {report.status_counts()} switches={report.switches}")
        return report

    def _loop(self, keep_alive: bool) -> None:
        while True:
            self._drain_commands()
            if self._shutdown:
                return
            if self._paused:
                self._wait_for_command()
                continue
            self._fire_timers(jump=False)
            flow = self._next_ready()
            if flow is not None:
                self._dispatch(flow)
                continue
            if self._fire_timers(jump=True):
                continue
            if keep_alive:
                self._wait_for_command()
                continue
            self._held_back = [f.string.id for f in self._ready if f.kind == "main"]
            if self._held_back:
                logger.warning(f"Strings {self._held_back} held back: their class is inside a shared bead")
            return

    def _wait_for_command(self) -> None:
        try:
            fn, future = self._commands.get(timeout=0.05)
        except queue.Empty:
            return
        self._execute(fn, future)

    def _dispatch(self, flow: Flow) -> None:
        state = flow.string
        self._current = flow
        # namespace switch
        self._table = self.tapestry.weaves[state.weave].table
        if flow.kind == "main":
            state.status = Status.RUNNING
        self.clock += 1
        self.switch_count += 1
        state.switches += 1
        self._since_switch = 0
        for hook in self.switch_hooks:
            hook(self._previous, flow)
        started = time.perf_counter()
        try:
            if flow.glet is None:
                flow.glet = greenlet(self._flow_main, parent=self._sched_glet)
                flow.glet.switch(flow)
            else:
                flow.glet.parent = self._sched_glet
                flow.glet.switch()
        finally:
            state.wall_ms += (time.perf_counter() - started) * 1000.0
            self._previous = flow
            self._current = None
            self._table = None
        if flow.kind == "main" and state.status == Status.RUNNING:
            state.status = Status.RUNNABLE

    def _flow_main(self, flow: Flow) -> None:
        ctx = GuestContext(self, flow)
        status = "finished"
        try:
            flow.body(ctx)
        except GreenletExit:
            status = "removed"
        except WeaveError as e:
            status = f"failed:{e.code}"
            self._record_error(flow, e)
        except Exception as e:
            status = "failed:guest-exception"
            self._record_error(flow, e)
        self._finish(flow, status)

    def _record_error(self, flow: Flow, error: BaseException) -> None:
        message = f"string {flow.string.id} ({flow.kind}): {type(error).__name__}: {error}"
        self.errors.append(message)
        logger.error(f"Guest flow failed - {message}")

    def _finish(self, flow: Flow, status: str) -> None:
        flow.finished = True
        if flow in self._live_flows:
            self._live_flows.remove(flow)
        flow.frames.clear()
        if flow.kind == "main":
            flow.string.status = Status.FINISHED
            flow.string.blocked_reason = None
            if not flow.string.exit_status:
                flow.string.exit_status = status
        if flow.on_exit is not None:
            flow.on_exit(flow)
        if flow.kind == "main" and self.fabric is not None:
            self.fabric.on_string_exit(flow.string.id)

    def _switch_out(self) -> None:
        if self._sched_glet is None:
            raise RuntimeMisuse("No scheduler is running")
        self._sched_glet.switch()

    def _shared_holders(self) -> Dict[int, List[Flow]]:
        """Started flows with an active frame in a shared non-reentrant bead, by class."""
        classes = self.equivalence_classes()
        holders: Dict[int, List[Flow]] = {}
        for flow in self._live_flows:
            if flow.glet is None or not flow.string.live:
                continue
            if self.in_shared_nonreentrant(flow):
                holders.setdefault(classes.class_of(flow.string.id), []).append(flow)
        return holders

    def _eligible(self, candidate: Flow, holders: Dict[int, List[Flow]]) -> bool:
        # at most one flow per class may be inside a shared non-reentrant bead
        if not candidate.string.live:
            return True
        owners = holders.get(self.equivalence_classes().class_of(candidate.string.id), ())
        return all(owner is candidate for owner in owners)

    def _pick_candidate(self) -> Optional[Flow]:
        if not self.policy.preemptive:
            return self._ready[0] if self._ready else None
        holders = self._shared_holders()
        for candidate in self._ready:
            if self._eligible(candidate, holders):
                return candidate
        return None

    def _next_ready(self) -> Optional[Flow]:
        candidate = self._pick_candidate() if self._ready else None
        if candidate is not None:
            self._ready.remove(candidate)
        return candidate

    def _switch_to_candidate(self, flow: Flow) -> None:
        candidate = self._pick_candidate()
        if candidate is None:
            self._since_switch = 0
            return
        self._ready.remove(candidate)
        self._ready.appendleft(candidate)
        self._ready.append(flow)
        if flow.kind == "main":
            flow.string.status = Status.RUNNABLE
        self._switch_out()
        self._after_resume(flow)

    def _after_resume(self, flow: Flow) -> None:
        if flow.wake_error is not None:
            error, flow.wake_error = flow.wake_error, None
            raise error

    def current_flow(self) -> Flow:
        if self._current is None:
            raise RuntimeMisuse("Guest API called outside any string")
        return self._current

    def guest_call(self) -> Flow:
        flow = self.current_flow()
        flow.string.guest_calls += 1
        self.guest_call_count += 1
        if self.policy.preemptive:
            self._since_switch += 1
            if self._since_switch >= self.policy.quantum:
                self._switch_to_candidate(flow)
        return flow

    # -- guest API ----------------------------------------------------------------------------

    def yield_current(self) -> None:
        flow = self.guest_call()
        if self._ready:
            self._switch_to_candidate(flow)
        elif not self._commands.empty():
            # let pending monitor commands drain before resuming
            self._ready.append(flow)
            if flow.kind == "main":
                flow.string.status = Status.RUNNABLE
            self._switch_out()
            self._after_resume(flow)

    def current_string_id(self) -> int:
        return self.guest_call().string.id

    def _lookup(self, flow: Flow, symbol: str, module: Optional[str]) -> int:
        if module is None:
            module = flow.frames[-1].module
        try:
            return self._table.lookup(module, symbol)
        except KeyError:
            return self.tapestry.resolve(flow.string.weave, module, symbol)

    def ctx_get(self, symbol: str, module: Optional[str] = None) -> Value:
        flow = self.guest_call()
        return self.tapestry.cells[self._lookup(flow, symbol, module)].value

    def ctx_set(self, symbol: str, value: Any, module: Optional[str] = None) -> None:
        flow = self.guest_call()
        self.tapestry.write_cell(self._lookup(flow, symbol, module), value)

    def call_entry(self, module: str, entry: str, *args: Any) -> Any:
        flow = self.guest_call()
        weave = self.tapestry.weaves[flow.string.weave]
        bead_id = weave.modules.get(module)
        if bead_id is None:
            raise ModuleNotInWeave(f"Module {module} has no bead in weave {weave.name}")
        fn = self.tapestry.modules[module].entries.get(entry)
        if fn is None:
            raise UnknownReference(f"Module {module} has no entry {entry}", "unknown-entry")
        flow.frames.append(Frame(bead_id, module, entry))
        try:
            return fn(GuestContext(self, flow), *args)
        finally:
            flow.frames.pop()

    # -- hooks used by the message fabric ---------------------------------------------------

    def block_current(self, reason: str) -> None:
        flow = self.current_flow()
        if flow.kind == "main":
            flow.string.status = Status.BLOCKED
            flow.string.blocked_reason = reason
        self._switch_out()
        self._after_resume(flow)

    def wake(self, flow: Flow, error: Optional[BaseException] = None) -> None:
        if flow.finished:
            return
        flow.wake_error = error
        if flow.kind == "main":
            flow.string.status = Status.RUNNABLE
            flow.string.blocked_reason = None
        self._ready.append(flow)

    def start_activation(self, string_id: int, entry: Tuple[str, str], args: Sequence[Any],
                         on_exit: Callable[[Flow], None]) -> Flow:
        state = self.string(string_id)
        module, entry_name = entry
        weave = self.tapestry.weaves[state.weave]
        fn = self.tapestry.modules[module].entries[entry_name]

        def body(ctx: "GuestContext") -> Any:
            return fn(ctx, *args)

        flow = Flow(state, body, "callback", [Frame(weave.modules[module], module, entry_name)], on_exit=on_exit)
        self._ready.append(flow)
        self._live_flows.append(flow)
        return flow

    def blocked_strings(self) -> List[int]:
        return [s.id for s in self.strings if s.status == Status.BLOCKED and not s.retired]

    # -- reporting ------------------------------------------------------------------------------

    def _report(self, elapsed: float, switches_before: int, calls_before: int) -> RunReport:
        rows = [StringReport(s.id, s.name, s.describe_status(), s.switches, s.guest_calls, s.wall_ms)
                for s in self.strings]
        return RunReport(
            strings=rows,
            switches=self.switch_count - switches_before,
            guest_calls=self.guest_call_count - calls_before,
            wall_ms=elapsed * 1000.0,
            virtual_time=self.clock,
            deadlocked=sorted(set(self.blocked_strings()) | set(self._held_back)),
            errors=list(self.errors),
        )

    def stats(self) -> Dict[str, Any]:
        counts = {status.value: 0 for status in Status}
        for s in self.strings:
            if not s.retired:
                counts[s.status.value] += 1
        return {
            "strings": len(self.strings),
            "by_status": counts,
            "retired": sum(1 for s in self.strings if s.retired),
            "switches": self.switch_count,
            "guest_calls": self.guest_call_count,
            "virtual_time": self.clock,
            "paused": self._paused,
            "generation": self.tapestry.generation,
        }


class GuestContext:
    """The API a guest entry function sees; bound to one flow."""

    __slots__ = ("_runtime", "_flow")

    def __init__(self, runtime: Runtime, flow: Flow):
        self._runtime = runtime
        self._flow = flow

    def get(self, symbol: str, module: Optional[str] = None) -> Value:
        return self._runtime.ctx_get(symbol, module)

    def set(self, symbol: str, value: Any, module: Optional[str] = None) -> None:
        self._runtime.ctx_set(symbol, value, module)

    def yield_current(self) -> None:
        self._runtime.yield_current()

    def current_string_id(self) -> int:
        return self._runtime.current_string_id()

    def call(self, module: str, entry: str, *args: Any) -> Any:
        return self._runtime.call_entry(module, entry, *args)

    def rewire(self, command) -> Future:
        """Restructure the tapestry from guest code; applied at the next switch boundary."""
        self._runtime.guest_call()
        handle = getattr(self._runtime, "handle", None)
        if handle is None:
            raise RuntimeMisuse("Runtime has no tapestry handle to rewire")
        return handle.apply_rewire(command)

    def _fabric(self):
        fabric = self._runtime.fabric
        if fabric is None:
            raise FabricError("Message fabric not initialized", "unbound")
        return fabric

    def mf_rank(self) -> int:
        return self._fabric().mf_rank()

    def mf_size(self) -> int:
        return self._fabric().mf_size()

    def mf_send(self, dst: int, tag: int, payload: Any) -> None:
        self._fabric().mf_send(dst, tag, payload)

    def mf_recv(self, tag: Optional[int] = None):
        return self._fabric().mf_recv(tag)

    def mf_barrier(self) -> None:
        self._fabric().mf_barrier()

    def mf_register_callback(self, module: str, entry: str) -> None:
        self._fabric().mf_register_callback((module, entry))
