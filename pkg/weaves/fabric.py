"""Emulated message passing between strings.

Seven primitives: init, rank, size, send, recv, barrier and
register_callback. Sends are buffered and never block. An endpoint is
either in recv mode or in callback mode for the whole run; callback
handlers run as activations of the receiving string under its weave,
one at a time per endpoint.
"""
import csv
import io
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Optional, Sequence, Tuple

from .errors import BrokenBarrier, FabricError, ModuleNotInWeave, UnknownReference
from .runtime import Flow, Runtime
from .values import Value, conform_value

logger = logging.getLogger(__name__)

EMULATOR_MODULE = "emulator"
ANY_TAG = None


@dataclass(frozen=True)
class Message:
    src: int
    dst: int
    tag: int
    payload: Value
    seq: int


@dataclass
class CallbackRegistration:
    endpoint: int
    handler: Tuple[str, str]
    active: bool = True


@dataclass(eq=False)
class Endpoint:
    rank: int
    string: int
    mailbox: Deque[Message] = field(default_factory=deque)
    mode: Optional[str] = None  # "recv" | "callback"
    callback: Optional[CallbackRegistration] = None
    in_handler: bool = False
    waiting: Optional[Flow] = None
    waiting_tag: Optional[int] = None
    exited: bool = False


@dataclass(frozen=True)
class FabricEvent:
    event: str  # send | deliver | recv | callback
    src: int
    dst: int
    tag: int
    seq: int
    virtual_time: int
    string_id: int


class Fabric:
    def __init__(self, runtime: Runtime, latency: int = 0):
        self.runtime = runtime
        self.latency = max(0, int(latency))
        self.endpoints: List[Endpoint] = []
        self.events: List[FabricEvent] = []
        self._by_string: Dict[int, Endpoint] = {}
        self._seq: Dict[Tuple[int, int], int] = {}
        self._initialized = False
        self._barrier_arrived: Dict[int, Flow] = {}
        self._barrier_broken = False
        self.sends = 0
        self.receipts = 0
        self.activations = 0

    # -- setup -----------------------------------------------------------------

    def fabric_init(self, strings: Sequence[int]) -> None:
        if self._initialized:
            raise FabricError("Fabric already initialized for this tapestry", "reinit")
        ids = list(strings)
        if len(set(ids)) != len(ids):
            raise FabricError(f"Duplicate string in fabric binding {ids}", "duplicate-string")
        for sid in ids:
            self.runtime.string(sid)
        self.endpoints = [Endpoint(rank, sid) for rank, sid in enumerate(ids)]
        self._by_string = {ep.string: ep for ep in self.endpoints}
        self._initialized = True
        self.runtime.fabric = self
        logger.info(f"Fabric initialized with {len(ids)} endpoints")

    @property
    def size(self) -> int:
        return len(self.endpoints)

    def _endpoint_for_current(self) -> Endpoint:
        if not self._initialized:
            raise FabricError("Fabric not initialized", "unbound")
        flow = self.runtime.guest_call()
        endpoint = self._by_string.get(flow.string.id)
        if endpoint is None:
            raise FabricError(f"String {flow.string.id} is not bound to the fabric", "unbound")
        return endpoint

    def _log(self, event: str, message: Message, string_id: int) -> None:
        self.events.append(FabricEvent(event, message.src, message.dst, message.tag, message.seq,
                                       self.runtime.clock, string_id))

    def _bump_emulator(self, string_id: int, symbol: str) -> None:
        tapestry = self.runtime.tapestry
        weave = tapestry.weaves[self.runtime.strings[string_id].weave]
        if EMULATOR_MODULE not in weave.modules:
            return
        cell_id = weave.table.lookup(EMULATOR_MODULE, symbol)
        tapestry.write_cell(cell_id, tapestry.read_cell(cell_id) + 1)

    # -- guest primitives --------------------------------------------------------------

    def mf_rank(self) -> int:
        return self._endpoint_for_current().rank

    def mf_size(self) -> int:
        self._endpoint_for_current()
        return self.size

    def mf_send(self, dst: int, tag: int, payload) -> None:
        source = self._endpoint_for_current()
        if not isinstance(dst, int) or not 0 <= dst < self.size:
            raise FabricError(f"Invalid destination rank {dst} (size {self.size})", "invalid-rank")
        value = conform_value(payload)
        key = (source.rank, dst)
        self._seq[key] = self._seq.get(key, 0) + 1
        message = Message(source.rank, dst, int(tag), value, self._seq[key])
        self.sends += 1
        self._log("send", message, source.string)
        self._bump_emulator(source.string, "sent")
        if self.latency:
            self.runtime.call_later(self.latency, lambda: self._deliver(message))
        else:
            self._deliver(message)

    def _deliver(self, message: Message) -> None:
        endpoint = self.endpoints[message.dst]
        endpoint.mailbox.append(message)
        self._log("deliver", message, endpoint.string)
        waiter = endpoint.waiting
        if waiter is not None and (endpoint.waiting_tag is None or endpoint.waiting_tag == message.tag):
            endpoint.waiting = None
            self.runtime.wake(waiter)
        self._maybe_activate(endpoint)
        if self._barrier_arrived:
            self._check_barrier()

    def mf_recv(self, tag: Optional[int] = ANY_TAG) -> Message:
        endpoint = self._endpoint_for_current()
        flow = self.runtime.current_flow()
        if endpoint.mode == "callback":
            raise FabricError(f"Rank {endpoint.rank} is in callback mode; recv rejected", "mode-mixing")
        endpoint.mode = "recv"
        while True:
            message = self._take(endpoint, tag)
            if message is not None:
                self.receipts += 1
                self._log("recv", message, endpoint.string)
                self._bump_emulator(endpoint.string, "delivered")
                return message
            endpoint.waiting = flow
            endpoint.waiting_tag = tag
            self.runtime.block_current(f"recv:{'any' if tag is None else tag}")

    @staticmethod
    def _take(endpoint: Endpoint, tag: Optional[int]) -> Optional[Message]:
        for index, message in enumerate(endpoint.mailbox):
            if tag is None or message.tag == tag:
                del endpoint.mailbox[index]
                return message
        return None

    def mf_register_callback(self, handler: Tuple[str, str]) -> None:
        endpoint = self._endpoint_for_current()
        module, entry = handler
        tapestry = self.runtime.tapestry
        weave = tapestry.weaves[self.runtime.strings[endpoint.string].weave]
        if module not in weave.modules:
            raise ModuleNotInWeave(f"Handler module {module} has no bead in weave {weave.name}")
        if entry not in tapestry.modules[module].entries:
            raise UnknownReference(f"Module {module} has no entry {entry}", "unknown-entry")
        if endpoint.mode == "recv":
            raise FabricError(f"Rank {endpoint.rank} is in recv mode; callback rejected", "mode-mixing")
        endpoint.mode = "callback"
        endpoint.callback = CallbackRegistration(endpoint.rank, (module, entry))
        logger.debug(f"Rank {endpoint.rank} registered callback {module}.{entry}")
        self._maybe_activate(endpoint)

    def _maybe_activate(self, endpoint: Endpoint) -> None:
        registration = endpoint.callback
        if (registration is None or not registration.active or endpoint.exited
                or endpoint.in_handler or not endpoint.mailbox):
            return
        message = endpoint.mailbox.popleft()
        endpoint.in_handler = True
        self.activations += 1
        self._log("callback", message, endpoint.string)
        self._bump_emulator(endpoint.string, "delivered")
        self.runtime.start_activation(endpoint.string, registration.handler, (message,),
                                      on_exit=lambda flow: self._activation_done(endpoint))

    def _activation_done(self, endpoint: Endpoint) -> None:
        endpoint.in_handler = False
        self._maybe_activate(endpoint)
        self._check_barrier()

    def mf_barrier(self) -> None:
        endpoint = self._endpoint_for_current()
        flow = self.runtime.current_flow()
        if flow.kind != "main":
            raise FabricError("Barrier called from a callback handler", "barrier-in-handler")
        if self._barrier_broken or any(ep.exited for ep in self.endpoints):
            self._barrier_broken = True
            raise BrokenBarrier("Barrier is broken: an endpoint finished without arriving")
        self._barrier_arrived[endpoint.rank] = flow
        if self._check_barrier():
            return
        self.runtime.block_current("barrier")

    def _pending_callbacks(self) -> bool:
        return any(ep.in_handler or (ep.mode == "callback" and ep.mailbox) for ep in self.endpoints)

    def _check_barrier(self) -> bool:
        """Release the barrier when everyone arrived and callbacks drained; True if released."""
        if not self._barrier_arrived or len(self._barrier_arrived) < self.size:
            return False
        if self._pending_callbacks() or self.runtime._timers:
            return False
        current = self.runtime._current
        arrived, self._barrier_arrived = self._barrier_arrived, {}
        for flow in arrived.values():
            if flow is not current:
                self.runtime.wake(flow)
        logger.debug(f"Barrier released at virtual time {self.runtime.clock}")
        return True

    def on_string_exit(self, string_id: int) -> None:
        endpoint = self._by_string.get(string_id)
        if endpoint is None or endpoint.exited:
            return
        endpoint.exited = True
        endpoint.waiting = None
        self._barrier_arrived.pop(endpoint.rank, None)
        if self._barrier_arrived:
            self._barrier_broken = True
            arrived, self._barrier_arrived = self._barrier_arrived, {}
            logger.error(f"Rank {endpoint.rank} finished without reaching the barrier")
            for flow in arrived.values():
                self.runtime.wake(flow, BrokenBarrier(f"Rank {endpoint.rank} finished without reaching the barrier"))

    # -- inspection ----------------------------------------------------------------------

    def conservation(self) -> Dict[str, int]:
        return {"sends": self.sends, "receipts": self.receipts, "activations": self.activations,
                "undelivered": sum(len(ep.mailbox) for ep in self.endpoints)}

    def events_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["event", "src", "dst", "tag", "seq", "virtual_time", "string_id"])
        for e in self.events:
            writer.writerow([e.event, e.src, e.dst, e.tag, e.seq, e.virtual_time, e.string_id])
        return buffer.getvalue()


def fabric_init(runtime: Runtime, strings: Sequence[int], latency: int = 0) -> Fabric:
    if runtime.fabric is not None:
        raise FabricError("Fabric already initialized for this tapestry", "reinit")
    fabric = Fabric(runtime, latency)
    fabric.fabric_init(strings)
    return fabric
