"""Query/control endpoint for a live tapestry.

Wire format, one request per line::

    OK | ERR <code> <message>
    <payload line>*
    .

Payload lines starting with ``.`` are dot-stuffed. Query responses start
with a ``generation <n>`` payload line. Every verb is marshalled through
the runtime command queue, so a response always reflects one generation.
"""
import logging
import shlex
import socketserver
import sys
import threading
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, IO, Iterable, List, Optional, Sequence, Tuple

from .errors import MonitorError, WeaveError
from .tapestry_config import (
    AddBead,
    AddString,
    AddWeave,
    InsertModule,
    RemoveString,
    TapestryHandle,
    serialize_tapestry,
)
from .values import format_value, parse_value

logger = logging.getLogger(__name__)

TERMINATOR = "."
QUERY_VERBS = ("LIST-MODULES", "LIST-BEADS", "LIST-WEAVES", "LIST-STRINGS", "SHOW-TAPESTRY", "SNAPSHOT", "STATS")
CONTROL_VERBS = ("ADD-BEAD", "ADD-WEAVE", "ADD-STRING", "REMOVE-STRING", "INSERT-MODULE", "PAUSE", "RESUME")


@dataclass
class MonitorResponse:
    ok: bool
    payload: List[str] = field(default_factory=list)
    code: str = ""
    message: str = ""

    def status_line(self) -> str:
        if self.ok:
            return "OK"
        text = " ".join(self.message.split())
        return f"ERR {self.code} {text}".rstrip()

    def render(self) -> str:
        lines = [self.status_line()]
        lines.extend("." + line if line.startswith(".") else line for line in self.payload)
        lines.append(TERMINATOR)
        return "\n".join(lines) + "\n"

    @classmethod
    def error(cls, error: WeaveError) -> "MonitorResponse":
        return cls(False, code=error.code, message=error.message)


def read_response(lines: Iterable[str]) -> MonitorResponse:
    """Parse one response off a line iterator; raises MonitorError on a malformed response."""
    iterator = iter(lines)
    try:
        status = next(iterator).rstrip("\r\n")
    except StopIteration:
        raise MonitorError("Empty response", "parse")
    if status == "OK":
        response = MonitorResponse(True)
    elif status.startswith("ERR "):
        _, code, *rest = status.split(" ", 2)
        if not code:
            raise MonitorError(f"ERR without code: {status!r}", "parse")
        response = MonitorResponse(False, code=code, message=rest[0] if rest else "")
    else:
        raise MonitorError(f"Bad status line {status!r}", "parse")
    for raw in iterator:
        line = raw.rstrip("\r\n")
        if line == TERMINATOR:
            return response
        response.payload.append(line[1:] if line.startswith("..") else line)
    raise MonitorError("Response not terminated", "parse")


def _split_options(tokens: List[str]) -> Tuple[Dict[str, str], List[str]]:
    options: Dict[str, str] = {}
    rest: List[str] = []
    for token in tokens:
        key, sep, value = token.partition("=")
        if sep and key.isidentifier() and not rest:
            options[key] = value
        else:
            rest.append(token)
    return options, rest


class Monitor:
    """Serves the line protocol against one tapestry handle."""

    def __init__(self, handle: TapestryHandle, timeout: float = 10.0):
        self.handle = handle
        self.timeout = timeout
        self._verbs: Dict[str, Callable[[List[str]], MonitorResponse]] = {
            "LIST-MODULES": self._list_modules,
            "LIST-BEADS": self._list_beads,
            "LIST-WEAVES": self._list_weaves,
            "LIST-STRINGS": self._list_strings,
            "SHOW-TAPESTRY": self._show_tapestry,
            "SNAPSHOT": self._snapshot,
            "STATS": self._stats,
            "ADD-BEAD": self._add_bead,
            "ADD-WEAVE": self._add_weave,
            "ADD-STRING": self._add_string,
            "REMOVE-STRING": self._remove_string,
            "INSERT-MODULE": self._insert_module,
            "PAUSE": self._pause,
            "RESUME": self._resume,
        }

    @property
    def runtime(self):
        return self.handle.runtime

    @property
    def tapestry(self):
        return self.handle.tapestry

    def handle_line(self, line: str, allowed: Optional[Sequence[str]] = None) -> MonitorResponse:
        try:
            tokens = shlex.split(line, comments=False, posix=True)
        except ValueError as e:
            logger.warning(f"Malformed monitor line {line!r}: {e}")
            return MonitorResponse(False, code="parse", message=str(e))
        if not tokens:
            return MonitorResponse(False, code="parse", message="empty request")
        verb = tokens[0].upper()
        handler = self._verbs.get(verb)
        if handler is None:
            logger.warning(f"Unknown monitor verb {tokens[0]!r}")
            return MonitorResponse(False, code="unknown-verb", message=f"unknown verb {tokens[0]}")
        if allowed is not None and verb not in allowed:
            logger.warning(f"Monitor verb {verb} not accepted on this channel")
            return MonitorResponse(False, code="wrong-class", message=f"{verb} is not accepted here")
        try:
            return handler(tokens[1:])
        except WeaveError as e:
            logger.info(f"{verb} rejected: {e.code} {e}")
            return MonitorResponse.error(e)
        except FutureTimeout:
            logger.warning(f"{verb} timed out waiting for a switch boundary")
            return MonitorResponse(False, code="timeout", message="runtime did not reach a switch boundary")
        except Exception as e:
            logger.error(f"Monitor verb {verb} failed: {e}")
            return MonitorResponse(False, code="internal", message=str(e))

    def handle_query(self, line: str) -> MonitorResponse:
        """Read-only verbs; control verbs answer ERR wrong-class."""
        return self.handle_line(line, QUERY_VERBS)

    def handle_control(self, line: str) -> MonitorResponse:
        return self.handle_line(line, CONTROL_VERBS)

    def _call(self, fn):
        return self.runtime.call(fn, self.timeout)

    def _query(self, build: Callable[[], List[str]]) -> MonitorResponse:
        def view() -> List[str]:
            return [f"generation {self.tapestry.generation}"] + build()

        return MonitorResponse(True, self._call(view))

    # -- queries ----------------------------------------------------------------------

    @staticmethod
    def _no_args(verb: str, args: List[str]) -> None:
        if args:
            raise MonitorError(f"{verb} takes no arguments", "parse")

    def _list_modules(self, args: List[str]) -> MonitorResponse:
        self._no_args("LIST-MODULES", args)

        def build() -> List[str]:
            lines = []
            for mod in self.tapestry.modules.values():
                symbols = ",".join(f"{s.name}:{s.schema}" for s in mod.symbols)
                entries = ",".join(sorted(mod.entries))
                lines.append(f"{mod.name} symbols={symbols} entries={entries} reentrant={int(mod.reentrant)}")
            return lines

        return self._query(build)

    def _list_beads(self, args: List[str]) -> MonitorResponse:
        self._no_args("LIST-BEADS", args)
        return self._query(lambda: [f"{b.name} module={b.module} id={b.id}" for b in self.tapestry.beads.values()])

    def _list_weaves(self, args: List[str]) -> MonitorResponse:
        self._no_args("LIST-WEAVES", args)

        def build() -> List[str]:
            beads = self.tapestry.beads
            return [" ".join([w.name, *(beads[b].name for b in sorted(w.beads))])
                    for w in self.tapestry.weaves.values()]

        return self._query(build)

    def _list_strings(self, args: List[str]) -> MonitorResponse:
        self._no_args("LIST-STRINGS", args)

        def build() -> List[str]:
            classes = self.runtime.equivalence_classes()
            lines = []
            for s in self.runtime.strings:
                klass = "-" if s.retired else str(classes.class_of(s.id))
                weave = self.tapestry.weaves[s.weave].name
                lines.append(f"{s.id} {s.name} weave={weave} entry={s.entry[0]}.{s.entry[1]} "
                             f"status={s.describe_status()} class={klass}")
            return lines

        return self._query(build)

    def _show_tapestry(self, args: List[str]) -> MonitorResponse:
        self._no_args("SHOW-TAPESTRY", args)
        return self._query(lambda: serialize_tapestry(self.handle.describe_plan()).decode("utf-8").splitlines())

    def _snapshot(self, args: List[str]) -> MonitorResponse:
        if len(args) != 1:
            raise MonitorError("usage: SNAPSHOT <weave>", "parse")

        def build() -> List[str]:
            snapshot = self.tapestry.snapshot_namespace(args[0])
            return [f"{module}.{symbol} = {format_value(value)}" for (module, symbol), value in snapshot.items()]

        return self._query(build)

    def _stats(self, args: List[str]) -> MonitorResponse:
        self._no_args("STATS", args)

        def build() -> List[str]:
            stats = self.runtime.stats()
            lines = [f"{status} {count}" for status, count in stats.pop("by_status").items()]
            stats.pop("generation")
            lines.extend(f"{key} {str(value).lower() if isinstance(value, bool) else value}"
                         for key, value in stats.items())
            if self.handle.fabric is not None:
                lines.extend(f"fabric-{key} {value}" for key, value in self.handle.fabric.conservation().items())
            return lines

        return self._query(build)

    # -- control ---------------------------------------------------------------------------

    def _rewire(self, command) -> MonitorResponse:
        result = self.handle.apply_rewire(command).result(self.timeout)
        logger.info(f"Monitor applied {command}")
        return MonitorResponse(True, [str(result)])

    def _add_bead(self, args: List[str]) -> MonitorResponse:
        if len(args) != 2:
            raise MonitorError("usage: ADD-BEAD <name> <module>", "parse")
        return self._rewire(AddBead(args[0], args[1]))

    def _add_weave(self, args: List[str]) -> MonitorResponse:
        if len(args) < 1:
            raise MonitorError("usage: ADD-WEAVE <name> <bead>...", "parse")
        return self._rewire(AddWeave(args[0], tuple(args[1:])))

    def _add_string(self, args: List[str]) -> MonitorResponse:
        options, rest = _split_options(args)
        unknown = set(options) - {"weave", "entry", "name"}
        if unknown or "weave" not in options or "entry" not in options:
            raise MonitorError("usage: ADD-STRING weave=<w> entry=<module>.<entry> [name=<n>] [args...]", "parse")
        module, dot, entry = options["entry"].partition(".")
        if not dot or not module or not entry:
            raise MonitorError(f"entry must be <module>.<entry>, got {options['entry']!r}", "parse")
        values = tuple(_parse_arg(token) for token in rest)
        return self._rewire(AddString(options["weave"], module, entry, values, options.get("name")))

    def _remove_string(self, args: List[str]) -> MonitorResponse:
        if len(args) != 1:
            raise MonitorError("usage: REMOVE-STRING <id|name>", "parse")
        ref = int(args[0]) if args[0].isdigit() else args[0]
        return self._rewire(RemoveString(ref))

    def _insert_module(self, args: List[str]) -> MonitorResponse:
        if len(args) != 1:
            raise MonitorError("usage: INSERT-MODULE <name>", "parse")
        return self._rewire(InsertModule(args[0]))

    def _pause(self, args: List[str]) -> MonitorResponse:
        self._no_args("PAUSE", args)
        self._call(self.runtime.pause)
        return MonitorResponse(True, [f"generation {self.tapestry.generation}"])

    def _resume(self, args: List[str]) -> MonitorResponse:
        self._no_args("RESUME", args)
        self._call(self.runtime.resume)
        return MonitorResponse(True)


def _parse_arg(token: str):
    """Numbers and arrays parse as such; any other bare token is a byte string."""
    try:
        return parse_value(token)
    except WeaveError:
        return token.encode("utf-8")


# -- transports ------------------------------------------------------------------------------

def serve_stream(monitor: Monitor, reader: IO[str], writer: IO[str]) -> int:
    """Answer requests until EOF or QUIT; returns the number of requests served."""
    served = 0
    for raw in reader:
        line = raw.strip()
        if not line:
            continue
        if line.upper() == "QUIT":
            writer.write(MonitorResponse(True).render())
            writer.flush()
            break
        writer.write(monitor.handle_line(line).render())
        writer.flush()
        served += 1
    return served


class _MonitorRequestHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        reader = (raw.decode("utf-8", errors="replace") for raw in self.rfile)
        writer = _Utf8Writer(self.wfile)
        served = serve_stream(self.server.monitor, reader, writer)
        logger.debug(f"Socket client served {served} requests")


class _Utf8Writer:
    def __init__(self, raw):
        self._raw = raw

    def write(self, text: str) -> None:
        self._raw.write(text.encode("utf-8"))

    def flush(self) -> None:
        self._raw.flush()


class MonitorService:
    """A transport running on a background thread."""

    def __init__(self, transport: str, thread: threading.Thread, stop: Callable[[], None],
                 port: Optional[int] = None):
        self.transport = transport
        self.port = port
        self.thread = thread
        self._stop = stop

    def shutdown(self) -> None:
        self._stop()
        self.thread.join(timeout=5)
        logger.info(f"Monitor on {self.transport} stopped")


def serve_socket(monitor: Monitor, path: str) -> MonitorService:
    if not hasattr(socketserver, "UnixStreamServer"):
        raise WeaveError("Local sockets are not supported on this platform", "transport")
    socket_path = Path(path)
    if socket_path.exists():
        socket_path.unlink()
    try:
        server = socketserver.UnixStreamServer(str(socket_path), _MonitorRequestHandler)
    except OSError as e:
        raise WeaveError(f"Cannot bind monitor socket {path}: {e}", "transport")
    server.monitor = monitor
    thread = threading.Thread(target=server.serve_forever, name="monitor-socket", daemon=True)
    thread.start()
    logger.info(f"Monitor listening on {path}")

    def stop() -> None:
        server.shutdown()
        server.server_close()
        if socket_path.exists():
            socket_path.unlink()

    return MonitorService(path, thread, stop)


def serve_http(monitor: Monitor, host: str, port: int) -> MonitorService:
    from werkzeug.serving import make_server

    from . import create_app

    if host not in ("127.0.0.1", "localhost", "::1"):
        raise WeaveError(f"HTTP monitor binds to loopback only, not {host}", "transport")
    try:
        server = make_server(host, port, create_app(monitor), threaded=True)
    except OSError as e:
        raise WeaveError(f"Cannot bind HTTP monitor on {host}:{port}: {e}", "transport")
    thread = threading.Thread(target=server.serve_forever, name="monitor-http", daemon=True)
    thread.start()
    logger.info(f"HTTP monitor listening on http://{host}:{server.server_port}")
    return MonitorService(f"http:{host}:{server.server_port}", thread, server.shutdown, server.server_port)


def serve_stdio(monitor: Monitor, reader: Optional[IO[str]] = None,
                writer: Optional[IO[str]] = None) -> MonitorService:
    reader = reader or sys.stdin
    writer = writer or sys.stdout
    thread = threading.Thread(target=serve_stream, args=(monitor, reader, writer), name="monitor-stdio", daemon=True)
    thread.start()
    logger.info("Monitor serving standard input")
    return MonitorService("stdio", thread, lambda: None)


def serve(monitor: Monitor, transport: str) -> MonitorService:
    """Start ``transport`` (``stdio``, ``http:<host>:<port>`` or a socket path) in the background."""
    if transport == "stdio":
        return serve_stdio(monitor)
    if transport.startswith("http:"):
        _, host, port = transport.rsplit(":", 2) if transport.count(":") >= 2 else (None, "127.0.0.1", transport[5:])
        try:
            return serve_http(monitor, host, int(port))
        except ValueError:
            raise WeaveError(f"Bad HTTP monitor address {transport!r}", "transport")
    return serve_socket(monitor, transport)
