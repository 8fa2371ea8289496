"""Host-side registry of module definitions.

Tapestry files and the monitor's INSERT-MODULE name modules; the code
itself always comes from a catalog, never from the wire.
"""
import logging
import threading
from typing import Dict, Iterable, List, Optional

from .core import ModuleDef, Tapestry
from .errors import DuplicateName, UnknownReference

logger = logging.getLogger(__name__)


class ModuleCatalog:
    def __init__(self, definitions: Iterable[ModuleDef] = ()):
        self._defs: Dict[str, ModuleDef] = {}
        self._lock = threading.Lock()
        for definition in definitions:
            self.register(definition)

    def register(self, definition: ModuleDef, replace: bool = False) -> ModuleDef:
        frozen = definition.validate()
        with self._lock:
            if frozen.name in self._defs and not replace:
                raise DuplicateName(f"Module {frozen.name} already in catalog")
            self._defs[frozen.name] = frozen
        return frozen

    def get(self, name: str) -> ModuleDef:
        try:
            return self._defs[name]
        except KeyError:
            raise UnknownReference(f"Module {name} is not registered with the host", "unknown-module")

    def names(self) -> List[str]:
        return sorted(self._defs)

    def __contains__(self, name: str) -> bool:
        return name in self._defs

    def install(self, tapestry: Tapestry, names: Iterable[str]) -> None:
        for name in names:
            tapestry.register_module(self.get(name))

    def copy(self) -> "ModuleCatalog":
        return ModuleCatalog(self._defs.values())


# -- small utility modules ---------------------------------------------------------

def emulator_module() -> ModuleDef:
    """Traffic counters kept by the message fabric in the shared emulator bead."""
    return ModuleDef.build("emulator", [("sent", "int", 0), ("delivered", "int", 0)])


def _probe_watch(ctx, module: bytes, symbol: bytes, rounds: int) -> None:
    target_module = module.decode("latin-1")
    target_symbol = symbol.decode("latin-1")
    for _ in range(rounds):
        value = ctx.get(target_symbol, target_module)
        ctx.set("seen", ctx.get("seen") + 1)
        if isinstance(value, int):
            ctx.set("last", value)
        ctx.yield_current()


def _probe_trace(ctx, rounds: int) -> None:
    for _ in range(rounds):
        ctx.set("seen", ctx.get("seen") + 1)
        ctx.yield_current()


def probe_module() -> ModuleDef:
    """Observer inserted into a live tapestry; reads one symbol of its own weave."""
    return ModuleDef.build(
        "probe",
        [("seen", "int", 0), ("last", "int", 0)],
        {"watch": _probe_watch, "trace": _probe_trace},
    )


def build_default_catalog() -> ModuleCatalog:
    from .bench import delay_module
    from .collab import mediator_module, solver_module
    from .sullivan import counter_module
    from .sweep import sweep_module

    return ModuleCatalog([
        counter_module(),
        emulator_module(),
        sweep_module(),
        solver_module(),
        mediator_module(),
        probe_module(),
        delay_module(),
    ])


_default: Optional[ModuleCatalog] = None
_default_lock = threading.Lock()


def default_catalog() -> ModuleCatalog:
    global _default
    with _default_lock:
        if _default is None:
            _default = build_default_catalog()
            logger.debug(f"Default catalog holds {_default.names()}")
        return _default
