"""Tapestry files: parse, serialize, instantiate, and rewire a live tapestry.

File format, one declaration per line, ``#`` starts a comment::

    module solver
    module mediator
    tuple mediator members=g,history group=M1,M2
    bead S1 solver
    bead M mediator
    weave W1 S1 M
    string s1 W1 solver.main 0 "left" [0.5,1.0]
    fabric s1 s2

Sections may appear in any order as long as every name is declared before
it is used; tuple declarations must precede the beads they cover. Module
lines name host-registered definitions; the file never carries code.
"""
import inspect
import logging
import re
from concurrent.futures import Future
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from .catalog import ModuleCatalog, default_catalog
from .core import ModuleDef, Tapestry, TupleSpaceSpec
from .errors import Diagnostic, PlanError, UnknownReference, WeaveError
from .fabric import Fabric, fabric_init
from .runtime import Runtime, RunReport, SchedulerPolicy
from .values import Value, format_value, parse_value

logger = logging.getLogger(__name__)

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_#-]*$")
_MODULE_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_TOKEN_RE = re.compile(r'"(?:[^"\\]|\\.)*"|\[[^\]]*\]|[^\s"\[]+')
_SPACE_RE = re.compile(r"\s*")


# -- plan -----------------------------------------------------------------------

@dataclass(frozen=True)
class ModuleDecl:
    name: str
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class TupleDecl:
    module: str
    members: Tuple[str, ...]
    group: Optional[Tuple[str, ...]] = None
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class BeadDecl:
    name: str
    module: str
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class WeaveDecl:
    name: str
    beads: Tuple[str, ...]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class StringDecl:
    name: str
    weave: str
    module: str
    entry: str
    args: Tuple[Value, ...] = ()
    line: int = field(default=0, compare=False)


@dataclass
class TapestryPlan:
    modules: List[ModuleDecl] = field(default_factory=list)
    tuples: List[TupleDecl] = field(default_factory=list)
    beads: List[BeadDecl] = field(default_factory=list)
    weaves: List[WeaveDecl] = field(default_factory=list)
    strings: List[StringDecl] = field(default_factory=list)
    fabric: Optional[Tuple[str, ...]] = None

    def is_empty(self) -> bool:
        return not (self.modules or self.tuples or self.beads or self.weaves or self.strings or self.fabric)


# -- parsing ----------------------------------------------------------------------------

@dataclass(frozen=True)
class _Token:
    text: str
    col: int


def _tokenize(line: str) -> List[_Token]:
    tokens = []
    pos = 0
    while True:
        pos = _SPACE_RE.match(line, pos).end()
        if pos >= len(line) or line[pos] == "#":
            return tokens
        match = _TOKEN_RE.match(line, pos)
        if match is None:
            raise ValueError(f"unexpected character {line[pos]!r}")
        tokens.append(_Token(match.group(0), pos + 1))
        pos = match.end()


class _Parser:
    def __init__(self, filename: str):
        self.filename = filename
        self.plan = TapestryPlan()
        self.diagnostics: List[Diagnostic] = []
        self.modules: Dict[str, int] = {}
        self.beads: Dict[str, str] = {}  # bead -> module
        self.weaves: Dict[str, int] = {}
        self.strings: Dict[str, int] = {}
        self.grouped: Dict[str, List[Tuple[str, frozenset]]] = {}  # module -> [(group key, members)]

    def error(self, line: int, col: int, message: str) -> None:
        self.diagnostics.append(Diagnostic(line, col, message))

    def name(self, lineno: int, token: _Token, what: str) -> Optional[str]:
        if not _NAME_RE.match(token.text):
            self.error(lineno, token.col, f"invalid {what} name {token.text!r}")
            return None
        return token.text

    def parse_line(self, lineno: int, tokens: List[_Token]) -> None:
        keyword = tokens[0].text
        handler = getattr(self, f"_parse_{keyword}", None)
        if handler is None:
            self.error(lineno, tokens[0].col, f"unknown declaration {keyword!r}")
            return
        handler(lineno, tokens)

    def _parse_module(self, lineno: int, tokens: List[_Token]) -> None:
        if len(tokens) != 2:
            self.error(lineno, tokens[0].col, "expected: module <name>")
            return
        name = tokens[1].text
        if not _MODULE_RE.match(name):
            self.error(lineno, tokens[1].col, f"invalid module name {name!r}")
        elif name in self.modules:
            self.error(lineno, tokens[1].col, f"duplicate module {name} (first declared on line {self.modules[name]})")
        else:
            self.modules[name] = lineno
            self.plan.modules.append(ModuleDecl(name, lineno))

    def _parse_tuple(self, lineno: int, tokens: List[_Token]) -> None:
        if len(tokens) < 3:
            self.error(lineno, tokens[0].col, "expected: tuple <module> members=a,b [group=B1,B2]")
            return
        module = tokens[1].text
        if module not in self.modules:
            self.error(lineno, tokens[1].col, f"unknown module {module}")
            return
        members: Optional[Tuple[str, ...]] = None
        group: Optional[Tuple[str, ...]] = None
        for token in tokens[2:]:
            key, sep, value = token.text.partition("=")
            items = tuple(v for v in value.split(",") if v)
            if not sep or not items:
                self.error(lineno, token.col, f"expected key=value list, got {token.text!r}")
                return
            if key == "members":
                members = items
            elif key == "group":
                group = items
            else:
                self.error(lineno, token.col, f"unknown tuple option {key!r}")
                return
        if members is None:
            self.error(lineno, tokens[0].col, "tuple declaration needs members=")
            return
        for bead, bead_module in self.beads.items():
            if bead_module == module and (group is None or bead in group):
                self.error(lineno, tokens[0].col,
                           f"tuple space on {module} must be declared before bead {bead}")
                return
        key = frozenset(group) if group is not None else None
        for other_key, other_members in self.grouped.get(module, []):
            overlap = other_members & set(members)
            if other_key != key and overlap:
                self.error(lineno, tokens[0].col,
                           f"members {sorted(overlap)} of {module} already shared with a different group")
                return
        self.grouped.setdefault(module, []).append((key, frozenset(members)))
        self.plan.tuples.append(TupleDecl(module, tuple(sorted(set(members))),
                                          None if group is None else tuple(sorted(set(group))), lineno))

    def _parse_bead(self, lineno: int, tokens: List[_Token]) -> None:
        if len(tokens) != 3:
            self.error(lineno, tokens[0].col, "expected: bead <name> <module>")
            return
        name = self.name(lineno, tokens[1], "bead")
        module = tokens[2].text
        if name is None:
            return
        if name in self.beads:
            self.error(lineno, tokens[1].col, f"duplicate bead {name}")
        elif module not in self.modules:
            self.error(lineno, tokens[2].col, f"unknown module {module}")
        else:
            self.beads[name] = module
            self.plan.beads.append(BeadDecl(name, module, lineno))

    def _parse_weave(self, lineno: int, tokens: List[_Token]) -> None:
        if len(tokens) < 2:
            self.error(lineno, tokens[0].col, "expected: weave <name> <bead>...")
            return
        name = self.name(lineno, tokens[1], "weave")
        if name is None:
            return
        if name in self.weaves:
            self.error(lineno, tokens[1].col, f"duplicate weave {name}")
            return
        beads = []
        seen: Dict[str, str] = {}
        ok = True
        for token in tokens[2:]:
            bead = token.text
            module = self.beads.get(bead)
            if module is None:
                self.error(lineno, token.col, f"unknown bead {bead}")
                ok = False
                continue
            if module in seen and seen[module] != bead:
                self.error(lineno, token.col,
                           f"beads {seen[module]} and {bead} both instantiate module {module}")
                ok = False
                continue
            seen[module] = bead
            if bead not in beads:
                beads.append(bead)
        if ok:
            self.weaves[name] = lineno
            self.plan.weaves.append(WeaveDecl(name, tuple(beads), lineno))

    def _parse_string(self, lineno: int, tokens: List[_Token]) -> None:
        if len(tokens) < 4:
            self.error(lineno, tokens[0].col, "expected: string <name> <weave> <module>.<entry> [args...]")
            return
        name = self.name(lineno, tokens[1], "string")
        if name is None:
            return
        if name in self.strings:
            self.error(lineno, tokens[1].col, f"duplicate string {name}")
            return
        weave = tokens[2].text
        if weave not in self.weaves:
            self.error(lineno, tokens[2].col, f"unknown weave {weave}")
            return
        module, dot, entry = tokens[3].text.partition(".")
        if not dot or not module or not entry:
            self.error(lineno, tokens[3].col, f"entry must be <module>.<entry>, got {tokens[3].text!r}")
            return
        weave_modules = {self.beads[b] for b in self._weave_beads(weave)}
        if module not in weave_modules:
            self.error(lineno, tokens[3].col, f"module {module} has no bead in weave {weave}")
            return
        args = []
        for token in tokens[4:]:
            try:
                args.append(parse_value(token.text))
            except WeaveError as e:
                self.error(lineno, token.col, e.message)
                return
        self.strings[name] = lineno
        self.plan.strings.append(StringDecl(name, weave, module, entry, tuple(args), lineno))

    def _weave_beads(self, weave: str) -> Tuple[str, ...]:
        for decl in self.plan.weaves:
            if decl.name == weave:
                return decl.beads
        return ()

    def _parse_fabric(self, lineno: int, tokens: List[_Token]) -> None:
        if self.plan.fabric is not None:
            self.error(lineno, tokens[0].col, "fabric declared twice")
            return
        names = []
        for token in tokens[1:]:
            if token.text not in self.strings:
                self.error(lineno, token.col, f"unknown string {token.text}")
                return
            if token.text in names:
                self.error(lineno, token.col, f"string {token.text} bound to the fabric twice")
                return
            names.append(token.text)
        self.plan.fabric = tuple(names)


def parse_tapestry(text: Union[bytes, str], filename: str = "<tapestry>") -> TapestryPlan:
    """Parse a tapestry file; raises PlanError carrying every diagnostic found."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as e:
            raise PlanError([Diagnostic(1, 1, f"not UTF-8 text: {e}")], filename)
    parser = _Parser(filename)
    for lineno, line in enumerate(text.splitlines(), start=1):
        try:
            tokens = _tokenize(line)
        except ValueError as e:
            parser.error(lineno, 1, str(e))
            continue
        if tokens:
            parser.parse_line(lineno, tokens)
    if parser.diagnostics:
        raise PlanError(parser.diagnostics, filename)
    return parser.plan


def load_tapestry(path: Union[str, Path]) -> TapestryPlan:
    path = Path(path)
    return parse_tapestry(path.read_bytes(), str(path))


def serialize_tapestry(plan: TapestryPlan) -> bytes:
    """Canonical text form; section order is fixed, declaration order kept within a section."""
    lines = []
    for decl in plan.modules:
        lines.append(f"module {decl.name}")
    for decl in plan.tuples:
        text = f"tuple {decl.module} members={','.join(decl.members)}"
        if decl.group is not None:
            text += f" group={','.join(decl.group)}"
        lines.append(text)
    for decl in plan.beads:
        lines.append(f"bead {decl.name} {decl.module}")
    for decl in plan.weaves:
        lines.append(" ".join(["weave", decl.name, *decl.beads]))
    for decl in plan.strings:
        parts = ["string", decl.name, decl.weave, f"{decl.module}.{decl.entry}"]
        parts.extend(format_value(a) for a in decl.args)
        lines.append(" ".join(parts))
    if plan.fabric is not None:
        lines.append(" ".join(["fabric", *plan.fabric]))
    return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""


# -- rewire commands ------------------------------------------------------------------------

@dataclass(frozen=True)
class AddBead:
    name: str
    module: str


@dataclass(frozen=True)
class AddWeave:
    name: str
    beads: Tuple[str, ...]


@dataclass(frozen=True)
class AddString:
    weave: str
    module: str
    entry: str
    args: Tuple[Value, ...] = ()
    name: Optional[str] = None


@dataclass(frozen=True)
class RemoveString:
    string: Union[int, str]


@dataclass(frozen=True)
class InsertModule:
    name: str


RewireCommand = Union[AddBead, AddWeave, AddString, RemoveString, InsertModule]


# -- live handle ----------------------------------------------------------------------------------

@dataclass
class TapestryHandle:
    """A live tapestry: its cells, runtime and optional fabric, plus the host catalog."""

    tapestry: Tapestry
    runtime: Runtime
    catalog: ModuleCatalog
    fabric: Optional[Fabric] = None
    filename: str = "<tapestry>"

    def __post_init__(self):
        self.runtime.handle = self

    # programmatic name lookups
    def bead_id(self, name: str) -> int:
        return self.tapestry.bead(name).id

    def weave_id(self, name: str) -> int:
        return self.tapestry.weave(name).id

    def string_id(self, name: str) -> int:
        return self.runtime.string_by_name(name).id

    def run(self, policy: Optional[SchedulerPolicy] = None, keep_alive: bool = False) -> RunReport:
        return self.runtime.run(policy, keep_alive)

    def apply_rewire(self, command: RewireCommand) -> Future:
        return apply_rewire(self, command)

    def describe_plan(self) -> TapestryPlan:
        """Plan reproducing the current tapestry; retired strings are left out."""
        tapestry = self.tapestry
        plan = TapestryPlan()
        plan.modules = [ModuleDecl(name) for name in tapestry.modules]
        plan.tuples = [
            TupleDecl(spec.module, tuple(sorted(spec.members)),
                      None if spec.group is None else tuple(sorted(spec.group)))
            for spec in tapestry.tuple_specs
        ]
        plan.beads = [BeadDecl(b.name, b.module) for b in tapestry.beads.values()]
        for weave in tapestry.weaves.values():
            names = tuple(tapestry.beads[bid].name for bid in sorted(weave.beads))
            plan.weaves.append(WeaveDecl(weave.name, names))
        live = [s for s in self.runtime.strings if not s.retired]
        for s in live:
            plan.strings.append(StringDecl(s.name, tapestry.weaves[s.weave].name, s.entry[0], s.entry[1], s.args))
        if self.fabric is not None:
            live_ids = {s.id for s in live}
            plan.fabric = tuple(self.runtime.strings[ep.string].name
                                for ep in self.fabric.endpoints if ep.string in live_ids)
        return plan


def instantiate(plan: TapestryPlan, catalog: Optional[ModuleCatalog] = None,
                policy: Optional[SchedulerPolicy] = None, latency: int = 0,
                name: str = "tapestry", filename: str = "<tapestry>") -> TapestryHandle:
    """Build a fresh tapestry from ``plan``.

    Everything is created in a new Tapestry, so a failure leaves nothing
    behind; the error names the offending declaration's line.
    """
    catalog = catalog if catalog is not None else default_catalog()
    tapestry = Tapestry(name)
    runtime = Runtime(tapestry, policy)
    line = 0
    try:
        for decl in plan.modules:
            line = decl.line
            tapestry.register_module(catalog.get(decl.name))
        for decl in plan.tuples:
            line = decl.line
            group = None if decl.group is None else frozenset(decl.group)
            tapestry.declare_tuple_space(TupleSpaceSpec(decl.module, frozenset(decl.members), group))
        for decl in plan.beads:
            line = decl.line
            tapestry.create_bead(decl.module, decl.name)
        for decl in plan.weaves:
            line = decl.line
            tapestry.define_weave(decl.beads, decl.name)
        for decl in plan.strings:
            line = decl.line
            runtime.spawn_string(decl.weave, (decl.module, decl.entry), decl.args, decl.name)
        fabric = None
        if plan.fabric is not None:
            line = 0
            ids = [runtime.string_by_name(s).id for s in plan.fabric]
            fabric = fabric_init(runtime, ids, latency)
    except WeaveError as e:
        logger.error(f"Failed to instantiate {filename}: {e}")
        raise PlanError([Diagnostic(line, 1, e.message)], filename, e.code) from e
    handle = TapestryHandle(tapestry, runtime, catalog, fabric, filename)
    logger.info(f"Instantiated {filename}: {len(tapestry.beads)} beads, {len(tapestry.weaves)} weaves, "
                f"{len(runtime.strings)} strings")
    return handle


def _validate(handle: TapestryHandle, command: RewireCommand) -> None:
    tapestry = handle.tapestry
    if isinstance(command, AddBead):
        if not _NAME_RE.match(command.name):
            raise WeaveError(f"Invalid bead name {command.name!r}", "invalid-name")
        tapestry.check_bead(command.module, command.name)
    elif isinstance(command, AddWeave):
        if not _NAME_RE.match(command.name):
            raise WeaveError(f"Invalid weave name {command.name!r}", "invalid-name")
        tapestry.check_weave(command.beads, command.name)
    elif isinstance(command, AddString):
        if command.name is not None and not _NAME_RE.match(command.name):
            raise WeaveError(f"Invalid string name {command.name!r}", "invalid-name")
        handle.runtime.check_spawn(command.weave, (command.module, command.entry), command.name)
    elif isinstance(command, RemoveString):
        state = (handle.runtime.string_by_name(command.string) if isinstance(command.string, str)
                 else handle.runtime.string(command.string))
        if state.retired:
            raise UnknownReference(f"String {state.id} already retired", "unknown-string")
    elif isinstance(command, InsertModule):
        definition = handle.catalog.get(command.name)
        if definition.name in tapestry.modules:
            raise WeaveError(f"Module {definition.name} already present in the tapestry", "duplicate-name")
    else:
        raise WeaveError(f"Unknown rewire command {command!r}", "parse")


def _apply_now(handle: TapestryHandle, command: RewireCommand) -> Any:
    _validate(handle, command)
    tapestry = handle.tapestry
    if isinstance(command, AddBead):
        result = tapestry.create_bead(command.module, command.name).id
    elif isinstance(command, AddWeave):
        result = tapestry.define_weave(command.beads, command.name).id
    elif isinstance(command, AddString):
        result = handle.runtime.spawn_string(command.weave, (command.module, command.entry),
                                             command.args, command.name)
    elif isinstance(command, RemoveString):
        state = (handle.runtime.string_by_name(command.string) if isinstance(command.string, str)
                 else handle.runtime.string(command.string))
        handle.runtime.remove_string(state.id)
        result = state.id
    else:
        result = tapestry.register_module(handle.catalog.get(command.name))
    logger.info(f"Applied {type(command).__name__} -> {result} (generation {tapestry.generation})")
    return result


def apply_rewire(handle: TapestryHandle, command: RewireCommand) -> Future:
    """Queue ``command`` for the next switch boundary; the future holds its result or error."""
    return handle.runtime.submit(lambda: _apply_now(handle, command))


def insert_module_runtime(handle: TapestryHandle, definition: Union[ModuleDef, str]) -> Future:
    """Make a module usable by later rewires, exactly like a statically declared one.

    A ``ModuleDef`` is first added to the handle's catalog; a name must
    already be there.
    """
    if isinstance(definition, ModuleDef):
        if definition.name in handle.tapestry.modules:
            future: Future = Future()
            future.set_exception(WeaveError(f"Module {definition.name} already present in the tapestry",
                                            "duplicate-name"))
            return future
        if handle.catalog is default_catalog():
            handle.catalog = handle.catalog.copy()
        handle.catalog.register(definition, replace=True)
        definition = definition.name
    return apply_rewire(handle, InsertModule(definition))


def build(plan_or_text: Union[TapestryPlan, bytes, str], **kwargs) -> TapestryHandle:
    """Parse when needed, then instantiate."""
    plan = plan_or_text if isinstance(plan_or_text, TapestryPlan) else parse_tapestry(plan_or_text)
    return instantiate(plan, **kwargs)


def reseed_plan(plan: TapestryPlan, seed: int, catalog: Optional[ModuleCatalog] = None) -> TapestryPlan:
    """Copy of ``plan`` whose strings get ``seed`` for any entry parameter named ``seed``."""
    catalog = catalog if catalog is not None else default_catalog()
    strings = []
    for decl in plan.strings:
        entry = catalog.get(decl.module).entries.get(decl.entry)
        params = list(inspect.signature(entry).parameters)[1:] if entry else []
        if "seed" in params and params.index("seed") < len(decl.args):
            args = list(decl.args)
            args[params.index("seed")] = seed
            decl = replace(decl, args=tuple(args))
        strings.append(decl)
    return replace(plan, strings=strings)
