"""Weave core: modules, beads, cells, weaves and tuple spaces.

A tapestry owns every cell. Beads copy their module's initial values into
fresh cells; a weave is an immutable indirection table from
(module, symbol) to cell id. Sharing a cell between namespaces happens
either by putting the same bead in several weaves or through a tuple
space that aliases selected members across beads of one module.
"""
import copy
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .errors import (
    DuplicateName,
    LateDeclaration,
    ModuleNotInWeave,
    MultiValuedSymbol,
    SchemaMismatch,
    TupleOverlap,
    UnknownReference,
    WeaveError,
)
from .values import Value, ValueSchema

logger = logging.getLogger(__name__)

EntryFunction = Callable[..., Any]
BeadRef = Union[int, str]
WeaveRef = Union[int, str]


@dataclass(frozen=True)
class Symbol:
    name: str
    schema: ValueSchema
    initial: Value


@dataclass
class ModuleDef:
    """A code unit: global symbol schema (data context) plus entry functions (code context)."""

    name: str
    symbols: Tuple[Symbol, ...] = ()
    entries: Mapping[str, EntryFunction] = field(default_factory=dict)
    reentrant: bool = False

    @classmethod
    def build(cls, name: str, symbols: Iterable[Tuple[str, str, Any]] = (),
              entries: Optional[Mapping[str, EntryFunction]] = None, reentrant: bool = False) -> "ModuleDef":
        """Convenience constructor taking ``(name, schema-text, initial)`` triples."""
        built = []
        for sym_name, schema_text, initial in symbols:
            schema = schema_text if isinstance(schema_text, ValueSchema) else ValueSchema.parse(schema_text)
            built.append(Symbol(sym_name, schema, initial))
        return cls(name, tuple(built), dict(entries or {}), reentrant)

    def symbol(self, name: str) -> Symbol:
        for sym in self.symbols:
            if sym.name == name:
                return sym
        raise UnknownReference(f"Module {self.name} declares no symbol {name}", "unknown-symbol")

    @property
    def symbol_names(self) -> Tuple[str, ...]:
        return tuple(sym.name for sym in self.symbols)

    def validate(self) -> "ModuleDef":
        """Check symbol uniqueness and initial values; returns a frozen copy."""
        if not self.name or not self.name.replace("_", "a").isalnum():
            raise WeaveError(f"Invalid module name {self.name!r}", "invalid-name")
        seen = set()
        frozen = []
        for sym in self.symbols:
            if sym.name in seen:
                raise DuplicateName(f"Module {self.name} declares symbol {sym.name} twice", "duplicate-symbol")
            seen.add(sym.name)
            try:
                initial = sym.schema.conform(sym.initial)
            except SchemaMismatch as e:
                raise SchemaMismatch(f"Malformed initial value for {self.name}.{sym.name}: {e}")
            frozen.append(Symbol(sym.name, sym.schema, initial))
        return ModuleDef(self.name, tuple(frozen), dict(self.entries), self.reentrant)


@dataclass
class Cell:
    id: int
    schema: ValueSchema
    value: Value
    owner: int
    symbol: str


@dataclass
class Bead:
    id: int
    name: str
    module: str
    cells: Dict[str, int]


@dataclass(frozen=True)
class TupleSpaceSpec:
    module: str
    members: FrozenSet[str]
    group: Optional[FrozenSet[str]] = None  # bead names; None means every bead of the module

    def covers(self, bead_name: str) -> bool:
        return self.group is None or bead_name in self.group


class IndirectionTable:
    """Per-weave slot map; the GOT analog. Built once, never mutated."""

    __slots__ = ("_slots", "lookups")

    def __init__(self, slots: Mapping[Tuple[str, str], int]):
        self._slots = dict(slots)
        self.lookups = 0

    def lookup(self, module: str, symbol: str) -> int:
        self.lookups += 1
        return self._slots[(module, symbol)]

    def items(self):
        return self._slots.items()

    def __len__(self) -> int:
        return len(self._slots)

    def __contains__(self, key) -> bool:
        return key in self._slots


@dataclass
class Weave:
    id: int
    name: str
    beads: FrozenSet[int]
    modules: Dict[str, int]  # module -> bead id
    table: IndirectionTable


class Tapestry:
    """The full composition hosted in one process."""

    def __init__(self, name: str = "tapestry"):
        self.name = name
        self.modules: Dict[str, ModuleDef] = {}
        self.beads: Dict[int, Bead] = {}
        self.weaves: Dict[int, Weave] = {}
        self.cells: Dict[int, Cell] = {}
        self.tuple_specs: List[TupleSpaceSpec] = []
        self.generation = 0
        self._bead_names: Dict[str, int] = {}
        self._weave_names: Dict[str, int] = {}
        # (spec index, member) -> canonical cell id, created by the first grouped bead
        self._canonical: Dict[Tuple[int, str], int] = {}
        self._next_cell = 0

    def _bump(self) -> None:
        self.generation += 1

    # -- modules -----------------------------------------------------------

    def register_module(self, definition: ModuleDef, replace: bool = False) -> str:
        if definition.name in self.modules and not replace:
            raise DuplicateName(f"Module {definition.name} already registered")
        frozen = definition.validate()
        self.modules[frozen.name] = frozen
        self._bump()
        logger.debug(f"Registered module {frozen.name} with {len(frozen.symbols)} symbols")
        return frozen.name

    def module(self, name: str) -> ModuleDef:
        try:
            return self.modules[name]
        except KeyError:
            raise UnknownReference(f"Unknown module {name}", "unknown-module")

    # -- tuple spaces -------------------------------------------------------

    def check_tuple_space(self, spec: TupleSpaceSpec) -> None:
        mod = self.module(spec.module)
        unknown = sorted(set(spec.members) - set(mod.symbol_names))
        if unknown:
            raise UnknownReference(f"Tuple space on {mod.name} names undeclared members {unknown}", "unknown-symbol")
        for bead in self.beads.values():
            if bead.module == spec.module and spec.covers(bead.name):
                raise LateDeclaration(f"Tuple space on {mod.name} declared after bead {bead.name} was created")
        if spec.group is not None:
            for bead_name in spec.group:
                if bead_name in self._bead_names:
                    raise LateDeclaration(f"Tuple group bead {bead_name} already instantiated")
        for other in self.tuple_specs:
            if other.module != spec.module or other.group == spec.group:
                continue
            overlap = other.members & spec.members
            if overlap:
                raise TupleOverlap(f"Members {sorted(overlap)} of {spec.module} already shared with a different group")

    def declare_tuple_space(self, spec: TupleSpaceSpec) -> int:
        spec = TupleSpaceSpec(spec.module, frozenset(spec.members),
                              None if spec.group is None else frozenset(spec.group))
        self.check_tuple_space(spec)
        self.tuple_specs.append(spec)
        self._bump()
        return len(self.tuple_specs) - 1

    def _shared_slot(self, module: str, bead_name: str, symbol: str) -> Optional[Tuple[int, str]]:
        for index, spec in enumerate(self.tuple_specs):
            if spec.module == module and symbol in spec.members and spec.covers(bead_name):
                return index, symbol
        return None

    # -- beads ----------------------------------------------------------------

    def check_bead(self, module: str, name: Optional[str] = None) -> None:
        self.module(module)
        if name is not None and name in self._bead_names:
            raise DuplicateName(f"Bead {name} already exists")

    def create_bead(self, module: str, name: Optional[str] = None) -> Bead:
        self.check_bead(module, name)
        mod = self.modules[module]
        bead_id = len(self.beads)
        if name is None:
            name = f"{module}#{bead_id}"
            if name in self._bead_names:
                raise DuplicateName(f"Bead {name} already exists")
        cells = {}
        for sym in mod.symbols:
            key = self._shared_slot(module, name, sym.name)
            if key is not None and key in self._canonical:
                cells[sym.name] = self._canonical[key]
                continue
            cell = Cell(self._next_cell, sym.schema, copy.deepcopy(sym.initial), bead_id, sym.name)
            self._next_cell += 1
            self.cells[cell.id] = cell
            cells[sym.name] = cell.id
            if key is not None:
                self._canonical[key] = cell.id
        bead = Bead(bead_id, name, module, cells)
        self.beads[bead_id] = bead
        self._bead_names[name] = bead_id
        self._bump()
        logger.debug(f"Created bead {name} of module {module}")
        return bead

    def bead(self, ref: BeadRef) -> Bead:
        if isinstance(ref, Bead):
            return ref
        bead_id = self._bead_names.get(ref) if isinstance(ref, str) else ref
        if bead_id is None or bead_id not in self.beads:
            raise UnknownReference(f"Unknown bead {ref}", "unknown-bead")
        return self.beads[bead_id]

    # -- weaves ---------------------------------------------------------------

    def check_weave(self, beads: Iterable[BeadRef], name: Optional[str] = None) -> List[Bead]:
        if name is not None and name in self._weave_names:
            raise DuplicateName(f"Weave {name} already exists")
        resolved = [self.bead(ref) for ref in beads]
        seen: Dict[str, str] = {}
        for bead in resolved:
            if bead.module in seen and seen[bead.module] != bead.name:
                raise MultiValuedSymbol(
                    f"Beads {seen[bead.module]} and {bead.name} both instantiate module {bead.module}")
            seen[bead.module] = bead.name
        return resolved

    def define_weave(self, beads: Iterable[BeadRef], name: Optional[str] = None) -> Weave:
        resolved = self.check_weave(beads, name)
        weave_id = len(self.weaves)
        if name is None:
            name = f"weave#{weave_id}"
        slots = {}
        modules = {}
        for bead in resolved:
            modules[bead.module] = bead.id
            for symbol, cell_id in bead.cells.items():
                slots[(bead.module, symbol)] = cell_id
        weave = Weave(weave_id, name, frozenset(b.id for b in resolved), modules, IndirectionTable(slots))
        self.weaves[weave_id] = weave
        self._weave_names[name] = weave_id
        self._bump()
        logger.debug(f"Defined weave {name} over beads {[b.name for b in resolved]}")
        return weave

    def weave(self, ref: WeaveRef) -> Weave:
        if isinstance(ref, Weave):
            return ref
        weave_id = self._weave_names.get(ref) if isinstance(ref, str) else ref
        if weave_id is None or weave_id not in self.weaves:
            raise UnknownReference(f"Unknown weave {ref}", "unknown-weave")
        return self.weaves[weave_id]

    # -- resolution and cells ---------------------------------------------------

    def resolve(self, weave: WeaveRef, module: str, symbol: str) -> int:
        w = self.weave(weave)
        try:
            return w.table.lookup(module, symbol)
        except KeyError:
            if module not in w.modules:
                raise ModuleNotInWeave(f"Module {module} has no bead in weave {w.name}")
            raise UnknownReference(f"Module {module} declares no symbol {symbol}", "unknown-symbol")

    def cell(self, cell_id: int) -> Cell:
        try:
            return self.cells[cell_id]
        except KeyError:
            raise UnknownReference(f"Unknown cell {cell_id}", "unknown-cell")

    def read_cell(self, cell_id: int) -> Value:
        return self.cell(cell_id).value

    def write_cell(self, cell_id: int, value: Any) -> None:
        cell = self.cell(cell_id)
        try:
            cell.value = cell.schema.conform(value)
        except SchemaMismatch as e:
            raise SchemaMismatch(f"Cannot write {cell.symbol}: {e}")

    def snapshot_namespace(self, weave: WeaveRef) -> Dict[Tuple[str, str], Value]:
        w = self.weave(weave)
        return {key: self.cells[cell_id].value for key, cell_id in sorted(w.table.items())}

    def snapshot_all(self) -> Dict[str, Dict[Tuple[str, str], Value]]:
        return {w.name: self.snapshot_namespace(w.id) for w in self.weaves.values()}

    def weaves_containing(self, bead_id: int) -> List[Weave]:
        return [w for w in self.weaves.values() if bead_id in w.beads]

    def check_invariants(self) -> None:
        """Assert every structural invariant; used by tests and the rewire fuzzer."""
        for weave in self.weaves.values():
            modules = [self.beads[b].module for b in weave.beads]
            assert len(modules) == len(set(modules)), f"weave {weave.name} holds two beads of one module"
            expected = {}
            for bead_id in weave.beads:
                bead = self.beads[bead_id]
                for symbol, cell_id in bead.cells.items():
                    expected[(bead.module, symbol)] = cell_id
            assert dict(weave.table.items()) == expected, f"weave {weave.name} table disagrees with its beads"
        for bead in self.beads.values():
            mod = self.modules[bead.module]
            assert set(bead.cells) == set(mod.symbol_names), f"bead {bead.name} is missing cells"
            for symbol, cell_id in bead.cells.items():
                cell = self.cells[cell_id]
                assert cell.symbol == symbol and self.beads[cell.owner].module == bead.module


def shared_beads(weaves: Sequence[Weave]) -> FrozenSet[int]:
    counts: Dict[int, int] = {}
    for weave in weaves:
        for bead_id in weave.beads:
            counts[bead_id] = counts.get(bead_id, 0) + 1
    return frozenset(b for b, n in counts.items() if n > 1)
