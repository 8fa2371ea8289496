"""Tests for beads, weaves, tuple spaces and symbol resolution."""
import pytest
from hypothesis import given, settings, strategies as st

from weaves.core import ModuleDef, Tapestry, TupleSpaceSpec, shared_beads
from weaves.errors import (
    DuplicateName,
    LateDeclaration,
    ModuleNotInWeave,
    MultiValuedSymbol,
    SchemaMismatch,
    TupleOverlap,
    UnknownReference,
    WeaveError,
)


class TestModules:
    def test_register_twice_is_rejected(self, tapestry, counter_def):
        with pytest.raises(DuplicateName):
            tapestry.register_module(counter_def)

    def test_duplicate_symbol(self):
        bad = ModuleDef.build("dup", [("x", "int", 0), ("x", "int", 1)])
        with pytest.raises(DuplicateName) as exc:
            Tapestry().register_module(bad)
        assert exc.value.code == "duplicate-symbol"

    def test_malformed_initial_value(self):
        bad = ModuleDef.build("bad", [("v", "real[2]", (1.0,))])
        with pytest.raises(SchemaMismatch):
            Tapestry().register_module(bad)

    def test_invalid_module_name(self):
        with pytest.raises(WeaveError) as exc:
            Tapestry().register_module(ModuleDef.build("no spaces", [("x", "int", 0)]))
        assert exc.value.code == "invalid-name"

    def test_registration_bumps_generation(self, counter_def):
        t = Tapestry()
        before = t.generation
        t.register_module(counter_def)
        assert t.generation == before + 1


class TestBeads:
    def test_beads_of_one_module_are_independent(self, tapestry):
        b1 = tapestry.create_bead("acc", "A1")
        b2 = tapestry.create_bead("acc", "A2")
        assert set(b1.cells.values()).isdisjoint(b2.cells.values())
        tapestry.write_cell(b1.cells["x"], 7)
        assert tapestry.read_cell(b2.cells["x"]) == 0

    def test_initial_values_are_copied(self, tapestry):
        b1 = tapestry.create_bead("acc", "A1")
        b2 = tapestry.create_bead("acc", "A2")
        assert tapestry.read_cell(b1.cells["vec"]) == (1.0, 2.0, 3.0)
        tapestry.write_cell(b1.cells["vec"], [4.0, 5.0, 6.0])
        assert tapestry.read_cell(b2.cells["vec"]) == (1.0, 2.0, 3.0)

    def test_duplicate_bead_name(self, tapestry):
        tapestry.create_bead("acc", "A")
        with pytest.raises(DuplicateName):
            tapestry.create_bead("store", "A")

    def test_unknown_module(self, tapestry):
        with pytest.raises(UnknownReference) as exc:
            tapestry.create_bead("nope")
        assert exc.value.code == "unknown-module"

    def test_generated_names(self, tapestry):
        bead = tapestry.create_bead("acc")
        assert bead.name == "acc#0"
        assert tapestry.bead("acc#0") is bead
        assert tapestry.bead(bead.id) is bead

    def test_schema_enforced_on_write(self, tapestry):
        bead = tapestry.create_bead("acc")
        with pytest.raises(SchemaMismatch):
            tapestry.write_cell(bead.cells["x"], "seven")
        with pytest.raises(SchemaMismatch):
            tapestry.write_cell(bead.cells["vec"], [1.0])


class TestWeaves:
    def test_shared_bead_aliases_every_symbol(self, tapestry):
        a = tapestry.create_bead("acc", "A")
        s1 = tapestry.create_bead("store", "S1")
        s2 = tapestry.create_bead("store", "S2")
        w1 = tapestry.define_weave(["A", "S1"], "W1")
        w2 = tapestry.define_weave(["A", "S2"], "W2")
        assert tapestry.resolve("W1", "acc", "x") == tapestry.resolve("W2", "acc", "x") == a.cells["x"]
        assert tapestry.resolve(w1, "store", "x") == s1.cells["x"]
        assert tapestry.resolve(w2, "store", "x") == s2.cells["x"]
        assert shared_beads([w1, w2]) == frozenset({a.id})

    def test_two_beads_of_one_module_rejected(self, tapestry):
        tapestry.create_bead("acc", "A1")
        tapestry.create_bead("acc", "A2")
        with pytest.raises(MultiValuedSymbol):
            tapestry.define_weave(["A1", "A2"], "W")
        assert "W" not in [w.name for w in tapestry.weaves.values()]

    def test_unknown_bead(self, tapestry):
        with pytest.raises(UnknownReference) as exc:
            tapestry.define_weave(["ghost"], "W")
        assert exc.value.code == "unknown-bead"

    def test_resolve_errors(self, tapestry):
        tapestry.create_bead("acc", "A")
        tapestry.define_weave(["A"], "W")
        with pytest.raises(ModuleNotInWeave):
            tapestry.resolve("W", "store", "x")
        with pytest.raises(UnknownReference) as exc:
            tapestry.resolve("W", "acc", "nope")
        assert exc.value.code == "unknown-symbol"
        with pytest.raises(UnknownReference):
            tapestry.resolve("nowhere", "acc", "x")

    def test_snapshot_and_weaves_containing(self, tapestry):
        a = tapestry.create_bead("acc", "A")
        tapestry.define_weave(["A"], "W1")
        tapestry.define_weave(["A"], "W2")
        tapestry.write_cell(a.cells["x"], 3)
        assert tapestry.snapshot_namespace("W1")[("acc", "x")] == 3
        assert set(tapestry.snapshot_all()) == {"W1", "W2"}
        assert [w.name for w in tapestry.weaves_containing(a.id)] == ["W1", "W2"]

    def test_check_invariants_holds(self, tapestry):
        tapestry.create_bead("acc", "A")
        tapestry.create_bead("store", "S")
        tapestry.define_weave(["A", "S"], "W")
        tapestry.check_invariants()


class TestTupleSpaces:
    def test_group_shares_only_members(self, tapestry):
        tapestry.declare_tuple_space(TupleSpaceSpec("acc", frozenset({"x"}), frozenset({"A1", "A2"})))
        b1 = tapestry.create_bead("acc", "A1")
        b2 = tapestry.create_bead("acc", "A2")
        b3 = tapestry.create_bead("acc", "A3")
        assert b1.cells["x"] == b2.cells["x"]
        assert b1.cells["trace"] != b2.cells["trace"]
        assert b3.cells["x"] != b1.cells["x"]
        tapestry.check_invariants()

    def test_module_wide_tuple(self, tapestry):
        tapestry.declare_tuple_space(TupleSpaceSpec("store", frozenset({"q"})))
        s1 = tapestry.create_bead("store")
        s2 = tapestry.create_bead("store")
        tapestry.write_cell(s1.cells["q"], 2.5)
        assert tapestry.read_cell(s2.cells["q"]) == 2.5
        assert tapestry.read_cell(s2.cells["x"]) == 100

    def test_late_declaration(self, tapestry):
        tapestry.create_bead("acc", "A1")
        with pytest.raises(LateDeclaration):
            tapestry.declare_tuple_space(TupleSpaceSpec("acc", frozenset({"x"})))
        with pytest.raises(LateDeclaration):
            tapestry.declare_tuple_space(TupleSpaceSpec("acc", frozenset({"x"}), frozenset({"A1", "A9"})))

    def test_overlapping_groups(self, tapestry):
        tapestry.declare_tuple_space(TupleSpaceSpec("acc", frozenset({"x"}), frozenset({"A1", "A2"})))
        with pytest.raises(TupleOverlap):
            tapestry.declare_tuple_space(TupleSpaceSpec("acc", frozenset({"x", "trace"}), frozenset({"A3"})))

    def test_undeclared_member(self, tapestry):
        with pytest.raises(UnknownReference):
            tapestry.declare_tuple_space(TupleSpaceSpec("acc", frozenset({"nope"})))


# -- namespace isolation against an explicit alias oracle ---------------------------------

MODULES = ("m0", "m1", "m2")
SYMBOLS = ("a", "b", "c")


@st.composite
def small_tapestries(draw):
    bead_modules = draw(st.lists(st.sampled_from(MODULES), min_size=1, max_size=8))
    beads = [(f"B{i}", module) for i, module in enumerate(bead_modules)]
    tuples = {}
    for module in MODULES:
        if draw(st.booleans()):
            members = frozenset(draw(st.sets(st.sampled_from(SYMBOLS), min_size=1)))
            names = [name for name, m in beads if m == module]
            group = draw(st.one_of(st.none(), st.sets(st.sampled_from(names)) if names else st.none()))
            tuples[module] = (members, frozenset(group) if group is not None else None)
    weaves = []
    for _ in range(draw(st.integers(1, 8))):
        chosen = {}
        for name, module in draw(st.lists(st.sampled_from(beads), max_size=3)):
            chosen.setdefault(module, name)
        weaves.append(tuple(sorted(chosen.values())))
    return beads, tuples, weaves


def _aliased(beads, tuples, first, second, symbol):
    if first == second:
        return True
    modules = dict(beads)
    module = modules[first]
    if modules[second] != module or module not in tuples:
        return False
    members, group = tuples[module]
    if symbol not in members:
        return False
    return group is None or (first in group and second in group)


@settings(max_examples=200, deadline=None)
@given(small_tapestries(), st.data())
def test_writes_reach_exactly_the_aliased_namespaces(setup, data):
    beads, tuples, weaves = setup
    t = Tapestry()
    for module in MODULES:
        t.register_module(ModuleDef.build(module, [(s, "int", 0) for s in SYMBOLS]))
    for module, (members, group) in tuples.items():
        t.declare_tuple_space(TupleSpaceSpec(module, members, group))
    for name, module in beads:
        t.create_bead(module, name)
    for index, members in enumerate(weaves):
        t.define_weave(members, f"W{index}")
    t.check_invariants()

    targets = [index for index, members in enumerate(weaves) if members]
    if not targets:
        return
    modules = dict(beads)
    expected = {(name, sym): 0 for name, _ in beads for sym in SYMBOLS}
    writes = data.draw(st.lists(st.tuples(st.sampled_from(targets), st.integers(0, 2), st.sampled_from(SYMBOLS)),
                                min_size=1, max_size=20))
    for value, (target, pick, symbol) in enumerate(writes, start=1):
        bead_name = weaves[target][pick % len(weaves[target])]
        t.write_cell(t.resolve(f"W{target}", modules[bead_name], symbol), value)
        for other, _ in beads:
            if _aliased(beads, tuples, bead_name, other, symbol):
                expected[(other, symbol)] = value

        snapshot = t.snapshot_all()
        for index, members in enumerate(weaves):
            for other in members:
                for sym in SYMBOLS:
                    assert snapshot[f"W{index}"][(modules[other], sym)] == expected[(other, sym)], \
                        (index, other, sym, value)
