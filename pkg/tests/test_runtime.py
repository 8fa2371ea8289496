"""Tests for strings, scheduling, equivalence classes and the command queue."""
import threading
import time

import pytest
from hypothesis import given, settings, strategies as st

from weaves.core import ModuleDef, Tapestry
from weaves.errors import RuntimeMisuse, WeaveError
from weaves.fabric import fabric_init
from weaves.runtime import Runtime, SchedulerPolicy, Status


def _tagger(ctx, tag, rounds):
    for _ in range(rounds):
        ctx.set("trace", ctx.get("trace") + bytes([tag]))
        ctx.yield_current()


def _busy(ctx, rounds):
    for _ in range(rounds):
        ctx.set("n", ctx.get("n") + 1)


def _caller(ctx, rounds):
    ctx.call("acc", "spin", rounds)
    ctx.set("n", ctx.get("x", "acc"))


def _bad_call(ctx):
    ctx.call("store", "spin", 1)


def _bad_symbol(ctx):
    ctx.get("missing")


def _who(ctx):
    ctx.set("n", ctx.current_string_id())


def _make(reentrant=False):
    t = Tapestry("rt")
    t.register_module(ModuleDef.build(
        "acc", [("x", "int", 0), ("trace", "bytes", b"")],
        {"spin": lambda ctx, rounds: [ctx.set("x", ctx.get("x") + 1) for _ in range(rounds)]}))
    t.register_module(ModuleDef.build(
        "work", [("n", "int", 0), ("trace", "bytes", b"")],
        {"tag": _tagger, "busy": _busy, "caller": _caller, "bad_call": _bad_call,
         "bad_symbol": _bad_symbol, "who": _who},
        reentrant=reentrant))
    t.register_module(ModuleDef.build("store", [("x", "int", 0)]))
    return t


@pytest.fixture
def shared_pair():
    """Two weaves sharing one ``work`` bead, each with a private ``acc`` bead."""
    t = _make()
    t.create_bead("work", "K")
    t.create_bead("acc", "A1")
    t.create_bead("acc", "A2")
    t.define_weave(["K", "A1"], "W1")
    t.define_weave(["K", "A2"], "W2")
    return t


class TestSchedulerPolicy:
    def test_parse(self):
        assert SchedulerPolicy.parse("cooperative") == SchedulerPolicy()
        policy = SchedulerPolicy.parse("preempt:7")
        assert policy.preemptive and policy.quantum == 7
        assert str(policy) == "preempt:7"
        assert str(SchedulerPolicy.parse("")) == "cooperative"

    @pytest.mark.parametrize("text", ["preempt:0", "preempt:x", "round-robin"])
    def test_bad_policy(self, text):
        with pytest.raises(WeaveError) as exc:
            SchedulerPolicy.parse(text)
        assert exc.value.code == "bad-policy"


class TestCooperative:
    def test_fifo_interleaving_on_shared_bead(self, shared_pair):
        runtime = Runtime(shared_pair)
        runtime.spawn_string("W1", ("work", "tag"), [1, 3])
        runtime.spawn_string("W2", ("work", "tag"), [2, 3])
        report = runtime.run()
        trace = shared_pair.read_cell(shared_pair.resolve("W1", "work", "trace"))
        assert trace == bytes([1, 2, 1, 2, 1, 2])
        assert report.finished() == [0, 1]
        assert not report.deadlock and not report.errors

    def test_private_namespaces(self):
        t = _make()
        for i in range(3):
            t.create_bead("work", f"K{i}")
            t.define_weave([f"K{i}"], f"W{i}")
        runtime = Runtime(t)
        for i in range(3):
            runtime.spawn_string(f"W{i}", ("work", "busy"), [10 + i])
        runtime.run()
        assert [t.read_cell(t.resolve(f"W{i}", "work", "n")) for i in range(3)] == [10, 11, 12]

    def test_call_switches_default_module(self, shared_pair):
        runtime = Runtime(shared_pair)
        runtime.spawn_string("W1", ("work", "caller"), [4])
        runtime.run()
        assert shared_pair.read_cell(shared_pair.resolve("W1", "acc", "x")) == 4
        assert shared_pair.read_cell(shared_pair.resolve("W1", "work", "n")) == 4
        assert shared_pair.read_cell(shared_pair.resolve("W2", "acc", "x")) == 0

    def test_current_string_id(self):
        t = _make()
        t.create_bead("work", "K")
        t.define_weave(["K"], "W")
        runtime = Runtime(t)
        runtime.spawn_string("W", ("work", "busy"), [0])
        runtime.spawn_string("W", ("work", "who"))
        runtime.run()
        assert t.read_cell(t.resolve("W", "work", "n")) == 1

    def test_guest_failures_are_isolated(self, shared_pair):
        runtime = Runtime(shared_pair)
        bad = runtime.spawn_string("W1", ("work", "bad_call"))
        missing = runtime.spawn_string("W1", ("work", "bad_symbol"))
        good = runtime.spawn_string("W2", ("work", "busy"), [2])
        report = runtime.run()
        assert runtime.string(bad).describe_status() == "failed:module-not-in-weave"
        assert runtime.string(missing).describe_status() == "failed:unknown-symbol"
        assert runtime.string(good).describe_status() == "finished"
        assert len(report.errors) == 2

    def test_guest_exception_status(self):
        t = _make()
        t.register_module(ModuleDef.build("boom", [], {"main": lambda ctx: 1 / 0}))
        t.create_bead("boom", "B")
        t.define_weave(["B"], "W")
        runtime = Runtime(t)
        sid = runtime.spawn_string("W", ("boom", "main"))
        report = runtime.run()
        assert runtime.string(sid).exit_status == "failed:guest-exception"
        assert report.status_counts() == {"failed": 1}
        assert "ZeroDivisionError" in report.errors[0]

    def test_spawn_validation(self, shared_pair):
        runtime = Runtime(shared_pair)
        with pytest.raises(WeaveError) as exc:
            runtime.spawn_string("W1", ("store", "spin"))
        assert exc.value.code == "module-not-in-weave"
        with pytest.raises(WeaveError) as exc:
            runtime.spawn_string("W1", ("work", "nope"))
        assert exc.value.code == "unknown-entry"
        runtime.spawn_string("W1", ("work", "busy"), [1], name="s")
        with pytest.raises(WeaveError) as exc:
            runtime.spawn_string("W2", ("work", "busy"), [1], name="s")
        assert exc.value.code == "duplicate-name"

    def test_guest_api_outside_a_string(self, shared_pair):
        runtime = Runtime(shared_pair)
        with pytest.raises(RuntimeMisuse):
            runtime.ctx_get("n", "work")

    def test_remove_before_run(self, shared_pair):
        runtime = Runtime(shared_pair)
        sid = runtime.spawn_string("W1", ("work", "busy"), [5])
        runtime.remove_string(sid)
        report = runtime.run()
        assert runtime.string(sid).retired
        assert report.strings[0].status == "removed"
        assert shared_pair.read_cell(shared_pair.resolve("W1", "work", "n")) == 0

    def test_report_csv(self, shared_pair):
        runtime = Runtime(shared_pair)
        runtime.spawn_string("W1", ("work", "tag"), [1, 2])
        report = runtime.run()
        lines = report.to_csv().splitlines()
        assert lines[0] == "string_id,status,switches,guest_calls,wall_ms"
        # a lone string keeps the processor across yields
        assert lines[1].startswith("0,finished,1,6,")

    def test_timers_advance_virtual_clock(self, shared_pair):
        runtime = Runtime(shared_pair)
        fired = []
        runtime.call_later(5, lambda: fired.append(runtime.clock))
        report = runtime.run()
        assert fired == [5]
        assert report.virtual_time == 5


class TestPreemption:
    def _dispatch_order(self, tapestry, policy):
        runtime = Runtime(tapestry, SchedulerPolicy.parse(policy))
        order = []
        runtime.switch_hooks.append(lambda previous, flow: order.append(flow.string.id))
        runtime.spawn_string("W1", ("work", "busy"), [20])
        runtime.spawn_string("W2", ("work", "busy"), [20])
        runtime.run()
        return order, runtime

    def test_no_switch_inside_shared_nonreentrant_bead(self, shared_pair):
        order, runtime = self._dispatch_order(shared_pair, "preempt:1")
        assert order == [0, 1]
        assert shared_pair.read_cell(shared_pair.resolve("W1", "work", "n")) == 40

    def test_reentrant_module_may_interleave(self):
        t = _make(reentrant=True)
        t.create_bead("work", "K")
        t.define_weave(["K"], "W1")
        t.define_weave(["K"], "W2")
        order, _ = self._dispatch_order(t, "preempt:1")
        assert len(order) > 2
        assert order[:2] == [0, 1]

    def test_separate_classes_interleave(self):
        t = _make()
        t.create_bead("work", "K1")
        t.create_bead("work", "K2")
        t.define_weave(["K1"], "W1")
        t.define_weave(["K2"], "W2")
        order, runtime = self._dispatch_order(t, "preempt:5")
        assert len(order) > 2
        assert [t.read_cell(t.resolve(w, "work", "n")) for w in ("W1", "W2")] == [20, 20]

    def test_cooperative_never_preempts(self):
        t = _make()
        t.create_bead("work", "K1")
        t.create_bead("work", "K2")
        t.define_weave(["K1"], "W1")
        t.define_weave(["K2"], "W2")
        order, _ = self._dispatch_order(t, "cooperative")
        assert order == [0, 1]


class TestEquivalenceClasses:
    def test_classes_follow_shared_beads(self, shared_pair):
        shared_pair.create_bead("store", "S")
        shared_pair.create_bead("work", "K3")
        shared_pair.define_weave(["K3", "S"], "W3")
        runtime = Runtime(shared_pair)
        a = runtime.spawn_string("W1", ("work", "busy"), [1])
        b = runtime.spawn_string("W2", ("work", "busy"), [1])
        c = runtime.spawn_string("W3", ("work", "busy"), [1])
        classes = runtime.equivalence_classes()
        assert classes.as_sets() == [frozenset({a, b}), frozenset({c})]
        assert classes.class_of(a) == classes.class_of(b) != classes.class_of(c)
        assert runtime.shared_beads() == frozenset({shared_pair.bead("K").id})

    def test_classes_recomputed_after_removal(self, shared_pair):
        runtime = Runtime(shared_pair)
        a = runtime.spawn_string("W1", ("work", "busy"), [1])
        b = runtime.spawn_string("W2", ("work", "busy"), [1])
        first = runtime.equivalence_classes()
        assert first.as_sets() == [frozenset({a, b})]
        runtime.remove_string(a)
        assert runtime.equivalence_classes().as_sets() == [frozenset({b})]
        assert runtime.shared_beads() == frozenset()


class TestCommands:
    def test_submit_when_idle_runs_immediately(self, shared_pair):
        runtime = Runtime(shared_pair)
        future = runtime.submit(lambda: shared_pair.generation)
        assert future.done() and future.result() == shared_pair.generation

    def test_submit_errors_travel_in_the_future(self, shared_pair):
        runtime = Runtime(shared_pair)
        future = runtime.submit(lambda: shared_pair.bead("ghost"))
        with pytest.raises(WeaveError):
            future.result()

    def test_pause_resume_state_errors(self, shared_pair):
        runtime = Runtime(shared_pair)
        with pytest.raises(WeaveError) as exc:
            runtime.resume()
        assert exc.value.code == "not-paused"
        runtime.pause()
        with pytest.raises(WeaveError) as exc:
            runtime.pause()
        assert exc.value.code == "already-paused"
        runtime.resume()
        assert not runtime.paused

    def test_commands_drain_between_switches(self, shared_pair):
        runtime = Runtime(shared_pair)
        futures = []

        def snoop(previous, flow):
            if previous is not None and not futures:
                futures.append(runtime.submit(lambda: shared_pair.read_cell(
                    shared_pair.resolve("W1", "work", "trace"))))

        runtime.switch_hooks.append(snoop)
        runtime.spawn_string("W1", ("work", "tag"), [1, 2])
        runtime.spawn_string("W2", ("work", "tag"), [2, 2])
        runtime.run()
        # queued while the second string was dispatched, answered at the next boundary
        assert futures[0].result(timeout=1) == bytes([1, 2])

    def test_keep_alive_serves_other_threads(self, shared_pair):
        runtime = Runtime(shared_pair)
        runtime.spawn_string("W1", ("work", "busy"), [3])
        reports = []
        thread = threading.Thread(target=lambda: reports.append(runtime.run(keep_alive=True)), daemon=True)
        thread.start()
        deadline = time.monotonic() + 5
        while not runtime.running and time.monotonic() < deadline:
            time.sleep(0.01)
        try:
            value = runtime.call(lambda: shared_pair.read_cell(shared_pair.resolve("W1", "work", "n")), timeout=5)
            assert value in (0, 3)
            stats = runtime.call(runtime.stats, timeout=5)
            assert stats["strings"] == 1
        finally:
            runtime.shutdown()
            thread.join(timeout=5)
        assert not thread.is_alive()
        assert reports[0].finished() == [0]
        assert runtime.string(0).status == Status.FINISHED

    def test_run_is_not_reentrant(self, shared_pair):
        runtime = Runtime(shared_pair)
        seen = []
        shared_pair.register_module(ModuleDef.build("nest", [], {"main": lambda ctx: seen.append(
            pytest.raises(RuntimeMisuse, runtime.run))}))
        shared_pair.create_bead("nest", "N")
        shared_pair.define_weave(["N"], "WN")
        runtime.spawn_string("WN", ("nest", "main"))
        report = runtime.run()
        assert seen and not report.errors


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["cooperative", "preempt:1", "preempt:2", "preempt:7"]),
       st.lists(st.integers(0, 25), min_size=1, max_size=4))
def test_preemption_matches_serial_execution(policy, rounds):
    t = _make()
    t.create_bead("work", "K")
    for i in range(len(rounds)):
        t.define_weave(["K"], f"W{i}")
    runtime = Runtime(t, SchedulerPolicy.parse(policy))
    for i, n in enumerate(rounds):
        runtime.spawn_string(f"W{i}", ("work", "busy"), [n])
    report = runtime.run()
    assert report.finished() == list(range(len(rounds)))
    assert t.read_cell(t.resolve("W0", "work", "n")) == sum(rounds)


def _hold(ctx, rounds):
    ctx.set("inside", ctx.get("inside") + 1)
    ctx.set("peak", max(ctx.get("peak"), ctx.get("inside")))
    for _ in range(rounds):
        ctx.set("work", ctx.get("work") + 1)
    ctx.set("inside", ctx.get("inside") - 1)


def _wait_inside(ctx):
    ctx.mf_recv()


def _visit(ctx, rounds):
    for _ in range(rounds):
        ctx.set("n", ctx.get("n") + 1)
    ctx.call("med", "hold", rounds)
    ctx.set("n", ctx.get("n") + 1)


def _spin_driver(ctx, rounds):
    for _ in range(rounds):
        ctx.set("n", ctx.get("n") + 1)


def _three_classes():
    """W1 and W2 share bead M; W3 is a class of its own."""
    t = Tapestry("classes")
    t.register_module(ModuleDef.build("driver", [("n", "int", 0)], {"visit": _visit, "spin": _spin_driver}))
    t.register_module(ModuleDef.build(
        "med", [("inside", "int", 0), ("peak", "int", 0), ("work", "int", 0)],
        {"hold": _hold, "wait": _wait_inside}))
    for name in ("D1", "D2", "D3"):
        t.create_bead("driver", name)
    t.create_bead("med", "M")
    t.define_weave(["D1", "M"], "W1")
    t.define_weave(["D2", "M"], "W2")
    t.define_weave(["D3"], "W3")
    return t


class TestClassRule:
    @pytest.mark.parametrize("policy", ["preempt:1", "preempt:2", "preempt:3"])
    def test_one_string_per_class_inside_a_shared_bead(self, policy):
        t = _three_classes()
        runtime = Runtime(t, SchedulerPolicy.parse(policy))
        inside = []
        runtime.switch_hooks.append(lambda previous, flow: inside.append(
            sum(1 for f in runtime.flows.values()
                if f.glet is not None and not f.finished and runtime.in_shared_nonreentrant(f))))
        runtime.spawn_string("W1", ("driver", "visit"), [5])
        runtime.spawn_string("W2", ("driver", "visit"), [5])
        runtime.spawn_string("W3", ("driver", "spin"), [40])
        report = runtime.run()
        assert report.finished() == [0, 1, 2]
        assert max(inside) == 1
        assert t.read_cell(t.resolve("W1", "med", "peak")) == 1
        assert t.read_cell(t.resolve("W2", "med", "work")) == 10
        assert [sorted(c) for c in runtime.equivalence_classes().as_sets()] == [[0, 1], [2]]

    def test_blocked_holder_keeps_its_class_out(self):
        t = _three_classes()
        runtime = Runtime(t, SchedulerPolicy.parse("preempt:1"))
        runtime.spawn_string("W1", ("med", "wait"))
        runtime.spawn_string("W2", ("driver", "visit"), [2])
        runtime.spawn_string("W3", ("driver", "spin"), [4])
        fabric_init(runtime, [0, 1, 2])
        report = runtime.run()
        assert report.finished() == [2]
        assert report.deadlocked == [0, 1]
        assert t.read_cell(t.resolve("W2", "med", "work")) == 0

    def test_cooperative_runs_each_visit_whole(self):
        t = _three_classes()
        runtime = Runtime(t)
        runtime.spawn_string("W1", ("driver", "visit"), [3])
        runtime.spawn_string("W2", ("driver", "visit"), [3])
        assert runtime.run().finished() == [0, 1]
        assert t.read_cell(t.resolve("W1", "med", "peak")) == 1


def _touch(ctx, rounds):
    for _ in range(rounds):
        ctx.set("v0", ctx.get("v0") + 1)
        ctx.yield_current()


def _wide(n_weaves, n_symbols):
    t = Tapestry("wide")
    t.register_module(ModuleDef.build("wide", [(f"v{i}", "int", 0) for i in range(n_symbols)], {"touch": _touch}))
    for i in range(n_weaves):
        t.create_bead("wide", f"B{i}")
        t.define_weave([f"B{i}"], f"W{i}")
    return t


class TestSwitchInstrumentation:
    @pytest.mark.parametrize("n_weaves,n_symbols", [(8, 4), (8, 64), (256, 4), (256, 64)])
    def test_one_lookup_per_access(self, n_weaves, n_symbols):
        t = _wide(n_weaves, n_symbols)
        runtime = Runtime(t)
        for i in range(n_weaves):
            runtime.spawn_string(f"W{i}", ("wide", "touch"), [3])
        runtime.run()
        assert {w.table.lookups for w in t.weaves.values()} == {6}

    def test_lookups_follow_the_running_string(self, shared_pair):
        runtime = Runtime(shared_pair, SchedulerPolicy.parse("preempt:2"))
        weaves = list(shared_pair.weaves.values())
        last = {}
        strays = []

        def hook(previous, flow):
            now = {w.name: w.table.lookups for w in weaves}
            if last and previous is not None:
                own = shared_pair.weaves[previous.string.weave].name
                strays.extend(name for name in now if now[name] != last[name] and name != own)
            last.clear()
            last.update(now)

        runtime.switch_hooks.append(hook)
        runtime.spawn_string("W1", ("acc", "spin"), [6])
        runtime.spawn_string("W2", ("acc", "spin"), [6])
        runtime.run()
        assert strays == []
        assert shared_pair.read_cell(shared_pair.resolve("W2", "acc", "x")) == 6

    def test_switches_write_no_cells(self, shared_pair, monkeypatch):
        runtime = Runtime(shared_pair, SchedulerPolicy.parse("preempt:1"))
        original = shared_pair.write_cell
        outside = []

        def write_cell(cell_id, value):
            try:
                runtime.current_flow()
            except RuntimeMisuse:
                outside.append(cell_id)
            return original(cell_id, value)

        monkeypatch.setattr(shared_pair, "write_cell", write_cell)
        snapshots = []
        runtime.switch_hooks.append(lambda previous, flow: snapshots.append(shared_pair.snapshot_all()))
        runtime.spawn_string("W1", ("work", "tag"), [1, 3])
        runtime.spawn_string("W2", ("work", "tag"), [2, 3])
        runtime.run()
        assert outside == []
        assert len(snapshots) >= 2
        assert shared_pair.read_cell(shared_pair.resolve("W1", "work", "trace")) == bytes([1, 1, 1, 2, 2, 2])
