import os

import pytest

from weaves.catalog import ModuleCatalog, build_default_catalog
from weaves.core import ModuleDef, Tapestry


def pytest_collection_modifyitems(config, items):
    if os.getenv("WEAVES_SLOW_TESTS") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set WEAVES_SLOW_TESTS=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def _bump(ctx, rounds):
    for _ in range(rounds):
        ctx.set("x", ctx.get("x") + 1)
        ctx.yield_current()


def _record(ctx, tag):
    """Append ``tag`` to the shared trace, one guest call per element."""
    ctx.set("trace", ctx.get("trace") + bytes([tag]))


def _spin(ctx, rounds):
    for _ in range(rounds):
        ctx.set("x", ctx.get("x") + 1)


def _fail(ctx):
    raise ValueError("guest blew up")


def _read_into(ctx, module, symbol):
    ctx.set("x", ctx.get(symbol.decode(), module.decode()))


@pytest.fixture
def counter_def():
    """Module ``acc`` with one int and one byte-string global."""
    return ModuleDef.build(
        "acc",
        [("x", "int", 0), ("trace", "bytes", b""), ("vec", "real[3]", (1.0, 2.0, 3.0))],
        {"bump": _bump, "record": _record, "spin": _spin, "fail": _fail, "read_into": _read_into},
    )


@pytest.fixture
def store_def():
    return ModuleDef.build("store", [("x", "int", 100), ("q", "real", 0.5)], {"spin": _spin})


@pytest.fixture
def tapestry(counter_def, store_def):
    t = Tapestry("test")
    t.register_module(counter_def)
    t.register_module(store_def)
    return t


@pytest.fixture
def catalog(counter_def, store_def):
    cat = build_default_catalog()
    cat.register(counter_def)
    cat.register(store_def)
    return cat


@pytest.fixture
def empty_catalog():
    return ModuleCatalog()
