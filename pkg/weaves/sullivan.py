"""Asynchronous hello-world counting over the message fabric.

Every rank runs ``rounds`` rounds; each round it draws a destination n1 and
a count n2 and sends n2 "hello, world" messages to n1. Receivers count
arrivals in a callback whose state lives in a per-weave ``counter`` bead,
so counts stay independent for each instantiation of the program.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .catalog import ModuleCatalog
from .core import ModuleDef
from .errors import WeaveError
from .rng import SplitMix64
from .runtime import RunReport, SchedulerPolicy
from .tapestry_config import (
    BeadDecl,
    ModuleDecl,
    StringDecl,
    TapestryHandle,
    TapestryPlan,
    WeaveDecl,
    instantiate,
)

logger = logging.getLogger(__name__)

HELLO = b"hello, world"
HELLO_TAG = 7
SENTINEL_BASE = 1_000
SEED_STRIDE = 1_000_003


def rank_rng(seed: int, rank: int) -> SplitMix64:
    return SplitMix64(seed * SEED_STRIDE + rank)


# -- guest code -----------------------------------------------------------------

def counter_main(ctx, seed: int, rounds: int, n2_max: int) -> None:
    rank = ctx.mf_rank()
    size = ctx.mf_size()
    ctx.set("sentinel", SENTINEL_BASE + rank)
    ctx.mf_register_callback("counter", "on_message")
    rng = rank_rng(seed, rank)
    for _ in range(rounds):
        n1 = rng.uniform_int(0, size - 1)
        n2 = rng.uniform_int(0, n2_max)
        for _ in range(n2):
            ctx.mf_send(n1, HELLO_TAG, HELLO)
        ctx.set("sent", ctx.get("sent") + n2)
        ctx.yield_current()
    ctx.mf_barrier()


def counter_on_message(ctx, message) -> None:
    if message.payload == HELLO:
        ctx.set("count", ctx.get("count") + 1)
    # the handler must see the receiver's namespace
    if ctx.get("sentinel") == SENTINEL_BASE + ctx.mf_rank():
        ctx.set("sentinel_hits", ctx.get("sentinel_hits") + 1)
    else:
        ctx.set("sentinel_misses", ctx.get("sentinel_misses") + 1)


def counter_module() -> ModuleDef:
    return ModuleDef.build(
        "counter",
        [
            ("count", "int", 0),
            ("sent", "int", 0),
            ("sentinel", "int", 0),
            ("sentinel_hits", "int", 0),
            ("sentinel_misses", "int", 0),
        ],
        {"main": counter_main, "on_message": counter_on_message},
    )


# -- host side ------------------------------------------------------------------------

@dataclass(frozen=True)
class SullivanParams:
    p: int = 4
    rounds: int = 100
    seed: int = 42
    n2_max: int = 8

    def validate(self) -> "SullivanParams":
        if self.p < 2:
            raise WeaveError(f"Sullivan needs at least 2 processors, got {self.p}", "invalid-params")
        if self.rounds < 0 or self.n2_max < 0:
            raise WeaveError("rounds and n2_max must be non-negative", "invalid-params")
        return self

    @classmethod
    def from_plan(cls, plan: TapestryPlan) -> "SullivanParams":
        """Recover parameters from a counter tapestry's string arguments."""
        mains = [s for s in plan.strings if (s.module, s.entry) == ("counter", "main")]
        if not mains or plan.fabric is None:
            raise WeaveError("Tapestry has no fabric-bound counter strings", "invalid-params")
        seed, rounds, n2_max = mains[0].args
        return cls(len(plan.fabric), rounds, seed, n2_max)


@dataclass
class SullivanResult:
    params: SullivanParams
    counts: List[int]
    sent: List[int]
    total_sent: int
    oracle_counts: List[int]
    draws_total: int
    log_counts: List[int]
    sentinel_hits: int
    sentinel_misses: int
    conservation: Dict[str, int]
    report: Optional[RunReport] = field(default=None, repr=False)
    handle: Optional[TapestryHandle] = field(default=None, repr=False)

    @property
    def conserved(self) -> bool:
        return sum(self.counts) == self.draws_total == self.total_sent


def sullivan_plan(params: SullivanParams) -> TapestryPlan:
    params.validate()
    plan = TapestryPlan(modules=[ModuleDecl("counter"), ModuleDecl("emulator")])
    plan.beads.append(BeadDecl("E", "emulator"))
    for rank in range(params.p):
        plan.beads.append(BeadDecl(f"C{rank}", "counter"))
        plan.weaves.append(WeaveDecl(f"V{rank}", (f"C{rank}", "E")))
        plan.strings.append(StringDecl(f"p{rank}", f"V{rank}", "counter", "main",
                                       (params.seed, params.rounds, params.n2_max)))
    plan.fabric = tuple(s.name for s in plan.strings)
    return plan


def oracle_counts(params: SullivanParams) -> List[int]:
    """Replay every rank's draws without running anything."""
    counts = [0] * params.p
    for rank in range(params.p):
        rng = rank_rng(params.seed, rank)
        for _ in range(params.rounds):
            n1 = rng.uniform_int(0, params.p - 1)
            n2 = rng.uniform_int(0, params.n2_max)
            counts[n1] += n2
    return counts


def counter_cells(handle: TapestryHandle, symbol: str = "count") -> List[int]:
    fabric = handle.fabric
    weaves = [handle.runtime.strings[ep.string].weave for ep in fabric.endpoints]
    return [handle.tapestry.resolve(w, "counter", symbol) for w in weaves]


def run_sullivan(params: SullivanParams, plan: Optional[TapestryPlan] = None,
                 catalog: Optional[ModuleCatalog] = None,
                 policy: Optional[SchedulerPolicy] = None) -> SullivanResult:
    params.validate()
    handle = instantiate(plan or sullivan_plan(params), catalog, policy, name="sullivan")
    report = handle.run()
    if report.errors:
        logger.error(f"Sullivan run reported errors: {report.errors}")
    tapestry = handle.tapestry
    counts = [tapestry.read_cell(c) for c in counter_cells(handle)]
    sent = [tapestry.read_cell(c) for c in counter_cells(handle, "sent")]
    hits = sum(tapestry.read_cell(c) for c in counter_cells(handle, "sentinel_hits"))
    misses = sum(tapestry.read_cell(c) for c in counter_cells(handle, "sentinel_misses"))
    log_counts = [0] * params.p
    for event in handle.fabric.events:
        if event.event == "callback":
            log_counts[event.dst] += 1
    expected = oracle_counts(params)
    result = SullivanResult(
        params=params,
        counts=counts,
        sent=sent,
        total_sent=handle.fabric.sends,
        oracle_counts=expected,
        draws_total=sum(expected),
        log_counts=log_counts,
        sentinel_hits=hits,
        sentinel_misses=misses,
        conservation=handle.fabric.conservation(),
        report=report,
        handle=handle,
    )
    logger.info(f"Sullivan p={params.p} rounds={params.rounds}: counts={counts} total_sent={result.total_sent}")
    return result
