"""Wavefront sweep kernel over an XYZ grid decomposed into x-slabs.

Each sweep is a forward pass (inflow from x-1, y-1, z-1) followed by a
backward pass (inflow from x+1, y+1, z+1)::

    psi = (q + c * (up_x + up_y + up_z)) / (sigma + 3c)
    q   = s_ext + scatter * phi_prev
    phi = (psi_forward + psi_backward) / 2

Inside one x-plane cells are evaluated by anti-diagonals of (y, z), so the
arithmetic for a cell never depends on how the grid was decomposed and
decomposed runs are bit-equal to the monolithic one. Each virtual machine
keeps its slab in the private ``sweep`` bead of its weave and exchanges
boundary planes with its neighbours over the message fabric.
"""
import hashlib
import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .catalog import ModuleCatalog
from .core import ModuleDef
from .errors import DecompositionError, WeaveError
from .rng import unit_from_hash
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

SIGMA = 1.0
COUPLING = 0.5
SCATTER = 0.3
DENOM = SIGMA + 3.0 * COUPLING

FORWARD_TAG = 1
BACKWARD_TAG = 2


# -- numerics ----------------------------------------------------------------------

def slab_bounds(nx: int, n_vms: int, rank: int) -> Tuple[int, int]:
    """Equal slabs along x; the last VM also takes the remainder."""
    base = nx // n_vms
    x0 = rank * base
    x1 = nx if rank == n_vms - 1 else x0 + base
    return x0, x1


def external_source(x0: int, x1: int, ny: int, nz: int, seed: int) -> np.ndarray:
    """Per-cell source keyed on the global cell index, identical for any decomposition."""
    out = np.empty((x1 - x0, ny, nz))
    for x in range(x0, x1):
        for y in range(ny):
            base = (x * ny + y) * nz
            out[x - x0, y, :] = [unit_from_hash(seed, base + z) for z in range(nz)]
    return out


def _diagonals(ny: int, nz: int):
    for d in range(ny + nz - 1):
        ys = np.arange(max(0, d - nz + 1), min(ny - 1, d) + 1)
        yield ys, d - ys


def sweep_plane(q: np.ndarray, up_x: np.ndarray, forward: bool) -> np.ndarray:
    ny, nz = q.shape
    psi = np.zeros((ny, nz))
    diagonals = list(_diagonals(ny, nz))
    if not forward:
        diagonals.reverse()
    for ys, zs in diagonals:
        if forward:
            up_y = np.where(ys > 0, psi[np.maximum(ys - 1, 0), zs], 0.0)
            up_z = np.where(zs > 0, psi[ys, np.maximum(zs - 1, 0)], 0.0)
        else:
            up_y = np.where(ys < ny - 1, psi[np.minimum(ys + 1, ny - 1), zs], 0.0)
            up_z = np.where(zs < nz - 1, psi[ys, np.minimum(zs + 1, nz - 1)], 0.0)
        psi[ys, zs] = (q[ys, zs] + COUPLING * ((up_x[ys, zs] + up_y) + up_z)) / DENOM
    return psi


def sweep_slab(q: np.ndarray, inflow: np.ndarray, forward: bool) -> np.ndarray:
    """One pass over a slab; ``inflow`` is the neighbour plane just outside it."""
    psi = np.empty_like(q)
    planes = range(q.shape[0]) if forward else range(q.shape[0] - 1, -1, -1)
    upstream = inflow
    for i in planes:
        psi[i] = sweep_plane(q[i], upstream, forward)
        upstream = psi[i]
    return psi


def sweep_reference(grid: Tuple[int, int, int], sweeps: int, seed: int) -> np.ndarray:
    """Monolithic computation with no runtime and no messages."""
    nx, ny, nz = grid
    source = external_source(0, nx, ny, nz, seed)
    phi = np.zeros((nx, ny, nz))
    zero = np.zeros((ny, nz))
    for _ in range(sweeps):
        q = source + SCATTER * phi
        forward = sweep_slab(q, zero, True)
        backward = sweep_slab(q, zero, False)
        phi = (forward + backward) / 2.0
    return phi


def digest(array: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(array, dtype=np.float64).tobytes()).hexdigest()


# -- guest code ----------------------------------------------------------------------------

def _plane_bytes(plane: np.ndarray) -> bytes:
    return np.ascontiguousarray(plane, dtype=np.float64).tobytes()


def _recv_plane(ctx, tag: int, shape: Tuple[int, int]) -> np.ndarray:
    message = ctx.mf_recv(tag)
    return np.frombuffer(message.payload, dtype=np.float64).reshape(shape)


def sweep_main(ctx, nx: int, ny: int, nz: int, sweeps: int, seed: int) -> None:
    rank = ctx.mf_rank()
    size = ctx.mf_size()
    x0, x1 = slab_bounds(nx, size, rank)
    ctx.set("x0", x0)
    ctx.set("x1", x1)
    source = external_source(x0, x1, ny, nz, seed)
    shape = (ny, nz)
    zero = np.zeros(shape)
    phi = np.zeros((x1 - x0, ny, nz))
    for _ in range(sweeps):
        q = source + SCATTER * phi

        inflow = _recv_plane(ctx, FORWARD_TAG, shape) if rank > 0 else zero
        forward = sweep_slab(q, inflow, True)
        if rank < size - 1:
            ctx.mf_send(rank + 1, FORWARD_TAG, _plane_bytes(forward[-1]))

        inflow = _recv_plane(ctx, BACKWARD_TAG, shape) if rank < size - 1 else zero
        backward = sweep_slab(q, inflow, False)
        if rank > 0:
            ctx.mf_send(rank - 1, BACKWARD_TAG, _plane_bytes(backward[0]))

        phi = (forward + backward) / 2.0
        ctx.set("phi", phi.tobytes())
        ctx.set("sweeps_done", ctx.get("sweeps_done") + 1)
        ctx.yield_current()
    ctx.set("digest", digest(phi).encode("ascii"))


def sweep_module() -> ModuleDef:
    return ModuleDef.build(
        "sweep",
        [
            ("phi", "bytes", b""),
            ("x0", "int", 0),
            ("x1", "int", 0),
            ("sweeps_done", "int", 0),
            ("digest", "bytes", b""),
        ],
        {"main": sweep_main},
    )


# -- host side --------------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepParams:
    grid: Tuple[int, int, int] = (32, 16, 16)
    n_vms: int = 1
    sweeps: int = 2
    seed: int = 42

    def validate(self) -> "SweepParams":
        if len(self.grid) != 3 or any(int(d) < 1 for d in self.grid):
            raise DecompositionError(f"Grid dimensions must be positive, got {self.grid}")
        if self.n_vms < 1:
            raise DecompositionError(f"Need at least one VM, got {self.n_vms}")
        if self.n_vms > self.grid[0]:
            raise DecompositionError(f"Cannot split nx={self.grid[0]} into {self.n_vms} slabs")
        if self.sweeps < 0:
            raise WeaveError("sweeps must be non-negative", "invalid-params")
        return self

    @classmethod
    def from_plan(cls, plan: TapestryPlan) -> "SweepParams":
        mains = [s for s in plan.strings if (s.module, s.entry) == ("sweep", "main")]
        if not mains or plan.fabric is None:
            raise WeaveError("Tapestry has no fabric-bound sweep strings", "invalid-params")
        nx, ny, nz, sweeps, seed = mains[0].args
        return cls((nx, ny, nz), len(plan.fabric), sweeps, seed)


@dataclass
class SweepResult:
    params: SweepParams
    digests: List[str]
    digest: str
    phi: np.ndarray = field(repr=False)
    messages: int
    values: int
    wall_ms: float
    setup_ms: float
    report: Optional[RunReport] = field(default=None, repr=False)
    handle: Optional[TapestryHandle] = field(default=None, repr=False)

    @property
    def expected_messages(self) -> int:
        return 2 * (self.params.n_vms - 1) * self.params.sweeps


def sweep_plan(params: SweepParams) -> TapestryPlan:
    """One private sweep bead per VM, all weaves sharing a single emulator bead."""
    params.validate()
    nx, ny, nz = params.grid
    plan = TapestryPlan(modules=[ModuleDecl("sweep"), ModuleDecl("emulator")])
    plan.beads.append(BeadDecl("E", "emulator"))
    for rank in range(params.n_vms):
        plan.beads.append(BeadDecl(f"K{rank}", "sweep"))
        plan.weaves.append(WeaveDecl(f"V{rank}", (f"K{rank}", "E")))
        plan.strings.append(StringDecl(f"vm{rank}", f"V{rank}", "sweep", "main",
                                       (nx, ny, nz, params.sweeps, params.seed)))
    plan.fabric = tuple(s.name for s in plan.strings)
    return plan


def run_sweep(params: SweepParams, plan: Optional[TapestryPlan] = None,
              catalog: Optional[ModuleCatalog] = None,
              policy: Optional[SchedulerPolicy] = None) -> SweepResult:
    params.validate()
    nx, ny, nz = params.grid
    started = time.perf_counter()
    handle = instantiate(plan or sweep_plan(params), catalog, policy, name="sweep")
    setup_ms = (time.perf_counter() - started) * 1000.0
    report = handle.run()
    if report.errors or report.deadlock:
        raise WeaveError(f"Sweep run failed: errors={report.errors} blocked={report.deadlocked}", "run-failed")
    tapestry = handle.tapestry
    slabs = []
    digests = []
    for endpoint in handle.fabric.endpoints:
        weave = handle.runtime.strings[endpoint.string].weave
        x0, x1 = (tapestry.read_cell(tapestry.resolve(weave, "sweep", s)) for s in ("x0", "x1"))
        raw = tapestry.read_cell(tapestry.resolve(weave, "sweep", "phi"))
        slab = np.frombuffer(raw, dtype=np.float64).reshape((x1 - x0, ny, nz)) if raw else np.zeros((x1 - x0, ny, nz))
        slabs.append(slab)
        digests.append(digest(slab))
    phi = np.concatenate(slabs, axis=0)
    messages = handle.fabric.sends
    result = SweepResult(
        params=params,
        digests=digests,
        digest=digest(phi),
        phi=phi,
        messages=messages,
        values=messages * ny * nz,
        wall_ms=report.wall_ms,
        setup_ms=setup_ms,
        report=report,
        handle=handle,
    )
    logger.info(f"Sweep grid={params.grid} n_vms={params.n_vms}: digest={result.digest[:12]} "
                f"messages={messages} wall={report.wall_ms:.1f}ms")
    return result
