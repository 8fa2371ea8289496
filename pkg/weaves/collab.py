"""Collaborating solvers coupled through a shared mediator.

Two solvers split u'' = f on [0, 1] at an interface point xi. Each solves
its own two-point boundary value problem with the mediator's interface
value g as its inner boundary, then deposits a one-sided derivative at xi.
When both have deposited, the mediator relaxes g toward matching
derivatives::

    d_left   = (g - u[m-1]) / h + h f(xi) / 2
    d_right  = (u[m+1] - g) / h - h f(xi) / 2
    mismatch = 2 xi (1 - xi) (d_right - d_left)
    g       <- g + theta * mismatch / 2

At the fixed point the full-mesh central stencil holds at xi, so the
coupled solution equals the monolithic solve. The error contracts by
(1 - theta) per update.

Both solver strings are bound to the message fabric. The first to deposit
in an iteration blocks in recv; the second applies the update and sends
it the go-ahead.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import solve_banded

from .catalog import ModuleCatalog
from .core import ModuleDef
from .errors import NonConvergence, WeaveError
from .runtime import EquivalenceClasses, RunReport, SchedulerPolicy
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

LEFT = 0
RIGHT = 1
GO_TAG = 1  # mediator update done, next iteration may start

FORCINGS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "minus_two": lambda x: np.full_like(x, -2.0),
    "sine": lambda x: -(math.pi ** 2) * np.sin(math.pi * x),
    "exp": lambda x: np.exp(x),
    "cubic": lambda x: 6.0 * x,
}


def forcing(name: str) -> Callable[[np.ndarray], np.ndarray]:
    try:
        return FORCINGS[name]
    except KeyError:
        raise WeaveError(f"Unknown forcing {name!r}; choose from {sorted(FORCINGS)}", "invalid-params")


@dataclass(frozen=True)
class CollabProblem:
    forcing: str = "minus_two"
    u0: float = 0.0
    u1: float = 0.0
    xi: float = 0.5
    n: int = 100
    theta: float = 0.5
    tol: float = 1e-10
    max_iters: int = 200

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def m(self) -> int:
        """Mesh index of the interface."""
        return int(round(self.xi * self.n))

    def validate(self) -> "CollabProblem":
        forcing(self.forcing)
        if self.n < 2:
            raise WeaveError(f"Need at least 2 mesh intervals, got {self.n}", "invalid-params")
        if not 0.0 < self.theta <= 1.0:
            raise WeaveError(f"Relaxation factor must lie in (0, 1], got {self.theta}", "invalid-params")
        if abs(self.m * self.h - self.xi) > 1e-12 or not 0 < self.m < self.n:
            raise WeaveError(f"Interface point {self.xi} is not an interior mesh point for n={self.n}",
                             "invalid-params")
        if self.tol <= 0 or self.max_iters < 1:
            raise WeaveError("tol must be positive and max_iters at least 1", "invalid-params")
        return self

    def solver_args(self, side: int) -> tuple:
        return (side, self.forcing.encode("ascii"), float(self.u0), float(self.u1), float(self.xi),
                int(self.n), float(self.theta), float(self.tol), int(self.max_iters))

    @classmethod
    def from_args(cls, args: Sequence) -> "CollabProblem":
        """Inverse of :meth:`solver_args`, for problems read back from a tapestry file."""
        _, name, u0, u1, xi, n, theta, tol, max_iters = args
        name = name.decode("ascii") if isinstance(name, bytes) else name
        return cls(name, float(u0), float(u1), float(xi), int(n), float(theta), float(tol), int(max_iters))

    @classmethod
    def from_plan(cls, plan: TapestryPlan) -> List["CollabProblem"]:
        """One problem per left-side solver string, in declaration order."""
        problems = [cls.from_args(s.args) for s in plan.strings
                    if (s.module, s.entry) == ("solver", "main") and s.args and s.args[0] == LEFT]
        if not problems:
            raise WeaveError("Tapestry has no solver strings", "invalid-params")
        return problems


# -- numerics --------------------------------------------------------------------------

def solve_two_point(f: Callable[[np.ndarray], np.ndarray], a: float, b: float,
                    ua: float, ub: float, intervals: int) -> np.ndarray:
    """u'' = f on [a, b] with Dirichlet ends, central differences; returns all nodes."""
    x = np.linspace(a, b, intervals + 1)
    h = (b - a) / intervals
    u = np.empty(intervals + 1)
    u[0], u[-1] = ua, ub
    k = intervals - 1
    if k == 0:
        return u
    ab = np.zeros((3, k))
    ab[0, 1:] = 1.0
    ab[1, :] = -2.0
    ab[2, :-1] = 1.0
    rhs = h * h * f(x[1:-1])
    rhs[0] -= ua
    rhs[-1] -= ub
    u[1:-1] = solve_banded((1, 1), ab, rhs)
    return u


def solve_monolithic(problem: CollabProblem) -> np.ndarray:
    problem.validate()
    return solve_two_point(forcing(problem.forcing), 0.0, 1.0, problem.u0, problem.u1, problem.n)


def interface_derivative(side: int, u: np.ndarray, g: float, h: float, f_xi: float) -> float:
    if side == LEFT:
        return (g - u[-2]) / h + h * f_xi / 2.0
    return (u[1] - g) / h - h * f_xi / 2.0


def relax(g: float, d_left: float, d_right: float, xi: float, theta: float) -> float:
    mismatch = 2.0 * xi * (1.0 - xi) * (d_right - d_left)
    return g + theta * mismatch / 2.0


# -- guest code ------------------------------------------------------------------------------

def _solve_side(side: int, f, u0: float, u1: float, xi: float, n: int, g: float) -> np.ndarray:
    m = int(round(xi * n))
    if side == LEFT:
        return solve_two_point(f, 0.0, xi, u0, g, m)
    return solve_two_point(f, xi, 1.0, g, u1, n - m)


def solver_main(ctx, side: int, forcing_name: bytes, u0: float, u1: float, xi: float, n: int,
                theta: float, tol: float, max_iters: int) -> None:
    f = forcing(forcing_name.decode("ascii"))
    h = 1.0 / n
    f_xi = float(f(np.array([xi]))[0])
    rank = ctx.mf_rank()
    ctx.set("side", side)
    while not ctx.get("converged", "mediator"):
        g = ctx.get("g", "mediator")
        u = _solve_side(side, f, u0, u1, xi, n, g)
        ctx.set("u", u.tobytes())
        ctx.set("solves", ctx.get("solves") + 1)
        partner = ctx.call("mediator", "deposit", side, rank, interface_derivative(side, u, g, h, f_xi),
                           xi, theta, tol, max_iters)
        if partner is None:
            # first to arrive this iteration; the partner's deposit releases us
            ctx.mf_recv(GO_TAG)
        else:
            ctx.mf_send(partner, GO_TAG, ctx.get("iteration", "mediator"))
    u = _solve_side(side, f, u0, u1, xi, n, ctx.get("g", "mediator"))
    ctx.set("u", u.tobytes())


def mediator_deposit(ctx, side: int, rank: int, derivative: float, xi: float, theta: float, tol: float,
                     max_iters: int) -> Optional[int]:
    """Record one side's derivative; the second arrival relaxes g and returns the waiting rank."""
    ctx.set("visits", ctx.get("visits") + 1)
    ctx.set("d_left" if side == LEFT else "d_right", derivative)
    waiting = ctx.get("waiting")
    if waiting < 0:
        ctx.set("waiting", rank)
        return None
    g = ctx.get("g")
    g_new = relax(g, ctx.get("d_left"), ctx.get("d_right"), xi, theta)
    history = ctx.get("history") + np.float64(g_new).tobytes()
    ctx.set("history", history)
    ctx.set("g", g_new)
    ctx.set("waiting", -1)
    ctx.set("updates", ctx.get("updates") + 1)
    if abs(g_new - g) < tol:
        ctx.set("converged", 1)
    elif ctx.get("updates") >= max_iters:
        ctx.set("converged", -1)
    ctx.set("iteration", ctx.get("iteration") + 1)
    return waiting


def solver_module() -> ModuleDef:
    return ModuleDef.build(
        "solver",
        [("u", "bytes", b""), ("side", "int", 0), ("solves", "int", 0)],
        {"main": solver_main},
    )


def mediator_module() -> ModuleDef:
    return ModuleDef.build(
        "mediator",
        [
            ("g", "real", 0.0),
            ("d_left", "real", 0.0),
            ("d_right", "real", 0.0),
            ("waiting", "int", -1),
            ("iteration", "int", 0),
            ("updates", "int", 0),
            ("converged", "int", 0),
            ("visits", "int", 0),
            ("history", "bytes", b""),
        ],
        {"deposit": mediator_deposit},
    )


# -- host side ---------------------------------------------------------------------------------

@dataclass
class CollabResult:
    problem: CollabProblem
    x: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    g: float
    iterations: int
    history: List[float]
    converged: bool
    report: Optional[RunReport] = field(default=None, repr=False)

    def max_error(self, reference: np.ndarray) -> float:
        return float(np.max(np.abs(self.u - reference)))

    def contraction_ratios(self) -> List[float]:
        """|e_{k+1}| / |e_k| measured against the final interface value."""
        errors = [abs(g - self.g) for g in self.history[:-1]]
        return [b / a for a, b in zip(errors, errors[1:]) if a > 0]


def pair_plan(problems: Sequence[CollabProblem], reverse: bool = False) -> TapestryPlan:
    """One mediator per problem, two solver beads per mediator, one weave and string per solver."""
    plan = TapestryPlan(modules=[ModuleDecl("solver"), ModuleDecl("mediator")])
    strings = []
    for index, problem in enumerate(problems):
        problem.validate()
        left, right = 2 * index + 1, 2 * index + 2
        mediator = f"M{left}{right}" if len(problems) > 1 else "M"
        plan.beads.append(BeadDecl(f"S{left}", "solver"))
        plan.beads.append(BeadDecl(f"S{right}", "solver"))
        plan.beads.append(BeadDecl(mediator, "mediator"))
        for number, side in ((left, LEFT), (right, RIGHT)):
            plan.weaves.append(WeaveDecl(f"W{number}", (f"S{number}", mediator)))
            strings.append(StringDecl(f"s{number}", f"W{number}", "solver", "main", problem.solver_args(side)))
    if reverse:
        strings.reverse()
    plan.strings = strings
    plan.fabric = tuple(s.name for s in strings)
    return plan


def collab_plan(problem: CollabProblem, reverse: bool = False) -> TapestryPlan:
    return pair_plan([problem], reverse)


def _collect(handle: TapestryHandle, problem: CollabProblem, left: str, right: str, report: RunReport) -> CollabResult:
    tapestry = handle.tapestry
    parts = []
    for weave in (left, right):
        raw = tapestry.read_cell(tapestry.resolve(weave, "solver", "u"))
        parts.append(np.frombuffer(raw, dtype=np.float64))

    def med(symbol: str):
        return tapestry.read_cell(tapestry.resolve(left, "mediator", symbol))

    history = np.frombuffer(med("history"), dtype=np.float64).tolist() if med("history") else []
    state = med("converged")
    result = CollabResult(
        problem=problem,
        x=np.linspace(0.0, 1.0, problem.n + 1),
        u=np.concatenate([parts[0], parts[1][1:]]) if parts[0].size and parts[1].size else np.array([]),
        g=med("g"),
        iterations=med("updates"),
        history=history,
        converged=state == 1,
        report=report,
    )
    if state != 1:
        raise NonConvergence(
            f"Interface relaxation did not converge in {problem.max_iters} updates "
            f"(last g={result.g!r})", history)
    return result


def _check_run(report: RunReport) -> None:
    if report.errors or report.deadlock:
        raise WeaveError(f"Collab run failed: errors={report.errors} blocked={report.deadlocked}", "run-failed")


def run_collab(problem: CollabProblem, reverse: bool = False, plan: Optional[TapestryPlan] = None,
               catalog: Optional[ModuleCatalog] = None,
               policy: Optional[SchedulerPolicy] = None) -> CollabResult:
    problem.validate()
    handle = instantiate(plan or collab_plan(problem, reverse), catalog, policy, name="collab")
    report = handle.run()
    _check_run(report)
    result = _collect(handle, problem, "W1", "W2", report)
    logger.info(f"Collab {problem.forcing}: g={result.g:.12g} after {result.iterations} updates")
    return result


@dataclass
class PairsResult:
    results: Tuple[CollabResult, CollabResult]
    classes: EquivalenceClasses
    class_names: List[List[str]]
    handle: Optional[TapestryHandle] = field(default=None, repr=False)


def run_pairs(problems: Tuple[CollabProblem, CollabProblem], plan: Optional[TapestryPlan] = None,
             catalog: Optional[ModuleCatalog] = None,
             policy: Optional[SchedulerPolicy] = None) -> PairsResult:
    """Two independent solver pairs in one tapestry: 4 solver beads, 2 mediators, 4 weaves."""
    if len(problems) != 2:
        raise WeaveError("run_pairs takes exactly two problems", "invalid-params")
    handle = instantiate(plan or pair_plan(problems), catalog, policy, name="pairs")
    classes = handle.runtime.equivalence_classes()
    names = [sorted(handle.runtime.strings[sid].name for sid in members) for members in classes.as_sets()]
    report = handle.run()
    _check_run(report)
    results = (
        _collect(handle, problems[0], "W1", "W2", report),
        _collect(handle, problems[1], "W3", "W4", report),
    )
    logger.info(f"Solver pairs converged at g={results[0].g:.12g} and g={results[1].g:.12g}")
    return PairsResult(results, classes, names, handle)
