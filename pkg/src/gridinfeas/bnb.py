"""Spatial branch-and-bound over the voltage-deviation box.

Best-bound-first exploration; every node is bounded by the McCormick
relaxation and pruned against the incumbent.  Incumbents come from the warm
start, from relaxation points whose bilinear residuals already vanish, and
from periodic local-solver polishing.  All certificates are relative to the
root deviation box.  The tree loop is single-threaded and deterministic.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import convex, envelopes
from .formulation import (Bounds, BoxInfeasibleError, ConstraintSystem,
                          VariableSpace, propagate_unfiltered_bounds)
from .localnlp import CONVERGED, LocalSolution, solve_local
from .network import Network

BILINEAR_TOL = 1e-7
PRUNE_MARGIN = 1e-12
MIN_WIDTH = 1e-9

STATUS_OPTIMAL = "optimal-within-gap"
STATUS_TIME = "time-limit"
STATUS_NODES = "node-limit"


class InfeasibleModelError(RuntimeError):
    """No feasible point exists within the root deviation box."""


@dataclass
class SolveOptions:
    gap_tol: float = 1e-4
    time_limit: float | None = None
    node_limit: int | None = None
    polish_every: int = 10
    log: "callable | None" = None


@dataclass
class BnBNode:
    lb: float
    seq: int
    lo: np.ndarray  # filtered-variable box
    hi: np.ndarray
    depth: int

    def __lt__(self, other):
        return (self.lb, self.seq) < (other.lb, other.seq)


@dataclass
class GlobalResult:
    x: np.ndarray | None
    objective: float
    best_bound: float
    gap: float
    nodes: int
    status: str
    source_magnitudes: dict[tuple[str, str], float]
    log_lines: list[str] = field(default_factory=list)
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "best_bound": self.best_bound,
            "gap": self.gap,
            "nodes": self.nodes,
            "status": self.status,
            "wall_time_s": self.wall_time,
            "sources": {f"{nid}:{ph}": m
                        for (nid, ph), m in self.source_magnitudes.items()},
        }


def compute_gap(f_inc: float, f_bd: float) -> float:
    """Relative optimality gap with a guarded denominator."""
    return abs(f_inc - f_bd) / max(abs(f_inc), 1e-12)


def select_branch_variable(system: ConstraintSystem, x: np.ndarray,
                           lo: np.ndarray, hi: np.ndarray) -> int:
    """Deviation variable tied to the worst envelope violation.

    Candidates are scored violation * box width; ties go to the lowest
    variable index.  Raises if no residual exceeds the bilinear tolerance.
    """
    resid = np.abs(system.bilinear_residuals(x))
    best_var, best_score = -1, -1.0
    for k in np.where(resid > BILINEAR_TOL)[0]:
        for v in system.branch_vars[k]:
            score = resid[k] * (hi[v] - lo[v])
            if score > best_score + 1e-15 or (
                    abs(score - best_score) <= 1e-15 and v < best_var):
                best_var, best_score = v, score
    if best_var < 0:
        raise ValueError("no bilinear residual above tolerance; nothing to branch on")
    return best_var


def branch(lo: np.ndarray, hi: np.ndarray, var: int, point: float):
    """Split the box at ``point`` clamped to 10-90% of the interval."""
    w = hi[var] - lo[var]
    if w <= MIN_WIDTH:
        raise ValueError(f"variable {var} box width {w} below branch threshold")
    p = min(max(point, lo[var] + 0.1 * w), hi[var] - 0.1 * w)
    left_lo, left_hi = lo.copy(), hi.copy()
    right_lo, right_hi = lo.copy(), hi.copy()
    left_hi[var] = p
    right_lo[var] = p
    return (left_lo, left_hi), (right_lo, right_hi)


def _source_magnitudes(space: VariableSpace, x: np.ndarray):
    return {key: math.hypot(x[ir], x[ii])
            for key, (ir, ii) in space.src_index.items()}


def _verified_objective(space: VariableSpace, system: ConstraintSystem,
                        x: np.ndarray, tol: float = BILINEAR_TOL) -> float | None:
    """Objective of ``x`` if it satisfies the exact (lifted) constraints."""
    if np.abs(system.bilinear_residuals(x)).max(initial=0.0) > tol:
        return None
    if np.abs(system.a_eq @ x - system.b_eq).max(initial=0.0) > tol:
        return None
    for idx, c, rhs in system.quad_ineq:
        if (c * x[idx] ** 2).sum() > rhs + tol:
            return None
    return system.objective_value(x)


def solve_global(space: VariableSpace, system: ConstraintSystem,
                 network: Network, bounds: Bounds,
                 warm: LocalSolution | None = None,
                 opts: SolveOptions | None = None) -> GlobalResult:
    """Global solve with a certified gap, relative to the root box."""
    opts = opts or SolveOptions()
    t0 = time.perf_counter()
    fidx = space.filtered

    f_inc = math.inf
    x_inc: np.ndarray | None = None
    if warm is not None and warm.status == CONVERGED:
        obj = _verified_objective(space, system, warm.x)
        if obj is not None and not np.any(warm.x < bounds.lower - 1e-7) \
                and not np.any(warm.x > bounds.upper + 1e-7):
            f_inc, x_inc = obj, warm.x.copy()

    heap: list[BnBNode] = []
    seq = 0
    heapq.heappush(heap, BnBNode(-math.inf, seq,
                                 bounds.lower[fidx].copy(),
                                 bounds.upper[fidx].copy(), 0))
    f_bd = -math.inf
    stale_bound = math.inf  # bounds of nodes closed at minimum width
    nodes = 0
    status = STATUS_OPTIMAL
    log_lines: list[str] = []

    def emit_log():
        line = (f"node={nodes} f_inc={f_inc:.12g} f_bd={f_bd:.12g} "
                f"gap={compute_gap(f_inc, f_bd):.3e} "
                f"t={time.perf_counter() - t0:.3f}")
        log_lines.append(line)
        if opts.log:
            opts.log(line)

    any_feasible_node = False
    while heap:
        if opts.time_limit is not None and time.perf_counter() - t0 > opts.time_limit:
            status = STATUS_TIME
            break
        if opts.node_limit is not None and nodes >= opts.node_limit:
            status = STATUS_NODES
            break
        node = heapq.heappop(heap)
        f_bd = max(f_bd, min(node.lb, stale_bound, f_inc))
        if math.isfinite(f_inc) and compute_gap(f_inc, f_bd) <= opts.gap_tol:
            heapq.heappush(heap, node)  # unprocessed; bound still open
            break

        nodes += 1
        nb = bounds.copy()
        nb.lower[fidx] = node.lo
        nb.upper[fidx] = node.hi
        try:
            nb = propagate_unfiltered_bounds(space, network, nb)
        except BoxInfeasibleError:
            emit_log()
            continue
        model = envelopes.build_relaxation(system, nb)
        sol = convex.solve_convex(model)
        if sol.status == convex.PRIMAL_INFEASIBLE:
            emit_log()
            continue
        if sol.status != convex.OPTIMAL:
            # keep the region alive at its inherited bound, resolved by width
            stale_bound = min(stale_bound, node.lb)
            emit_log()
            continue
        any_feasible_node = True
        node_bound = max(node.lb, sol.dual_objective)
        if math.isfinite(f_inc) and node_bound >= f_inc * (1.0 - PRUNE_MARGIN):
            emit_log()
            continue

        exact_obj = _verified_objective(space, system, sol.x)
        if exact_obj is not None:
            if exact_obj < f_inc:
                f_inc, x_inc = exact_obj, sol.x.copy()
            emit_log()
            continue  # node fully resolved: bound == feasible value here

        if opts.polish_every and nodes % opts.polish_every == 0:
            polished = solve_local(system, bounds, init=sol.x)
            if polished.status == CONVERGED:
                obj = _verified_objective(space, system, polished.x)
                if obj is not None and obj < f_inc:
                    f_inc, x_inc = obj, polished.x.copy()

        try:
            var = select_branch_variable(system, sol.x, nb.lower, nb.upper)
        except ValueError:
            stale_bound = min(stale_bound, node_bound)
            emit_log()
            continue
        if nb.upper[var] - nb.lower[var] <= MIN_WIDTH:
            stale_bound = min(stale_bound, node_bound)
            emit_log()
            continue
        (llo, lhi), (rlo, rhi) = branch(nb.lower, nb.upper, var, sol.x[var])
        for clo, chi in ((llo, lhi), (rlo, rhi)):
            seq += 1
            heapq.heappush(heap, BnBNode(node_bound, seq,
                                         clo[fidx], chi[fidx], node.depth + 1))
        emit_log()

    if x_inc is None:
        if not any_feasible_node and not heap:
            raise InfeasibleModelError(
                "all nodes pruned infeasible and no incumbent found: the model "
                "is infeasible within the root deviation box")
        raise InfeasibleModelError(
            "search ended without a feasible incumbent; supply a warm start or "
            "raise the limits")

    open_bound = min([n.lb for n in heap], default=math.inf)
    f_bd = max(f_bd, min(open_bound, stale_bound, f_inc))
    gap = compute_gap(f_inc, f_bd)
    if status == STATUS_OPTIMAL and gap > opts.gap_tol:
        status = STATUS_TIME if opts.time_limit is not None else STATUS_NODES
    result = GlobalResult(
        x=x_inc, objective=f_inc, best_bound=f_bd, gap=gap, nodes=nodes,
        status=status, source_magnitudes=_source_magnitudes(space, x_inc),
        log_lines=log_lines, wall_time=time.perf_counter() - t0)
    return result
