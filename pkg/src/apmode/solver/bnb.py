"""Best-first branch and bound over binary variables of a conic problem."""

from __future__ import annotations

import heapq
import itertools
import time
from dataclasses import dataclass

import numpy as np

from .conic import ConicProblem, SolveOutcome, Status, constraint_violation, solve_conic

INT_TOL = 1e-6


@dataclass(frozen=True)
class MipProblem:
    relaxation: ConicProblem
    binaries: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.binaries, dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= self.relaxation.n):
            raise ValueError("binary index out of range")
        object.__setattr__(self, "binaries", idx)


def _fractionality(x, idx):
    v = x[idx]
    return np.abs(v - np.round(v))


def branch_and_bound(
    m: MipProblem,
    node_limit=100_000,
    int_tol=INT_TOL,
    integral_objective=False,
    prune_tol=1e-6,
    rel_gap=1e-9,
    deadline=None,
    conic_kwargs=None,
    incumbent=None,
) -> SolveOutcome:
    """Minimize over ``m`` with binaries restricted to {0, 1}.

    Nodes are explored lowest-bound first and branched on the most
    fractional binary (ties go to the lowest index).  With
    ``integral_objective`` a node is pruned once its bound exceeds
    ``incumbent - 1 + prune_tol``; otherwise once it is within ``rel_gap``
    of the incumbent.  ``history`` records ``(incumbent, best_bound)``
    after every processed node.

    ``incumbent`` is an optional feasible starting point; it is kept unless
    a strictly better solution is found, so ties resolve towards it.  A
    point that fails the feasibility re-check is ignored.
    """
    t0 = time.perf_counter()
    conic_kwargs = conic_kwargs or {}
    p = m.relaxation
    idx = m.binaries
    lb0 = p.lb.copy()
    ub0 = p.ub.copy()
    lb0[idx] = np.maximum(lb0[idx], 0.0)
    ub0[idx] = np.minimum(ub0[idx], 1.0)

    def prunable(bound, incumbent):
        if not np.isfinite(incumbent):
            return False
        if integral_objective:
            return bound > incumbent - 1.0 + prune_tol
        return bound >= incumbent - rel_gap * max(1.0, abs(incumbent))

    counter = itertools.count()
    heap = [(-np.inf, next(counter), lb0, ub0)]
    inc_x, inc_obj = None, np.inf
    if incumbent is not None:
        x0 = np.asarray(incumbent, float)
        if (np.all(np.abs(x0[idx] - np.round(x0[idx])) <= int_tol)
                and constraint_violation(p.with_bounds(lb0, ub0), x0) <= 1e-7):
            inc_x, inc_obj = x0, float(p.c @ x0)
    nodes = 0
    numerical = 0
    history = []
    best_bound = -np.inf

    def current_bound():
        open_bound = heap[0][0] if heap else np.inf
        return min(open_bound, inc_obj)

    while heap:
        if nodes >= node_limit:
            break
        if deadline is not None and time.perf_counter() > deadline:
            out = SolveOutcome(Status.TIME_LIMIT, x=inc_x, objective=inc_obj, best_bound=best_bound,
                               nodes=nodes, wall_time=time.perf_counter() - t0, history=history)
            return out
        bound, _, lb, ub = heapq.heappop(heap)
        if prunable(bound, inc_obj):
            continue
        nodes += 1
        res = solve_conic(p.with_bounds(lb, ub), **conic_kwargs)
        if res.status == Status.INFEASIBLE:
            pass
        elif res.status == Status.NUMERICAL_FAILURE:
            numerical += 1
            free = idx[ub[idx] - lb[idx] > 0.5]
            if len(free):
                j = int(free[0])
                for val in (0.0, 1.0):
                    clb, cub = lb.copy(), ub.copy()
                    clb[j] = cub[j] = val
                    heapq.heappush(heap, (bound, next(counter), clb, cub))
        else:
            node_bound = max(res.objective, bound)
            if not prunable(node_bound, inc_obj):
                frac = _fractionality(res.x, idx)
                if frac.size == 0 or frac.max() <= int_tol:
                    cand = _polish(p, res.x, idx, lb, ub, conic_kwargs)
                    if cand is not None and cand.objective < inc_obj:
                        inc_x, inc_obj = cand.x, cand.objective
                else:
                    # most fractional, lowest index on ties
                    j = int(idx[int(np.argmax(frac >= frac.max() - 1e-12))])
                    for val in (1.0, 0.0):
                        clb, cub = lb.copy(), ub.copy()
                        clb[j] = cub[j] = val
                        heapq.heappush(heap, (node_bound, next(counter), clb, cub))
        best_bound = max(best_bound, current_bound())
        history.append((inc_obj, best_bound))

    wall = time.perf_counter() - t0
    info = {"numerical_nodes": numerical}
    if heap and nodes >= node_limit:
        return SolveOutcome(Status.NODE_LIMIT, x=inc_x, objective=inc_obj, best_bound=best_bound,
                            nodes=nodes, wall_time=wall, history=history, info=info)
    if inc_x is None:
        return SolveOutcome(Status.INFEASIBLE, nodes=nodes, wall_time=wall, history=history, info=info,
                            certificate={"kind": "exhausted-tree"})
    return SolveOutcome(Status.OPTIMAL, x=inc_x, objective=inc_obj, best_bound=inc_obj, nodes=nodes,
                        wall_time=wall, history=history, info=info)


def _polish(p, x, idx, lb, ub, conic_kwargs):
    """Fix the (integral) binaries at their rounded values and re-solve the rest."""
    rounded = np.round(x[idx])
    plb, pub = lb.copy(), ub.copy()
    plb[idx] = pub[idx] = rounded
    res = solve_conic(p.with_bounds(plb, pub), **conic_kwargs)
    if res.status == Status.OPTIMAL:
        return res
    xr = x.copy()
    xr[idx] = rounded
    if constraint_violation(p, xr) <= 1e-7:
        return SolveOutcome(Status.OPTIMAL, x=xr, objective=float(p.c @ xr))
    return None


def enumerate_binaries(m: MipProblem, conic_kwargs=None) -> SolveOutcome:
    """Exhaustive reference: solve the continuous part for every binary pattern."""
    t0 = time.perf_counter()
    conic_kwargs = conic_kwargs or {}
    p = m.relaxation
    idx = m.binaries
    best = None
    count = 0
    for bits in itertools.product((0.0, 1.0), repeat=len(idx)):
        bits = np.array(bits)
        if np.any(bits < p.lb[idx]) or np.any(bits > p.ub[idx]):
            continue
        lb, ub = p.lb.copy(), p.ub.copy()
        lb[idx] = ub[idx] = bits
        res = solve_conic(p.with_bounds(lb, ub), **conic_kwargs)
        count += 1
        if res.status == Status.OPTIMAL and (best is None or res.objective < best.objective - 1e-12):
            best = res
    wall = time.perf_counter() - t0
    if best is None:
        return SolveOutcome(Status.INFEASIBLE, nodes=count, wall_time=wall)
    best.nodes = count
    best.wall_time = wall
    return best
