"""Continuous conic problems and their solution.

Problems are kept dense: every instance in this package has at most a few
hundred variables.  Clarabel (a homogeneous self-dual embedding interior
point method) does the numerical work; this module owns presolve, the
status contract and an independent feasibility re-check of every answer.
"""

from __future__ import annotations

import enum
import json
import time
from dataclasses import dataclass, field, replace

import clarabel
import numpy as np
import scipy.sparse as sp

FEAS_TOL = 1e-7
FORMAT_VERSION = 1


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    NODE_LIMIT = "NodeLimit"
    NUMERICAL_FAILURE = "NumericalFailure"
    TIME_LIMIT = "TimeLimit"


@dataclass(frozen=True)
class SOCBlock:
    """``|| F x + g || <= f @ x + h``."""

    F: np.ndarray
    g: np.ndarray
    f: np.ndarray
    h: float = 0.0
    name: str = ""


@dataclass(frozen=True)
class ConicProblem:
    """minimize c @ x  s.t.  SOC blocks, A_ub x <= b_ub, A_eq x = b_eq, lb <= x <= ub."""

    c: np.ndarray
    socs: tuple = ()
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    names: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        n = len(self.c)
        c = np.asarray(self.c, float)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A_ub", np.zeros((0, n)) if self.A_ub is None else np.asarray(self.A_ub, float).reshape(-1, n))
        object.__setattr__(self, "b_ub", np.zeros(0) if self.b_ub is None else np.asarray(self.b_ub, float).ravel())
        object.__setattr__(self, "A_eq", np.zeros((0, n)) if self.A_eq is None else np.asarray(self.A_eq, float).reshape(-1, n))
        object.__setattr__(self, "b_eq", np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, float).ravel())
        object.__setattr__(self, "lb", np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, float).copy())
        object.__setattr__(self, "ub", np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, float).copy())
        object.__setattr__(self, "socs", tuple(self.socs))
        if self.A_ub.shape[0] != self.b_ub.shape[0] or self.A_eq.shape[0] != self.b_eq.shape[0]:
            raise ValueError("row counts of A and b differ")
        if self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ValueError("bounds must have one entry per variable")
        for blk in self.socs:
            if blk.F.shape[1] != n or blk.f.shape != (n,) or blk.F.shape[0] != blk.g.shape[0]:
                raise ValueError(f"SOC block {blk.name!r} has inconsistent dimensions")

    @property
    def n(self):
        return len(self.c)

    def with_bounds(self, lb, ub):
        return replace(self, lb=lb, ub=ub)

    def to_dict(self):
        return {
            "format": "apmode.conic",
            "version": FORMAT_VERSION,
            "c": self.c.tolist(),
            "A_ub": self.A_ub.tolist(),
            "b_ub": self.b_ub.tolist(),
            "A_eq": self.A_eq.tolist(),
            "b_eq": self.b_eq.tolist(),
            "lb": [_enc(v) for v in self.lb],
            "ub": [_enc(v) for v in self.ub],
            "socs": [
                {"F": b.F.tolist(), "g": b.g.tolist(), "f": b.f.tolist(), "h": b.h, "name": b.name}
                for b in self.socs
            ],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "apmode.conic" or d.get("version") != FORMAT_VERSION:
            raise ValueError("not a version-1 conic problem")
        n = len(d["c"])
        socs = [SOCBlock(np.array(b["F"], float).reshape(-1, n), np.array(b["g"], float),
                         np.array(b["f"], float), float(b["h"]), b.get("name", "")) for b in d["socs"]]
        return cls(
            c=np.array(d["c"], float), socs=socs,
            A_ub=np.array(d["A_ub"], float).reshape(-1, n), b_ub=np.array(d["b_ub"], float),
            A_eq=np.array(d["A_eq"], float).reshape(-1, n), b_eq=np.array(d["b_eq"], float),
            lb=np.array([_dec(v) for v in d["lb"]]), ub=np.array([_dec(v) for v in d["ub"]]),
        )


def _enc(v):
    return v if np.isfinite(v) else ("inf" if v > 0 else "-inf")


def _dec(v):
    return float(v)


@dataclass
class SolveOutcome:
    status: Status
    x: np.ndarray | None = None
    objective: float = float("nan")
    best_bound: float = float("nan")
    nodes: int = 0
    wall_time: float = 0.0
    iterations: int = 0
    certificate: dict | None = None
    history: list = field(default_factory=list, repr=False)
    info: dict = field(default_factory=dict, repr=False)

    @property
    def optimal(self):
        return self.status == Status.OPTIMAL


def constraint_violation(p: ConicProblem, x, per_block=False):
    """Largest scaled violation of any constraint at ``x``.

    Each row is scaled by ``max(1, |rhs|, max|coef|)`` so the number is
    comparable across rows of very different magnitude.
    """
    x = np.asarray(x, float)
    parts = {}
    parts["bounds"] = float(max(np.max(p.lb - x, initial=0.0), np.max(x - p.ub, initial=0.0), 0.0))
    if p.A_ub.shape[0]:
        scale = np.maximum.reduce([np.ones(len(p.b_ub)), np.abs(p.b_ub), np.max(np.abs(p.A_ub), axis=1)])
        parts["ub"] = float(max(np.max((p.A_ub @ x - p.b_ub) / scale), 0.0))
    if p.A_eq.shape[0]:
        scale = np.maximum.reduce([np.ones(len(p.b_eq)), np.abs(p.b_eq), np.max(np.abs(p.A_eq), axis=1)])
        parts["eq"] = float(np.max(np.abs(p.A_eq @ x - p.b_eq) / scale))
    for i, blk in enumerate(p.socs):
        scale = max(1.0, abs(blk.h), float(np.max(np.abs(blk.g), initial=0.0)),
                    float(np.max(np.abs(blk.F), initial=0.0)), float(np.max(np.abs(blk.f), initial=0.0)))
        v = np.linalg.norm(blk.F @ x + blk.g) - (blk.f @ x + blk.h)
        parts[f"soc{i}:{blk.name}"] = max(float(v) / scale, 0.0)
    return parts if per_block else max(parts.values())


def propagate_bounds(A, b, lb, ub, passes=10):
    """Activity-based bound tightening over the rows ``A x <= b``.

    Returns tightened ``(lb, ub)`` or ``None`` when a row cannot be met.
    Rows touching a variable unbounded in the relevant direction are skipped.
    """
    lb, ub = lb.copy(), ub.copy()
    if A.shape[0] == 0:
        return lb, ub
    pos, neg = A > 0, A < 0
    for _ in range(passes):
        lo = np.where(pos, A * np.where(np.isfinite(lb), lb, 0.0), np.where(neg, A * np.where(np.isfinite(ub), ub, 0.0), 0.0))
        bad = (pos & ~np.isfinite(lb)) | (neg & ~np.isfinite(ub))
        usable = ~bad.any(axis=1)
        if not usable.any():
            break
        min_act = lo.sum(axis=1)
        slack = b - min_act
        if np.any(slack[usable] < -1e-9 * np.maximum(1.0, np.abs(b[usable]))):
            return None
        slack = np.maximum(slack, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            ub_cand = np.where(pos & usable[:, None], lo / np.where(pos, A, 1.0) + slack[:, None] / np.where(pos, A, 1.0), np.inf)
            lb_cand = np.where(neg & usable[:, None], lo / np.where(neg, A, 1.0) + slack[:, None] / np.where(neg, A, 1.0), -np.inf)
        new_ub = np.minimum(ub, ub_cand.min(axis=0))
        new_lb = np.maximum(lb, lb_cand.max(axis=0))
        # keep tiny numerical crossings from looking infeasible
        cross = (new_lb > new_ub) & (new_lb - new_ub < 1e-9)
        new_lb = np.where(cross, new_ub, new_lb)
        if np.any(new_lb > new_ub):
            return None
        changed = _moved(new_ub, ub) or _moved(new_lb, lb)
        lb, ub = new_lb, new_ub
        if not changed:
            break
    return lb, ub


def _moved(new, old):
    both = np.isfinite(new) & np.isfinite(old)
    if np.any(~both & (new != old)):
        return True
    return bool(np.any(np.abs(new[both] - old[both]) > 1e-12))


def _max_activity(A, lb, ub):
    """Row-wise sup of A x over the box; +inf where unbounded."""
    hi = np.where(A > 0, ub, np.where(A < 0, lb, 0.0))
    inf_part = (A != 0) & ~np.isfinite(hi)
    act = (A * np.where(inf_part, 0.0, hi)).sum(axis=1)
    return np.where(inf_part.any(axis=1), np.inf, act)


def _settings(max_iter, tol):
    s = clarabel.DefaultSettings()
    s.verbose = False
    s.max_iter = max_iter
    s.tol_gap_abs = tol
    s.tol_gap_rel = tol
    s.tol_feas = tol
    s.tol_infeas_abs = tol
    s.tol_infeas_rel = tol
    s.presolve_enable = True
    s.chordal_decomposition_enable = False
    return s


def _infeasible(t0, reason, **extra):
    cert = {"kind": reason}
    cert.update(extra)
    return SolveOutcome(Status.INFEASIBLE, wall_time=time.perf_counter() - t0, certificate=cert)


def solve_conic(p: ConicProblem, max_iter=200, tol=1e-8, feas_tol=FEAS_TOL) -> SolveOutcome:
    """Solve a conic problem to the package's status contract.

    ``Optimal`` outcomes are re-checked with :func:`constraint_violation`
    against ``feas_tol``; a failed re-check is reported as
    ``NumericalFailure``.  ``Infeasible`` outcomes carry a certificate:
    either a presolve conflict (row or bound index) or the dual ray.
    """
    t0 = time.perf_counter()
    n = p.n
    if np.any(p.lb > p.ub + 1e-12):
        j = int(np.argmax(p.lb - p.ub))
        return _infeasible(t0, "bounds", variable=j, lb=float(p.lb[j]), ub=float(p.ub[j]))

    # presolve on linear rows (equalities as two inequalities)
    A_all = np.vstack([p.A_ub, p.A_eq, -p.A_eq])
    b_all = np.concatenate([p.b_ub, p.b_eq, -p.b_eq])
    tight = propagate_bounds(A_all, b_all, p.lb, p.ub)
    if tight is None:
        return _infeasible(t0, "presolve")
    lb, ub = tight
    fixed = (ub - lb) <= 1e-12
    x_fix = np.where(fixed, lb, 0.0)
    free = np.flatnonzero(~fixed)
    nf = len(free)

    rows, rhs, cones = [], [], []

    def keep_linear(A, b, kind):
        bb = b - A @ x_fix
        Af = A[:, free]
        nz = np.any(Af != 0, axis=1)
        const_rows = ~nz
        if kind == "eq":
            bad = np.abs(bb[const_rows]) > feas_tol * np.maximum(1.0, np.abs(b[const_rows]))
        else:
            bad = bb[const_rows] < -feas_tol * np.maximum(1.0, np.abs(b[const_rows]))
        if np.any(bad):
            return False
        Af, bb = Af[nz], bb[nz]
        if kind == "ub" and len(bb):
            # drop rows that can never bind
            max_act = _max_activity(Af, lb[free], ub[free])
            keep = ~(max_act <= bb - 1e-9 * np.maximum(1.0, np.abs(bb)))
            Af, bb = Af[keep], bb[keep]
        if len(bb):
            rows.append(Af)
            rhs.append(bb)
            cones.append(clarabel.ZeroConeT(len(bb)) if kind == "eq" else clarabel.NonnegativeConeT(len(bb)))
        return True

    if not keep_linear(p.A_eq, p.b_eq, "eq"):
        return _infeasible(t0, "fixed-equality")
    if not keep_linear(p.A_ub, p.b_ub, "ub"):
        return _infeasible(t0, "fixed-inequality")

    # bounds on the free variables
    bound_rows, bound_rhs = [], []
    for jj, j in enumerate(free):
        if np.isfinite(ub[j]):
            r = np.zeros(nf)
            r[jj] = 1.0
            bound_rows.append(r)
            bound_rhs.append(ub[j])
        if np.isfinite(lb[j]):
            r = np.zeros(nf)
            r[jj] = -1.0
            bound_rows.append(r)
            bound_rhs.append(-lb[j])
    if bound_rows:
        rows.append(np.array(bound_rows))
        rhs.append(np.array(bound_rhs))
        cones.append(clarabel.NonnegativeConeT(len(bound_rhs)))

    for i, blk in enumerate(p.socs):
        g = blk.g + blk.F @ x_fix
        h = blk.h + blk.f @ x_fix
        F, f = blk.F[:, free], blk.f[free]
        if not np.any(F) and not np.any(f):
            if np.linalg.norm(g) > h + feas_tol * max(1.0, abs(h)):
                return _infeasible(t0, "fixed-soc", block=i)
            continue
        rows.append(-np.vstack([f[None, :], F]))
        rhs.append(np.concatenate([[h], g]))
        cones.append(clarabel.SecondOrderConeT(1 + F.shape[0]))

    if nf == 0:
        x = x_fix.copy()
        if constraint_violation(p, x) > feas_tol:
            return _infeasible(t0, "fixed-point")
        return SolveOutcome(Status.OPTIMAL, x=x, objective=float(p.c @ x), best_bound=float(p.c @ x),
                            wall_time=time.perf_counter() - t0)

    if rows:
        A = sp.csc_matrix(np.vstack(rows))
        b = np.concatenate(rhs)
    else:
        A = sp.csc_matrix((0, nf))
        b = np.zeros(0)
    P = sp.csc_matrix((nf, nf))
    solver = clarabel.DefaultSolver(P, p.c[free], A, b, cones, _settings(max_iter, tol))
    sol = solver.solve()
    status = str(sol.status)
    elapsed = time.perf_counter() - t0
    if status in ("Solved", "AlmostSolved"):
        x = x_fix.copy()
        x[free] = np.asarray(sol.x)
        viol = constraint_violation(p, x)
        obj = float(p.c @ x)
        gap = abs(sol.obj_val - sol.obj_val_dual) / max(1.0, abs(sol.obj_val))
        info = {"violation": viol, "gap": gap, "backend": status}
        # the reduced-accuracy exit is only kept when it still meets the full tolerances
        if viol > feas_tol or gap > max(tol, 1e-8) * 10:
            return SolveOutcome(Status.NUMERICAL_FAILURE, x=x, objective=obj, wall_time=elapsed,
                                iterations=sol.iterations, info=info)
        return SolveOutcome(Status.OPTIMAL, x=x, objective=obj, best_bound=obj, wall_time=elapsed,
                            iterations=sol.iterations, info=info)
    if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        return SolveOutcome(Status.INFEASIBLE, wall_time=elapsed, iterations=sol.iterations,
                            certificate={"kind": "dual-ray", "z": np.asarray(sol.z).tolist(), "backend": status})
    return SolveOutcome(Status.NUMERICAL_FAILURE, wall_time=elapsed, iterations=sol.iterations,
                        info={"backend": status})


def problem_to_json(p: ConicProblem, binaries=None):
    d = p.to_dict()
    if binaries is not None:
        d["binaries"] = [int(i) for i in binaries]
    return json.dumps(d)


def problem_from_json(text):
    d = json.loads(text)
    return ConicProblem.from_dict(d), d.get("binaries")
