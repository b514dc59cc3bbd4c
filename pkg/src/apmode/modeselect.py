"""AP mode selection: alternating, sequential and heuristic algorithms, plus an exhaustive oracle.

Every algorithm returns an :class:`AlgoReport` whose final powers come from
the minimum-power problem P1 on the selected TX set, so all reports are
checked against the same exact constraints by :func:`validate`.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .comm import CommStats, db_to_linear, rho_from_powers, sinr_all
from .errors import ExhaustedRestarts, Infeasible, SingularFIM, TimeLimitReached, TooLarge
from .scenario import ChannelEnsemble, Scenario, ap_target_ranges
from .sensing import GMatrices, crlb_many, crlb_trace, geometry_matrices
from .solver.conic import Status
from .solver.problems import (
    build_comm_subproblem,
    build_rx_subproblem,
    build_tx_subproblem,
    min_power_p1,
    solve_mip,
)

REL_TOL = 1e-6


@dataclass(frozen=True)
class ProblemInputs:
    """Everything the selection algorithms consume for one instance.

    ``gamma_c`` is linear.  ``ap_gains`` is the aggregate channel gain
    g_l used to rank transmitters; ``target_ranges`` ranks receivers.
    """

    stats: CommStats
    g: GMatrices
    gamma_c: float
    eta: float
    p_s: float
    p_max: float
    ap_gains: np.ndarray
    target_ranges: np.ndarray

    @property
    def n_aps(self):
        return self.stats.n_aps

    @property
    def n_ues(self):
        return self.stats.n_ues

    @classmethod
    def from_scenario(cls, s: Scenario, ensemble: ChannelEnsemble, stats: CommStats, gamma_c_db, eta, g=None):
        return cls(
            stats=stats,
            g=geometry_matrices(s) if g is None else g,
            gamma_c=float(db_to_linear(gamma_c_db)),
            eta=float(eta),
            p_s=s.p_s_watts,
            p_max=s.p_max_watts,
            ap_gains=ensemble.gain_ap,
            target_ranges=ap_target_ranges(s),
        )

    def with_eta(self, eta):
        return replace(self, eta=float(eta))


@dataclass(frozen=True)
class ModeAssignment:
    a: np.ndarray  # (L,) 0/1
    b: np.ndarray  # (L,) 0/1
    powers: np.ndarray  # (L, K), p_lk >= 0

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, float))
        object.__setattr__(self, "b", np.asarray(self.b, float))
        object.__setattr__(self, "powers", np.asarray(self.powers, float))

    @property
    def n_tx(self):
        return int(np.sum(self.a > 0.5))

    @property
    def n_rx(self):
        return int(np.sum(self.b > 0.5))

    @property
    def total(self):
        return self.n_tx + self.n_rx

    def to_dict(self):
        return {"a": self.a.astype(int).tolist(), "b": self.b.astype(int).tolist(), "powers": self.powers.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(np.array(data["a"], float), np.array(data["b"], float), np.array(data["powers"], float))


@dataclass
class CheckRow:
    name: str
    passed: bool
    residual: float  # > 0 means violated, in the constraint's natural units


@dataclass
class ValidationReport:
    rows: list

    @property
    def passed(self):
        return all(r.passed for r in self.rows)

    @property
    def failed(self):
        return [r for r in self.rows if not r.passed]

    def group_ok(self, prefix):
        return all(r.passed for r in self.rows if r.name.startswith(prefix))

    def __str__(self):
        return "\n".join(f"{'ok  ' if r.passed else 'FAIL'} {r.name:<16} residual={r.residual:.3e}" for r in self.rows)


def validate(assign: ModeAssignment, stats: CommStats, g: GMatrices, gamma_c, eta, p_s, p_max, rel_tol=REL_TOL):
    """Check an assignment against every constraint of the joint problem.

    Never raises for an infeasible assignment; each constraint yields one row.
    """
    a, b, p = assign.a, assign.b, assign.powers
    rows = []
    rows.append(CheckRow("binary", bool(np.all(np.isin(a, (0, 1))) and np.all(np.isin(b, (0, 1)))),
                         float(max(np.max(np.minimum(np.abs(a), np.abs(a - 1))), np.max(np.minimum(np.abs(b), np.abs(b - 1)))))))
    for l in range(len(a)):
        rows.append(CheckRow(f"mode[{l}]", bool(a[l] + b[l] <= 1), float(a[l] + b[l] - 1)))
    for l in range(len(a)):
        load = float(np.sum(p[l]))
        cap = float(a[l] * p_max)
        ok = load <= cap * (1 + rel_tol) + (0.0 if a[l] else 1e-12) and bool(np.all(p[l] >= -1e-12 * p_max))
        rows.append(CheckRow(f"power[{l}]", bool(ok), load - cap))
    rho = rho_from_powers(p, a)
    s = sinr_all(stats, rho)
    for k in range(stats.n_ues):
        rows.append(CheckRow(f"sinr[{k}]", bool(s[k] >= gamma_c * (1 - rel_tol)), float(gamma_c - s[k])))
    try:
        c = crlb_trace(g, a, b, p_s)
    except (SingularFIM, ValueError):
        c = math.inf
    rows.append(CheckRow("crlb", bool(c <= eta * (1 + rel_tol)), float(c - eta)))
    return ValidationReport(rows)


@dataclass
class AlgoReport:
    algorithm: str
    assignment: ModeAssignment | None
    n_tx: int
    n_rx: int
    total: int
    iterations: int
    wall_time: float
    sinr_ok: bool
    crlb_ok: bool
    restarts: int = 0
    converged: bool = True
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["assignment"] = None if self.assignment is None else self.assignment.to_dict()
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def _report(name, inp: ProblemInputs, a, b, iterations, t0, **kw):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    res = min_power_p1(inp.stats, a, inp.gamma_c, inp.p_max)
    if res.status != Status.OPTIMAL:
        raise Infeasible(f"power allocation failed for the selected TX set ({res.status.value})", stage="p1")
    assign = ModeAssignment(a, b, np.maximum(res.info["powers"], 0.0) * a[:, None])
    rep = validate(assign, inp.stats, inp.g, inp.gamma_c, inp.eta, inp.p_s, inp.p_max)
    return AlgoReport(
        algorithm=name, assignment=assign, n_tx=assign.n_tx, n_rx=assign.n_rx, total=assign.total,
        iterations=iterations, wall_time=time.perf_counter() - t0,
        sinr_ok=rep.group_ok("sinr") and rep.group_ok("power"), crlb_ok=rep.group_ok("crlb"), **kw,
    )


def _mip(m, stage, deadline, incumbent=None):
    out = solve_mip(m, deadline=deadline, incumbent=incumbent)
    if out.status == Status.TIME_LIMIT:
        raise TimeLimitReached(f"time limit reached in {stage}")
    if out.x is None or not np.isfinite(out.objective):
        raise Infeasible(f"{stage} is infeasible", stage=stage)
    return out


def solve_tx_subproblem(stats, g, b_fixed, gamma_c, eta, p_s, p_max, deadline=None, warm=None):
    """Fewest ISAC transmitters for a fixed RX set.

    Returns ``(A, powers)`` with A the L x L outer-product matrix and powers
    (L, K).  ``warm = (a, powers)`` seeds branch and bound with a known
    feasible point, which is kept on ties.
    """
    m, lay = build_tx_subproblem(stats, g, b_fixed, gamma_c, eta, p_s, p_max)
    x0 = None
    if warm is not None:
        a0, p0 = (np.asarray(w, float) for w in warm)
        x0 = np.zeros(lay.n)
        x0[lay.mat_slice()] = np.outer(a0, a0).ravel()
        x0[lay.rho_slice()] = np.sqrt(np.maximum(p0, 0.0)).T.ravel()
    out = _mip(m, "tx", deadline, x0)
    A = np.round(lay.mat(out.x))
    return A, (lay.rho(out.x) ** 2).T


def solve_rx_subproblem(g, a_fixed, eta, p_s, deadline=None, warm=None):
    """Fewest sensing receivers for a fixed TX set; returns the L x L matrix B.

    ``warm`` is an optional feasible RX vector kept on ties.
    """
    if not np.any(np.asarray(a_fixed) > 0.5):
        raise Infeasible("no transmitter selected", stage="rx")
    m, lay = build_rx_subproblem(g, a_fixed, eta, p_s)
    x0 = None if warm is None else np.outer(warm, warm).ravel().astype(float)
    out = _mip(m, "rx", deadline, x0)
    return np.round(lay.mat(out.x))


def solve_comm_subproblem(stats, gamma_c, p_max, deadline=None):
    """Fewest transmitters meeting every SINR target; returns the TX vector."""
    m, lay = build_comm_subproblem(stats, gamma_c, p_max)
    out = _mip(m, "comm", deadline)
    return np.round(out.x[lay.a_indices()])


def _deadline(time_limit):
    return None if time_limit is None else time.perf_counter() + time_limit


def alternating(inp: ProblemInputs, max_iter=100, max_restarts=50, seed=0, time_limit=None) -> AlgoReport:
    """Alternate between the TX and RX subproblems from a random RX set.

    A random RX draw for which the TX subproblem is infeasible is replaced
    by a fresh draw (a restart).  The iteration counter advances on every
    pass, restarts included.  Converged means two consecutive iterates
    coincide.  Each subproblem is seeded with the previous iterate, so a
    subproblem only moves on a strict improvement and ties cannot cycle.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    t0 = time.perf_counter()
    deadline = _deadline(time_limit)
    rng = np.random.default_rng(seed)
    L = inp.n_aps

    def draw():
        while True:
            b = rng.integers(0, 2, L).astype(float)
            if b.any():
                return b

    b = draw()
    a_prev = b_prev = p_prev = None
    restarts = 0
    converged = False
    i = 1
    while not converged and i < max_iter:
        try:
            warm = None if a_prev is None else (a_prev, p_prev)
            A, powers = solve_tx_subproblem(inp.stats, inp.g, b, inp.gamma_c, inp.eta, inp.p_s, inp.p_max,
                                            deadline, warm=warm)
        except Infeasible:
            restarts += 1
            if restarts >= max_restarts:
                raise ExhaustedRestarts(f"{restarts} random RX draws were all infeasible", stage="tx") from None
            b = draw()
            a_prev = b_prev = p_prev = None
            i += 1
            continue
        a = np.diag(A).copy()
        try:
            b_new = np.diag(solve_rx_subproblem(inp.g, a, inp.eta, inp.p_s, deadline, warm=b)).copy()
        except Infeasible:
            # cannot happen in exact arithmetic since b itself is feasible
            b_new = b
        if a_prev is not None and np.array_equal(a, a_prev) and np.array_equal(b_new, b_prev):
            converged = True
        a_prev, b_prev, p_prev, b = a, b_new, powers, b_new
        i += 1
    if a_prev is None:
        raise Infeasible("no feasible RX draw within the iteration budget", stage="tx")
    return _report("alternating", inp, a_prev, b_prev, i - 1, t0, restarts=restarts, converged=converged)


def sequential(inp: ProblemInputs, time_limit=None) -> AlgoReport:
    """Place transmitters for communication only, then the fewest receivers for sensing."""
    t0 = time.perf_counter()
    deadline = _deadline(time_limit)
    a = solve_comm_subproblem(inp.stats, inp.gamma_c, inp.p_max, deadline)
    b = np.diag(solve_rx_subproblem(inp.g, a, inp.eta, inp.p_s, deadline)).copy()
    return _report("sequential", inp, a, b, 2, t0, extra={"stage1_tx": int(a.sum())})


def default_r_init(n_aps):
    return max(2, math.ceil(n_aps / 4))


def _order(values, descending=False):
    v = np.asarray(values, float)
    key = -v if descending else v
    return np.lexsort((np.arange(len(v)), key))  # ties by index


def heuristic(inp: ProblemInputs, r_init=None, time_limit=None) -> AlgoReport:
    """Greedy selection from a gain-sorted TX list and a distance-sorted RX list.

    The closest ``r_init`` APs are taken as receivers first, and
    transmitters are added in gain order (skipping receivers) until P1 is
    feasible.  While the CRLB exceeds eta one more transmitter is added;
    with the TX list exhausted the next-closest free AP becomes a receiver.
    Finally the farthest receivers are dropped while the CRLB stays within
    eta.
    """
    t0 = time.perf_counter()
    deadline = _deadline(time_limit)
    L = inp.n_aps
    r = default_r_init(L) if r_init is None else int(r_init)
    if r < 1:
        raise ValueError("r_init must be at least 1")
    r = min(r, L - 1)
    tx_order = _order(inp.ap_gains, descending=True)
    rx_order = _order(inp.target_ranges)
    a = np.zeros(L)
    b = np.zeros(L)
    b[rx_order[:r]] = 1
    n_rx = r
    tx_queue = [l for l in tx_order if not b[l]]
    p1_calls = 0

    def add_tx():
        while tx_queue:
            l = tx_queue.pop(0)
            if not b[l]:
                a[l] = 1
                return True
        return False

    def add_rx():
        nonlocal n_rx
        while n_rx < L:
            l = rx_order[n_rx]
            n_rx += 1
            if not a[l]:
                b[l] = 1
                return True
        return False

    def crlb():
        return float(crlb_many(inp.g, a, b, inp.p_s)[0])

    if not add_tx():
        raise Infeasible("no AP left for transmission", stage="heuristic")
    while True:
        if deadline is not None and time.perf_counter() > deadline:
            raise TimeLimitReached("time limit reached in heuristic")
        p1_calls += 1
        if min_power_p1(inp.stats, a, inp.gamma_c, inp.p_max).status == Status.OPTIMAL:
            break
        if not add_tx():
            raise Infeasible("SINR targets unreachable with every available AP", stage="heuristic")
    while crlb() > inp.eta:
        if not (add_tx() or add_rx()):
            raise Infeasible("sensing threshold unreachable with every AP active", stage="heuristic")
    # prune the farthest receivers; the last removal that breaks eta is undone
    active_rx = [l for l in rx_order if b[l]]
    while len(active_rx) > 1:
        far = active_rx[-1]
        b[far] = 0
        if crlb() > inp.eta:
            b[far] = 1
            break
        active_rx.pop()
    return _report("heuristic", inp, a, b, p1_calls, t0, extra={"r_init": r})


def exhaustive_oracle(inp: ProblemInputs, l_cap=10) -> AlgoReport:
    """Minimum total active APs over all 3^L mode assignments.

    Feasible means P1 is solvable for the TX set and the exact CRLB is
    within eta.  Ties go to the lexicographically smallest ``(a, b)``.
    """
    L = inp.n_aps
    if L > l_cap:
        raise TooLarge(f"{L} APs exceed the enumeration cap of {l_cap}")
    t0 = time.perf_counter()
    modes = np.array(np.meshgrid(*([np.arange(3)] * L), indexing="ij")).reshape(L, -1).T
    a_all = (modes == 1).astype(float)
    b_all = (modes == 2).astype(float)
    crlb = crlb_many(inp.g, a_all, b_all, inp.p_s)
    ok = crlb <= inp.eta * (1 + REL_TOL)
    a_all, b_all = a_all[ok], b_all[ok]
    total = a_all.sum(1) + b_all.sum(1)
    keys = [b_all[:, j] for j in range(L - 1, -1, -1)] + [a_all[:, j] for j in range(L - 1, -1, -1)] + [total]
    order = np.lexsort(keys)
    cache = {}
    checked = 0
    for idx in order:
        a = a_all[idx]
        key = a.tobytes()
        if key not in cache:
            checked += 1
            cache[key] = min_power_p1(inp.stats, a, inp.gamma_c, inp.p_max).status == Status.OPTIMAL
        if cache[key]:
            return _report("oracle", inp, a, b_all[idx], checked, t0)
    raise Infeasible("no mode assignment meets both constraints", stage="oracle")


ALGORITHMS = {
    "alternating": alternating,
    "sequential": sequential,
    "heuristic": heuristic,
    "oracle": exhaustive_oracle,
}
