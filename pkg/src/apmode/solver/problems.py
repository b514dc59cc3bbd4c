"""Problem builders for the power and mode-selection subproblems.

Variable layouts (all row-major):

* ``rho``: K x L amplitudes, ``rho[k, l] = sqrt(p_lk)``.
* ``A`` / ``B``: L x L linearized outer products of the TX / RX mode vectors.
* ``a``: L TX indicators (communication-only problem).

Communication rows use noise-normalized statistics so all data are O(1).
Per-AP power caps are written as ``||rho[:, l]|| <= sqrt(P_max) * a_l``:
identical to ``sum_k p_lk <= a_l P_max`` for binary ``a_l`` and the convex
hull of it for fractional ``a_l``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..comm import CommStats, psd_sqrt
from ..sensing import GMatrices, linear_sensing_constraint
from .bnb import MipProblem, branch_and_bound
from .conic import ConicProblem, SOCBlock, SolveOutcome, Status, solve_conic


@dataclass(frozen=True)
class Layout:
    n_aps: int
    n_ues: int
    rho_start: int | None = None
    mat_start: int | None = None  # A or B block
    a_start: int | None = None
    t_index: int | None = None
    n: int = 0

    def rho_slice(self):
        return slice(self.rho_start, self.rho_start + self.n_ues * self.n_aps)

    def mat_slice(self):
        return slice(self.mat_start, self.mat_start + self.n_aps**2)

    def diag_indices(self):
        return self.mat_start + np.arange(self.n_aps) * (self.n_aps + 1)

    def a_indices(self):
        return self.a_start + np.arange(self.n_aps)

    def rho(self, x):
        return np.asarray(x)[self.rho_slice()].reshape(self.n_ues, self.n_aps)

    def mat(self, x):
        return np.asarray(x)[self.mat_slice()].reshape(self.n_aps, self.n_aps)


def comm_cones(stats: CommStats, gamma_c, n, rho_start):
    """SINR cones for every UE acting on a rho block at ``rho_start`` of an n-vector."""
    s = stats.normalized()
    K, L = s.n_ues, s.n_aps
    sg = np.sqrt(gamma_c)
    roots = [[psd_sqrt(s.c_mats[k, i]) for i in range(K)] for k in range(K)]
    blocks = []
    for k in range(K):
        F = np.zeros((K * L + 1, n))
        for i in range(K):
            F[i * L:(i + 1) * L, rho_start + i * L: rho_start + (i + 1) * L] = sg * roots[k][i]
        g = np.zeros(K * L + 1)
        g[-1] = sg
        f = np.zeros(n)
        f[rho_start + k * L: rho_start + (k + 1) * L] = s.d[k]
        blocks.append(SOCBlock(F, g, f, 0.0, name=f"sinr{k}"))
    return blocks


def power_cap_cones(n_aps, n_ues, p_max, n, rho_start, switch_index=None):
    """``||rho[:, l]|| <= sqrt(P_max) * a_l`` (or a constant cap when switch_index is None)."""
    blocks = []
    sp = np.sqrt(p_max)
    for l in range(n_aps):
        F = np.zeros((n_ues, n))
        F[np.arange(n_ues), rho_start + np.arange(n_ues) * n_aps + l] = 1.0
        f = np.zeros(n)
        h = 0.0
        if switch_index is None:
            h = sp
        else:
            f[switch_index(l)] = sp
        blocks.append(SOCBlock(F, np.zeros(n_ues), f, h, name=f"cap{l}"))
    return blocks


def outer_product_rows(n_aps, n, start):
    """Linear rows forcing an L x L block to equal x x^T once its diagonal is binary.

    0 <= X_ij <= X_jj  and  0 <= X_ii - X_ij <= 1 - X_jj, all i != j.
    The lower bound X_ij >= 0 is left to variable bounds.
    """
    L = n_aps
    rows, rhs = [], []
    for i in range(L):
        for j in range(L):
            if i == j:
                continue
            ij, ii, jj = start + i * L + j, start + i * L + i, start + j * L + j
            r = np.zeros(n)
            r[ij], r[jj] = 1.0, -1.0  # X_ij - X_jj <= 0
            rows.append(r)
            rhs.append(0.0)
            r = np.zeros(n)
            r[ij], r[ii] = 1.0, -1.0  # X_ij - X_ii <= 0
            rows.append(r)
            rhs.append(0.0)
            r = np.zeros(n)
            r[ii], r[ij], r[jj] = 1.0, -1.0, 1.0  # X_ii - X_ij + X_jj <= 1
            rows.append(r)
            rhs.append(1.0)
    return np.array(rows), np.array(rhs)


# Relaxations work with G normalized by its largest entry; in those units a
# Fisher determinant below this is treated as singular.
REL_DET_FLOOR = 1e-12


def sensing_rows(g: GMatrices, eta, p_s, n, start, *, a=None, b=None):
    """Cross-multiplied sensing row plus the rows that keep the FIM nonsingular.

    Returns ``(A, b)`` with three rows over the free L x L block at ``start``:

    1. ``num(diag X) - eta * p_s * den(X) <= 0``;
    2. ``den(X) >= max(eps_det, REL_DET_FLOOR * scale**2)``;
    3. ``sum(diag X) >= 1`` over the APs that add range information.

    A selection with no informative free-side AP has a singular Fisher
    matrix, and row 2 alone cannot exclude it once G is normalized (the
    floor sits below solver tolerance), hence row 3.  Once an informative
    AP is selected, ``num > 0`` and row 1 keeps ``den`` away from zero.  A fixed side that zeroes every
    determinant coefficient yields a constant infeasible row.
    """
    rows = linear_sensing_constraint(g, eta, p_s, a=a, b=b)
    L = g.n_aps
    scale = float(max(np.max(np.abs(g.g_a)), np.max(np.abs(g.g_b)), np.max(np.abs(g.g_c))))
    scale = scale if scale > 0 else 1.0
    num = rows.num_coef / scale
    den = rows.den_coef / scale**2
    diag = start + np.arange(L) * (L + 1)
    r1 = np.zeros(n)
    r1[diag] += num
    r1[start:start + L * L] -= rows.eta * rows.p_s * scale * den
    r1_norm = np.max(np.abs(r1)) or 1.0
    r2 = np.zeros(n)
    r2[start:start + L * L] = -den
    r2_norm = np.max(np.abs(r2)) or 1.0
    # an AP whose pairs carry no range information can never make den positive
    useful = np.abs(num) > 1e-9 * (np.max(np.abs(num)) or 1.0)
    r3 = np.zeros(n)
    r3[diag[useful]] = -1.0
    floor = max(rows.eps_det / scale**2, REL_DET_FLOOR)
    if not np.any(den) or not np.any(useful):
        return np.vstack([r1 / r1_norm, r2, r3]), np.array([0.0, -1.0, -1.0])
    A = np.vstack([r1 / r1_norm, r2 / r2_norm, r3])
    return A, np.array([0.0, -floor / r2_norm, -1.0])


def build_min_power_p1(stats: CommStats, a, gamma_c, p_max):
    """P1: minimum total transmit power for a fixed TX set ``a``."""
    a = np.asarray(a, float)
    K, L = stats.n_ues, stats.n_aps
    n = K * L + 1
    lay = Layout(L, K, rho_start=0, t_index=K * L, n=n)
    c = np.zeros(n)
    c[-1] = 1.0
    lb = np.zeros(n)
    ub = np.full(n, np.inf)
    off = np.flatnonzero(a < 0.5)
    for l in off:
        ub[np.arange(K) * L + l] = 0.0
    socs = comm_cones(stats, gamma_c, n, 0)
    socs += power_cap_cones(L, K, p_max, n, 0)
    # epigraph of total power: ||(2 rho, t - 1)|| <= t + 1
    F = np.zeros((K * L + 1, n))
    F[np.arange(K * L), np.arange(K * L)] = 2.0
    F[-1, -1] = 1.0
    gvec = np.zeros(K * L + 1)
    gvec[-1] = -1.0
    f = np.zeros(n)
    f[-1] = 1.0
    socs.append(SOCBlock(F, gvec, f, 1.0, name="power-epigraph"))
    return ConicProblem(c=c, socs=socs, lb=lb, ub=ub), lay


def min_power_p1(stats: CommStats, a, gamma_c, p_max, **conic_kwargs) -> SolveOutcome:
    """Solve P1; an optimal outcome carries ``info['powers']`` as an (L, K) matrix."""
    p, lay = build_min_power_p1(stats, a, gamma_c, p_max)
    out = solve_conic(p, **conic_kwargs)
    if out.status == Status.OPTIMAL:
        rho = lay.rho(out.x)
        out.info["powers"] = (rho**2).T
        out.info["rho"] = rho
        out.objective = float(np.sum(rho**2))
    return out


def build_tx_subproblem(stats: CommStats, g: GMatrices, b_fixed, gamma_c, eta, p_s, p_max, branch_offdiag=False):
    """TX subproblem: fewest ISAC transmitters for a fixed receiver set."""
    b = np.asarray(b_fixed, float)
    K, L = stats.n_ues, stats.n_aps
    n = L * L + K * L
    lay = Layout(L, K, mat_start=0, rho_start=L * L, n=n)
    c = np.zeros(n)
    c[lay.diag_indices()] = 1.0
    lb = np.zeros(n)
    ub = np.concatenate([np.ones(L * L), np.full(K * L, np.inf)])
    for l in np.flatnonzero(b > 0.5):
        ub[l * L + l] = 0.0  # an RX AP cannot transmit
    A1, b1 = outer_product_rows(L, n, 0)
    A2, b2 = sensing_rows(g, eta, p_s, n, 0, b=b)
    socs = comm_cones(stats, gamma_c, n, lay.rho_start)
    socs += power_cap_cones(L, K, p_max, n, lay.rho_start, switch_index=lambda l: l * L + l)
    prob = ConicProblem(c=c, socs=socs, A_ub=np.vstack([A1, A2]), b_ub=np.concatenate([b1, b2]), lb=lb, ub=ub)
    binaries = np.arange(L * L) if branch_offdiag else lay.diag_indices()
    return MipProblem(prob, binaries), lay


def build_rx_subproblem(g: GMatrices, a_fixed, eta, p_s, branch_offdiag=False):
    """RX subproblem: fewest sensing receivers for a fixed transmitter set."""
    a = np.asarray(a_fixed, float)
    L = g.n_aps
    n = L * L
    lay = Layout(L, 0, mat_start=0, n=n)
    c = np.zeros(n)
    c[lay.diag_indices()] = 1.0
    lb = np.zeros(n)
    ub = np.ones(n)
    for l in np.flatnonzero(a > 0.5):
        ub[l * L + l] = 0.0  # a TX AP cannot receive
    A1, b1 = outer_product_rows(L, n, 0)
    A2, b2 = sensing_rows(g, eta, p_s, n, 0, a=a)
    prob = ConicProblem(c=c, A_ub=np.vstack([A1, A2]), b_ub=np.concatenate([b1, b2]), lb=lb, ub=ub)
    binaries = np.arange(n) if branch_offdiag else lay.diag_indices()
    return MipProblem(prob, binaries), lay


def build_comm_subproblem(stats: CommStats, gamma_c, p_max):
    """Communication-only subproblem: fewest transmitters meeting every SINR target, sensing ignored."""
    K, L = stats.n_ues, stats.n_aps
    n = L + K * L
    lay = Layout(L, K, a_start=0, rho_start=L, n=n)
    c = np.zeros(n)
    c[:L] = 1.0
    lb = np.zeros(n)
    ub = np.concatenate([np.ones(L), np.full(K * L, np.inf)])
    socs = comm_cones(stats, gamma_c, n, L)
    socs += power_cap_cones(L, K, p_max, n, L, switch_index=lambda l: l)
    return MipProblem(ConicProblem(c=c, socs=socs, lb=lb, ub=ub), np.arange(L)), lay


def solve_mip(m: MipProblem, **kw):
    kw.setdefault("integral_objective", True)
    return branch_and_bound(m, **kw)
