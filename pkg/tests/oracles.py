"""Independent reference implementations used only by the tests.

None of these share code with the package's solvers: the SOCP reference is
a textbook log-barrier method, the power oracle is a zooming grid search
and the subset oracles enumerate modes directly.
"""

import itertools

import numpy as np

from apmode.sensing import crlb_many


def barrier_socp(c, socs, A, b, lb, ub, x0, mu=8.0, gap=1e-11, max_newton=200):
    """Minimize c @ x over SOC blocks (F, g, f, h), A x <= b and a finite box.

    ``x0`` must be strictly feasible.  Each cone uses the barrier
    -log((f x + h)^2 - ||F x + g||^2) with the extra -log(f x + h) keeping
    the iterate in the right branch.
    """
    x = np.array(x0, float)
    n = len(x)
    m_count = 2 * len(socs) + len(b) + 2 * n

    def phi(x):
        val = 0.0
        for F, g, f, h in socs:
            u, s = F @ x + g, f @ x + h
            q = s * s - u @ u
            if s <= 0 or q <= 0:
                return np.inf
            val -= np.log(q) + np.log(s)
        r = b - A @ x
        if np.any(r <= 0) or np.any(x <= lb) or np.any(x >= ub):
            return np.inf
        return val - np.sum(np.log(r)) - np.sum(np.log(x - lb)) - np.sum(np.log(ub - x))

    def grad_hess(x):
        gr = np.zeros(n)
        H = np.zeros((n, n))
        for F, g, f, h in socs:
            u, s = F @ x + g, f @ x + h
            q = s * s - u @ u
            dq = 2 * s * f - 2 * F.T @ u
            d2q = 2 * np.outer(f, f) - 2 * F.T @ F
            gr -= dq / q + f / s
            H += np.outer(dq, dq) / q**2 - d2q / q + np.outer(f, f) / s**2
        r = b - A @ x
        gr += A.T @ (1 / r)
        H += A.T @ (A / r[:, None] ** 2)
        gr += -1 / (x - lb) + 1 / (ub - x)
        H += np.diag(1 / (x - lb) ** 2 + 1 / (ub - x) ** 2)
        return gr, H

    t = 1.0
    while m_count / t > gap:
        for _ in range(max_newton):
            gr, H = grad_hess(x)
            gr = t * c + gr
            dx = -np.linalg.solve(H, gr)
            dec = -gr @ dx
            if dec / 2 <= 1e-12:
                break
            step = 1.0
            f0 = t * (c @ x) + phi(x)
            while True:
                xn = x + step * dx
                fn = t * (c @ xn) + phi(xn)
                if np.isfinite(fn) and fn <= f0 - 0.25 * step * dec:
                    break
                step *= 0.5
                if step < 1e-16:
                    break
            x = xn if step >= 1e-16 else x
            if step < 1e-16:
                break
        t *= mu
    return x, float(c @ x)


def sinr_batch(stats, rho):
    """SINR of every UE for a batch of amplitude matrices ``rho`` (M, K, L), written out term by term."""
    C = np.real(stats.c_mats)
    num = np.einsum("kl,mkl->mk", stats.d, rho) ** 2
    den = np.einsum("mil,kilr,mir->mk", rho, C, rho) + stats.sigma2
    return num / den


def p1_grid(stats, gamma_c, p_max, levels=4, points=301):
    """Minimum total power for two power variables by zooming grid search.

    Works for (K, L) = (2, 1) or (1, 2): the two unknowns are the entries of
    the (L, K) power matrix.  Returns ``inf`` when no grid point is feasible.
    """
    K, L = stats.n_ues, stats.n_aps
    assert K * L == 2
    lo, hi = np.zeros(2), np.full(2, float(p_max))
    best = np.inf
    for _ in range(levels):
        g1, g2 = np.meshgrid(np.linspace(lo[0], hi[0], points), np.linspace(lo[1], hi[1], points), indexing="ij")
        P = np.stack([g1.ravel(), g2.ravel()], axis=1)
        ok = np.ones(len(P), bool)
        if L == 1:
            ok &= P.sum(1) <= p_max * (1 + 1e-12)
        else:
            ok &= (P[:, 0] <= p_max) & (P[:, 1] <= p_max)
        rho = np.sqrt(P.reshape(-1, L, K)).transpose(0, 2, 1)  # (M, K, L)
        ok &= np.all(sinr_batch(stats, rho) >= gamma_c, axis=1)
        if not ok.any():
            return np.inf, None
        tot = P.sum(1)
        j = int(np.argmin(np.where(ok, tot, np.inf)))
        best = tot[j]
        step = (hi - lo) / (points - 1)
        lo = np.maximum(P[j] - 3 * step, 0.0)
        hi = np.minimum(P[j] + 3 * step, p_max)
    return best, P[j]


def subsets_by_size(candidates):
    candidates = list(candidates)
    for r in range(len(candidates) + 1):
        for combo in itertools.combinations(candidates, r):
            yield combo


def min_rx_by_enumeration(g, a, eta, p_s, rel=1e-9):
    """Smallest RX set disjoint from ``a`` with CRLB <= eta (exact evaluation)."""
    a = np.asarray(a, float)
    L = len(a)
    free = [l for l in range(L) if a[l] < 0.5]
    for combo in subsets_by_size(free):
        b = np.zeros(L)
        b[list(combo)] = 1
        if crlb_many(g, a, b, p_s)[0] <= eta * (1 + rel):
            return len(combo), b
    return None, None


def min_tx_by_enumeration(p1_feasible, L, b=None, sensing_ok=None):
    """Smallest TX set (disjoint from ``b``) passing ``p1_feasible`` and ``sensing_ok``."""
    free = [l for l in range(L) if b is None or b[l] < 0.5]
    for combo in subsets_by_size(free):
        a = np.zeros(L)
        a[list(combo)] = 1
        if sensing_ok is not None and not sensing_ok(a):
            continue
        if p1_feasible(a):
            return len(combo), a
    return None, None


def fim_entries_loop(ap_xy, target, rcs, xi, n_antennas, a, b, p_s):
    """Fisher matrix entries built from raw geometry, one TX-RX pair at a time."""
    fxx = fyy = fxy = 0.0
    for m in range(len(a)):
        for n in range(len(b)):
            if not (a[m] and b[n]):
                continue
            rm = np.hypot(*(ap_xy[m] - target))
            rn = np.hypot(*(ap_xy[n] - target))
            cxm, cym = (ap_xy[m] - target) / rm
            cxn, cyn = (ap_xy[n] - target) / rn
            w = p_s * xi * abs(rcs[m, n]) ** 2 * n_antennas**2 / (rm**2 * rn**2)
            fxx += w * (cxm + cxn) ** 2
            fyy += w * (cym + cyn) ** 2
            fxy += w * (cxm + cxn) * (cym + cyn)
    return fxx, fyy, fxy
