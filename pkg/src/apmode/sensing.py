"""Multistatic localization: geometry matrices, CRLB trace, Fisher-information oracle.

Rows of every L x L matrix index the transmitting AP, columns the receiving AP.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometry, InvalidConfig, SingularFIM
from .scenario import SPEED_OF_LIGHT, Scenario, ap_target_ranges

EPS_DET = 1e-30
# a single TX-RX pair gives a rank-one FIM whose determinant is pure rounding
# noise; anything below this fraction of f_xx * f_yy counts as singular
REL_SINGULAR = 1e-10
SNAPSHOT_VERSION = 1


def propagation_delay(r_m, r_n):
    """Bistatic delay TX -> target -> RX in seconds."""
    r_m, r_n = np.asarray(r_m, float), np.asarray(r_n, float)
    if np.any(r_m <= 0) or np.any(r_n <= 0):
        raise DegenerateGeometry("ranges must be positive")
    out = (r_m + r_n) / SPEED_OF_LIGHT
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class GMatrices:
    g_a: np.ndarray
    g_b: np.ndarray
    g_c: np.ndarray
    xi: float
    alpha: np.ndarray

    @property
    def n_aps(self):
        return self.g_a.shape[0]

    def to_dict(self):
        return {
            "format": "apmode.gmatrices",
            "version": SNAPSHOT_VERSION,
            "xi": self.xi,
            "g_a": self.g_a.tolist(),
            "g_b": self.g_b.tolist(),
            "g_c": self.g_c.tolist(),
            "alpha": self.alpha.tolist(),
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != "apmode.gmatrices" or data.get("version") != SNAPSHOT_VERSION:
            raise InvalidConfig("not a version-1 gmatrices snapshot")
        arr = {k: np.array(data[k], float) for k in ("g_a", "g_b", "g_c", "alpha")}
        return cls(xi=float(data["xi"]), **arr)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def xi_constant(bandwidth_hz, n_aps, noise_power):
    return 8.0 * np.pi**2 * bandwidth_hz**2 / (n_aps**2 * SPEED_OF_LIGHT**2 * noise_power)


def geometry_matrices(s: Scenario, xi_n_aps=None) -> GMatrices:
    """Build G_a, G_b, G_c for the scenario's target.

    ``xi_n_aps`` overrides the AP count in the xi denominator (defaults to
    all deployed APs).
    """
    ranges = ap_target_ranges(s)
    L = s.n_aps
    xi = xi_constant(s.sensing_bandwidth_hz, L if xi_n_aps is None else xi_n_aps, s.noise_power_sensing)
    cx = (s.ap_positions[:, 0] - s.target_position[0]) / ranges
    cy = (s.ap_positions[:, 1] - s.target_position[1]) / ranges
    sx = cx[:, None] + cx[None, :]
    sy = cy[:, None] + cy[None, :]
    alpha = 1.0 / np.outer(ranges**2, ranges**2)
    w = xi * alpha * np.abs(s.rcs) ** 2 * s.n_antennas**2
    return GMatrices(g_a=w * sx**2, g_b=w * sy**2, g_c=w * sx * sy, xi=float(xi), alpha=alpha)


def _check_modes(a, b):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if np.any(a * b != 0):
        raise ValueError("an AP cannot transmit and receive at once")
    return a, b


def crlb_trace(g: GMatrices, a, b, p_s, singular="raise"):
    """Trace of the position CRLB for TX mode vector ``a`` and RX vector ``b``.

    Uses the ratio form with A = a a^T and B = b b^T.  A singular Fisher
    matrix raises :class:`SingularFIM`, or returns ``inf`` when
    ``singular="inf"``.
    """
    a, b = _check_modes(a, b)
    A = np.outer(a, a)
    B = np.outer(b, b)
    num = a @ (g.g_a + g.g_b).T @ b
    den = np.trace(((A @ g.g_b).T @ g.g_a - (A @ g.g_c).T @ g.g_c) @ B)
    if den <= _det_floor(a @ g.g_a @ b, a @ g.g_b @ b):
        if singular == "inf":
            return float("inf")
        raise SingularFIM("Fisher information is singular for this mode selection")
    return float(num / (p_s * den))


def _det_floor(fxx, fyy):
    return np.maximum(EPS_DET, REL_SINGULAR * np.abs(fxx * fyy))


def crlb_many(g: GMatrices, a, b, p_s):
    """Vectorized CRLB over rows of ``a`` and ``b`` (shape (M, L)); ``inf`` if singular."""
    a = np.atleast_2d(np.asarray(a, float))
    b = np.atleast_2d(np.asarray(b, float))
    fxx = np.einsum("ml,ln,mn->m", a, g.g_a, b)
    fyy = np.einsum("ml,ln,mn->m", a, g.g_b, b)
    fxy = np.einsum("ml,ln,mn->m", a, g.g_c, b)
    det = fxx * fyy - fxy**2
    ok = det > _det_floor(fxx, fyy)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(ok, (fxx + fyy) / np.where(ok, det, 1.0), np.inf)
    return out / p_s


@dataclass(frozen=True)
class FisherInfo:
    f_xx: float
    f_yy: float
    f_xy: float

    @property
    def det(self):
        return self.f_xx * self.f_yy - self.f_xy**2

    def matrix(self):
        return np.array([[self.f_xx, self.f_xy], [self.f_xy, self.f_yy]])


def fim_oracle(g: GMatrices, a, b, p_s):
    """Fisher matrix assembled pair by pair, and the trace of its inverse.

    Each (TX m, RX n) pair adds ``p_s * [G]_{mn}`` to the matching entry.
    The singularity test uses the same thresholds as :func:`crlb_trace`
    applied to ``det / p_s^2``.
    """
    a, b = _check_modes(a, b)
    fxx = fyy = fxy = 0.0
    for m in range(len(a)):
        if not a[m]:
            continue
        for n in range(len(b)):
            if not b[n]:
                continue
            w = a[m] * b[n] * p_s
            fxx += w * g.g_a[m, n]
            fyy += w * g.g_b[m, n]
            fxy += w * g.g_c[m, n]
    info = FisherInfo(fxx, fyy, fxy)
    if info.det / p_s**2 <= max(EPS_DET, REL_SINGULAR * abs(fxx * fyy) / p_s**2):
        err = SingularFIM("Fisher information is singular for this mode selection")
        err.info = info  # entries stay inspectable, e.g. for a single TX-RX pair
        raise err
    return info, (fxx + fyy) / info.det


@dataclass(frozen=True)
class LinearSensingRows:
    """Linear sensing constraint over a free L x L matrix variable X (A or B).

    With the other side fixed, for X flattened row-major:
        num_coef @ diag(X) - eta * p_s * den_coef @ vec(X) <= 0
        den_coef @ vec(X) >= eps_det
    """

    num_coef: np.ndarray  # (L,) acts on diag(X)
    den_coef: np.ndarray  # (L*L,) acts on vec(X)
    eta: float
    p_s: float
    eps_det: float = EPS_DET

    def residual(self, x_mat):
        """Left-hand side of the first row; <= 0 means the sensing threshold holds."""
        x_mat = np.asarray(x_mat, float)
        return float(self.num_coef @ np.diag(x_mat) - self.eta * self.p_s * self.den_coef @ x_mat.ravel())

    def denominator(self, x_mat):
        return float(self.den_coef @ np.asarray(x_mat, float).ravel())

    def satisfied(self, x_mat):
        return self.residual(x_mat) <= 0 and self.denominator(x_mat) >= self.eps_det


def linear_sensing_constraint(g: GMatrices, eta, p_s, *, a=None, b=None) -> LinearSensingRows:
    """Cross-multiplied sensing row with exactly one of ``a``/``b`` fixed.

    Fixed ``b`` (free A): denominator = <G_a B G_b^T - G_c B G_c^T, A>.
    Fixed ``a`` (free B): denominator = <G_a^T A G_b - G_c^T A G_c, B>.
    """
    if (a is None) == (b is None):
        raise ValueError("fix exactly one of a or b")
    if not eta > 0:
        raise ValueError("eta must be positive")
    gs = g.g_a + g.g_b
    if b is not None:
        b = np.asarray(b, float)
        B = np.outer(b, b)
        num = gs.T @ b  # diag(A)^T (G_a+G_b)^T b
        den = g.g_a @ B @ g.g_b.T - g.g_c @ B @ g.g_c.T
    else:
        a = np.asarray(a, float)
        A = np.outer(a, a)
        num = gs @ a  # a^T (G_a+G_b)^T diag(B)
        den = g.g_a.T @ A @ g.g_b - g.g_c.T @ A @ g.g_c
    return LinearSensingRows(num_coef=num, den_coef=den.ravel(), eta=float(eta), p_s=float(p_s))
