"""Downlink precoding statistics, effective SINR and its second-order-cone form."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidConfig, NotPSD, ZeroChannel
from .scenario import ChannelEnsemble

SNAPSHOT_VERSION = 1


def maximum_ratio(h, regularize=False):
    """Normalized maximum-ratio precoders ``w = conj(h) / |h|``.

    ``h`` has the antenna index last.  A zero channel raises
    :class:`ZeroChannel` unless ``regularize`` is set, in which case the
    precoder falls back to the first antenna.
    """
    h = np.asarray(h)
    norm = np.linalg.norm(h, axis=-1, keepdims=True)
    zero = norm == 0
    if np.any(zero):
        if not regularize:
            raise ZeroChannel("channel with zero norm")
        fallback = np.zeros(h.shape[-1], complex)
        fallback[0] = 1.0
        return np.where(zero, fallback, np.conj(h) / np.where(zero, 1.0, norm))
    return np.conj(h) / norm


def local_mmse(h, regularize=False, noise_to_power=1.0):
    """Normalized local MMSE precoders using only each AP's own channels.

    AP l uses ``(sum_k h_kl^* h_kl^T + noise_to_power I)^{-1} h_il^*``,
    i.e. every AP serves every UE.  ``h`` has shape (T, K, L, N).
    """
    h = np.asarray(h)
    n = h.shape[-1]
    hc = np.conj(h)
    # gram[t, l] = sum_k conj(h_kl) h_kl^T, an N x N Hermitian matrix
    gram = np.einsum("tkln,tklm->tlnm", hc, h) + noise_to_power * np.eye(n)
    v = np.linalg.solve(gram[:, None], hc[..., None])[..., 0]  # (T, K, L, N)
    return maximum_ratio(np.conj(v), regularize=regularize)


PRECODERS: dict[str, Callable] = {"mr": maximum_ratio, "lp-mmse": local_mmse}


def compute_precoders(e: ChannelEnsemble, kind="mr", regularize=False, **params) -> np.ndarray:
    """Per-realization precoders ``w[t, i, l]`` for UE i at AP l, unit norm.

    ``kind`` is ``"mr"`` (default) or ``"lp-mmse"``; extra keyword
    arguments go to the precoder function.
    """
    if e.h.shape[0] < 1:
        raise InvalidConfig("empty channel ensemble")
    try:
        fn = PRECODERS[kind]
    except KeyError:
        raise InvalidConfig(f"unknown precoder {kind!r}") from None
    return fn(e.h, regularize=regularize, **params)


def repair_psd(c):
    """Hermitian-symmetrize and clip negative eigenvalues at zero (last two axes)."""
    c = 0.5 * (c + np.conj(np.swapaxes(c, -1, -2)))
    lam, v = np.linalg.eigh(c)
    lam = np.maximum(lam, 0.0)
    out = (v * lam[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2))
    return 0.5 * (out + np.conj(np.swapaxes(out, -1, -2)))


@dataclass(frozen=True)
class CommStats:
    """Expected effective channels and interference matrices.

    ``d[k, l]`` is the mean effective gain of AP l towards UE k with its own
    precoder; ``c_mats[k, i]`` is the L x L matrix coupling UE i's powers
    into UE k's interference.
    """

    d: np.ndarray  # (K, L) real >= 0
    c_mats: np.ndarray  # (K, K, L, L) complex Hermitian PSD
    sigma2: float

    @property
    def n_ues(self):
        return self.d.shape[0]

    @property
    def n_aps(self):
        return self.d.shape[1]

    def normalized(self):
        """Same SINRs with unit noise: d / sigma, C / sigma^2."""
        s = np.sqrt(self.sigma2)
        return CommStats(self.d / s, self.c_mats / self.sigma2, 1.0)

    def restricted(self, ues):
        """Statistics for a subset of UEs."""
        ues = np.asarray(ues)
        return CommStats(self.d[ues], self.c_mats[np.ix_(ues, ues)], self.sigma2)

    def to_dict(self):
        return {
            "format": "apmode.commstats",
            "version": SNAPSHOT_VERSION,
            "sigma2": self.sigma2,
            "d": self.d.tolist(),
            "c_re": self.c_mats.real.tolist(),
            "c_im": self.c_mats.imag.tolist(),
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != "apmode.commstats" or data.get("version") != SNAPSHOT_VERSION:
            raise InvalidConfig("not a version-1 commstats snapshot")
        c = np.array(data["c_re"], float) + 1j * np.array(data["c_im"], float)
        return cls(np.array(data["d"], float), c, float(data["sigma2"]))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def estimate_stats(e: ChannelEnsemble, precoders, sigma2, psd_repair=True) -> CommStats:
    """Sample-mean estimates of the effective channel and interference statistics."""
    h = e.h
    if h.shape[0] < 1:
        raise InvalidConfig("need at least one realization")
    T = h.shape[0]
    # g[t, k, i, l] = h_kl^T w_il
    g = np.einsum("tkln,tiln->tkil", h, precoders)
    diag = np.einsum("tkkl->tkl", g)
    d_complex = diag.mean(axis=0)
    c = np.einsum("tkil,tkir->kilr", g, np.conj(g)) / T
    K = h.shape[1]
    for k in range(K):
        c[k, k] -= np.outer(d_complex[k], np.conj(d_complex[k]))
    if psd_repair:
        c = repair_psd(c)
    else:
        c = 0.5 * (c + np.conj(np.swapaxes(c, -1, -2)))
    d = d_complex.real
    # MR makes h^T w = |h| exactly real and nonnegative
    if np.any(np.abs(d_complex.imag) > 1e-9 * np.maximum(np.abs(d), 1e-300)) or np.any(d < 0):
        raise NotPSD("effective channel mean is not real nonnegative for this precoder")
    return CommStats(d=d, c_mats=c, sigma2=float(sigma2))


def rho_from_powers(powers, active=None):
    """Stack ``rho[k, l] = sqrt(p_lk) * a_l`` from an (L, K) power matrix."""
    p = np.asarray(powers, float)
    rho = np.sqrt(np.maximum(p, 0.0)).T
    if active is not None:
        rho = rho * np.asarray(active, float)[None, :]
    return rho


def interference(stats: CommStats, rho, k):
    rho = np.asarray(rho, float)
    total = 0.0
    for i in range(stats.n_ues):
        total += np.real(rho[i] @ stats.c_mats[k, i] @ rho[i])
    return total


def sinr(stats: CommStats, rho, k) -> float:
    """Effective SINR of UE k; ``rho`` has shape (K, L)."""
    rho = np.asarray(rho, float)
    num = float(stats.d[k] @ rho[k]) ** 2
    return num / (interference(stats, rho, k) + stats.sigma2)


def sinr_all(stats: CommStats, rho):
    return np.array([sinr(stats, rho, k) for k in range(stats.n_ues)])


def spectral_efficiency(sinr_k, tau_d, tau_c):
    if np.any(np.asarray(sinr_k) < 0):
        raise ValueError("SINR must be nonnegative")
    return (tau_d / tau_c) * np.log2(1.0 + np.asarray(sinr_k, float))


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, float) / 10.0)


@dataclass(frozen=True)
class ConeConstraint:
    """``|| F x + g || <= f^T x + h`` over a stacked variable vector.

    For the SINR cone the variable is ``rho`` flattened row-major as (K, L).
    """

    F: np.ndarray
    g: np.ndarray
    f: np.ndarray
    h: float

    def lhs(self, x):
        return float(np.linalg.norm(self.F @ x + self.g))

    def rhs(self, x):
        return float(self.f @ x + self.h)

    def satisfied(self, x, tol=0.0):
        return self.lhs(x) <= self.rhs(x) + tol


def psd_sqrt(c, rel_tol=1e-6):
    """Symmetric square root of the real part of a Hermitian PSD matrix.

    For real ``rho``, ``rho^T C rho = rho^T Re(C) rho``, so the real part's
    root gives the same cone.
    """
    lam_full = np.linalg.eigvalsh(c)
    scale = max(float(np.max(np.abs(lam_full))), 0.0)
    if lam_full.size and lam_full.min() < -rel_tol * scale:
        raise NotPSD(f"eigenvalue {lam_full.min():.3e} below tolerance")
    cr = np.real(c)
    lam, v = np.linalg.eigh(0.5 * (cr + cr.T))
    return (v * np.sqrt(np.maximum(lam, 0.0))) @ v.T


def soc_constraint(stats: CommStats, gamma_c, k) -> ConeConstraint:
    """Second-order-cone form of ``SINR_k >= gamma_c``."""
    if not gamma_c > 0:
        raise ValueError("gamma_c must be positive")
    K, L = stats.n_ues, stats.n_aps
    sg = np.sqrt(gamma_c)
    F = np.zeros((K * L + 1, K * L))
    for i in range(K):
        F[i * L:(i + 1) * L, i * L:(i + 1) * L] = sg * psd_sqrt(stats.c_mats[k, i])
    g = np.zeros(K * L + 1)
    g[-1] = sg * np.sqrt(stats.sigma2)
    f = np.zeros(K * L)
    f[k * L:(k + 1) * L] = stats.d[k]
    return ConeConstraint(F=F, g=g, f=f, h=0.0)
