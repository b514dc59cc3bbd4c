"""Deployment geometry and the synthetic channel ensemble.

The channel model stands in for ray-traced data: a Rician LOS-dominant
mmWave link per (UE, AP) pair,

    h_kl = sqrt(PL(d_kl) * blk_kl) * (sqrt(K/(1+K)) e^{j theta_kl} a(u_kl)
                                      + sqrt(1/(1+K)) w),

with log-distance path loss anchored at free space 1 m from the AP, a
half-wavelength ULA steering vector ``a`` (unit-modulus entries), and
``w ~ CN(0, I_N)``.  ``blk_kl`` is an optional per-link blockage loss.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import DegenerateGeometry, InvalidConfig

SPEED_OF_LIGHT = 299_792_458.0
SNAPSHOT_VERSION = 1


def thermal_noise_watts(bandwidth_hz, noise_figure_db=7.0, psd_dbm_hz=-174.0):
    """Thermal noise power over ``bandwidth_hz`` including the noise figure."""
    dbm = psd_dbm_hz + 10.0 * math.log10(bandwidth_hz) + noise_figure_db
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass
class ScenarioConfig:
    """Everything needed to build a :class:`Scenario`.

    Positions left as ``None`` are drawn from ``seed``: APs uniformly over
    the area at heights in ``ap_height_range``, UEs uniformly at
    ``ue_height``.  Noise powers left as ``None`` come from
    :func:`thermal_noise_watts`.
    """

    n_aps: int = 12
    n_ues: int = 6
    ap_positions: list | None = None
    ue_positions: list | None = None
    target_position: list | None = None
    area_size: tuple = (300.0, 300.0)
    ap_height_range: tuple = (10.0, 40.0)
    ue_height: float = 1.5
    n_antennas: int = 8
    carrier_freq_hz: float = 28e9
    comm_bandwidth_hz: float = 100e6
    sensing_bandwidth_hz: float = 100e6
    noise_figure_db: float = 7.0
    noise_power_comm: float | None = None
    noise_power_sensing: float | None = None
    p_max_watts: float = 1.0
    p_s_watts: float = 1.0
    tau_c: int = 200
    tau_d: int = 190
    pathloss_model: str = "log-distance"
    pathloss_exponent: float = 3.0
    rician_k: float = 10.0
    blockage_prob: float = 0.0
    blockage_loss_db: float = 20.0
    rcs: list | None = None
    seed: int = 0

    @classmethod
    def from_mapping(cls, mapping):
        known = {f.name for f in fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise InvalidConfig(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**mapping)

    def replace(self, **changes):
        data = asdict(self)
        data.update(changes)
        return type(self)(**data)


def _frozen(x, dtype=float):
    arr = np.array(x, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Scenario:
    ap_positions: np.ndarray  # (L, 3)
    ue_positions: np.ndarray  # (K, 3)
    target_position: np.ndarray  # (2,)
    n_antennas: int
    carrier_freq_hz: float
    comm_bandwidth_hz: float
    sensing_bandwidth_hz: float
    noise_power_comm: float
    noise_power_sensing: float
    p_max_watts: float
    p_s_watts: float
    tau_c: int
    tau_d: int
    rcs: np.ndarray  # (L, L) complex, symmetric
    ap_orientations: np.ndarray  # (L,) array-axis azimuth, radians
    pathloss_model: str = "log-distance"
    pathloss_exponent: float = 3.0
    rician_k: float = 10.0
    blockage_prob: float = 0.0
    blockage_loss_db: float = 20.0
    rng_seed: int = 0

    def __post_init__(self):
        _validate(self)

    @property
    def n_aps(self):
        return self.ap_positions.shape[0]

    @property
    def n_ues(self):
        return self.ue_positions.shape[0]

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.carrier_freq_hz

    def with_ues(self, ue_positions):
        """Copy of the scenario with a different UE set (same APs, target, RCS)."""
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data["ue_positions"] = _frozen(ue_positions)
        return Scenario(**data)

    def to_dict(self):
        out = {"format": "apmode.scenario", "version": SNAPSHOT_VERSION}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray):
                if np.iscomplexobj(v):
                    v = {"re": v.real.tolist(), "im": v.imag.tolist()}
                else:
                    v = v.tolist()
            out[f.name] = v
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != "apmode.scenario":
            raise InvalidConfig("not a scenario snapshot")
        if data.get("version") != SNAPSHOT_VERSION:
            raise InvalidConfig(f"unsupported scenario snapshot version {data.get('version')}")
        kw = {}
        for f in fields(cls):
            v = data[f.name]
            if f.name == "rcs":
                v = _frozen(np.array(v["re"]) + 1j * np.array(v["im"]), complex)
            elif f.name in ("ap_positions", "ue_positions", "target_position", "ap_orientations"):
                v = _frozen(v)
            kw[f.name] = v
        return cls(**kw)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _validate(s: Scenario):
    L, K = s.ap_positions.shape[0], s.ue_positions.shape[0]
    if s.ap_positions.ndim != 2 or s.ap_positions.shape[1] != 3:
        raise InvalidConfig("ap_positions must be (L, 3)")
    if s.ue_positions.ndim != 2 or s.ue_positions.shape[1] != 3:
        raise InvalidConfig("ue_positions must be (K, 3)")
    if s.target_position.shape != (2,):
        raise InvalidConfig("target_position must be a planar (x, y) point")
    if L < 2:
        raise InvalidConfig("need at least two APs")
    if K < 1:
        raise InvalidConfig("need at least one UE")
    if s.n_antennas < 1:
        raise InvalidConfig("n_antennas must be >= 1")
    for name in ("carrier_freq_hz", "comm_bandwidth_hz", "sensing_bandwidth_hz",
                 "noise_power_comm", "noise_power_sensing", "p_max_watts", "p_s_watts"):
        if not getattr(s, name) > 0:
            raise InvalidConfig(f"{name} must be positive")
    if s.tau_c < 1 or s.tau_d < 1 or s.tau_d > s.tau_c:
        raise InvalidConfig("need 1 <= tau_d <= tau_c")
    if s.rcs.shape != (L, L):
        raise InvalidConfig("rcs must be L x L")
    if not np.array_equal(s.rcs, s.rcs.T):
        raise InvalidConfig("rcs must be symmetric")
    if s.ap_orientations.shape != (L,):
        raise InvalidConfig("ap_orientations must have one angle per AP")
    if s.pathloss_model not in ("log-distance", "unit"):
        raise InvalidConfig(f"unknown pathloss_model {s.pathloss_model!r}")
    if not 0.0 <= s.blockage_prob <= 1.0:
        raise InvalidConfig("blockage_prob must lie in [0, 1]")
    if s.rician_k < 0:
        raise InvalidConfig("rician_k must be >= 0")
    if np.any(np.hypot(*(s.ap_positions[:, :2] - s.target_position).T) == 0.0):
        raise InvalidConfig("an AP coincides with the target")


def _streams(seed, n):
    return [np.random.default_rng(c) for c in np.random.SeedSequence(seed).spawn(n)]


def sample_rcs(rng, n_aps):
    """Unit-variance circular Gaussian RCS, drawn on the upper triangle and mirrored."""
    z = (rng.standard_normal((n_aps, n_aps)) + 1j * rng.standard_normal((n_aps, n_aps))) / np.sqrt(2)
    upper = np.triu(z)
    return upper + np.triu(z, 1).T


def sample_ue_positions(rng, n, area_size, height):
    xy = rng.uniform(0.0, 1.0, size=(n, 2)) * np.asarray(area_size, float)
    return np.column_stack([xy, np.full(n, float(height))])


def build_scenario(config: ScenarioConfig) -> Scenario:
    c = config
    if c.n_ues < 1:
        raise InvalidConfig("n_ues must be >= 1")
    if c.n_aps < 2:
        raise InvalidConfig("n_aps must be >= 2")
    for name in ("p_max_watts", "p_s_watts", "comm_bandwidth_hz", "sensing_bandwidth_hz", "carrier_freq_hz"):
        if not getattr(c, name) > 0:
            raise InvalidConfig(f"{name} must be positive")
    r_ap, r_ue, r_rcs, r_orient = _streams(c.seed, 4)
    area = np.asarray(c.area_size, float)

    if c.ap_positions is None:
        xy = r_ap.uniform(0.0, 1.0, size=(c.n_aps, 2)) * area
        z = r_ap.uniform(*c.ap_height_range, size=c.n_aps)
        aps = np.column_stack([xy, z])
    else:
        aps = np.asarray(c.ap_positions, float)
        if aps.shape[1] == 2:
            aps = np.column_stack([aps, np.full(len(aps), c.ap_height_range[0])])
        if len(aps) != c.n_aps:
            raise InvalidConfig("len(ap_positions) != n_aps")

    if c.ue_positions is None:
        ues = sample_ue_positions(r_ue, c.n_ues, area, c.ue_height)
    else:
        ues = np.asarray(c.ue_positions, float)
        if ues.shape[1] == 2:
            ues = np.column_stack([ues, np.full(len(ues), c.ue_height)])
        if len(ues) != c.n_ues:
            raise InvalidConfig("len(ue_positions) != n_ues")

    target = area / 2 if c.target_position is None else np.asarray(c.target_position, float)[:2]

    if c.rcs is None:
        rcs = sample_rcs(r_rcs, c.n_aps)
    else:
        rcs = np.asarray(c.rcs, complex)
        if rcs.ndim == 0:
            rcs = np.full((c.n_aps, c.n_aps), complex(rcs))

    sigma2 = c.noise_power_comm
    if sigma2 is None:
        sigma2 = thermal_noise_watts(c.comm_bandwidth_hz, c.noise_figure_db)
    sigma2_s = c.noise_power_sensing
    if sigma2_s is None:
        sigma2_s = thermal_noise_watts(c.sensing_bandwidth_hz, c.noise_figure_db)

    return Scenario(
        ap_positions=_frozen(aps),
        ue_positions=_frozen(ues),
        target_position=_frozen(target),
        n_antennas=int(c.n_antennas),
        carrier_freq_hz=float(c.carrier_freq_hz),
        comm_bandwidth_hz=float(c.comm_bandwidth_hz),
        sensing_bandwidth_hz=float(c.sensing_bandwidth_hz),
        noise_power_comm=float(sigma2),
        noise_power_sensing=float(sigma2_s),
        p_max_watts=float(c.p_max_watts),
        p_s_watts=float(c.p_s_watts),
        tau_c=int(c.tau_c),
        tau_d=int(c.tau_d),
        rcs=_frozen(rcs, complex),
        ap_orientations=_frozen(r_orient.uniform(0.0, np.pi, size=c.n_aps)),
        pathloss_model=c.pathloss_model,
        pathloss_exponent=float(c.pathloss_exponent),
        rician_k=float(c.rician_k),
        blockage_prob=float(c.blockage_prob),
        blockage_loss_db=float(c.blockage_loss_db),
        rng_seed=int(c.seed),
    )


def ap_target_ranges(s: Scenario) -> np.ndarray:
    """Horizontal distance from each AP to the target."""
    r = np.hypot(*(s.ap_positions[:, :2] - s.target_position).T)
    if np.any(r == 0.0):
        raise DegenerateGeometry("an AP is located at the target")
    return r


def link_distances(s: Scenario) -> np.ndarray:
    """3-D UE-AP distances, shape (K, L)."""
    diff = s.ue_positions[:, None, :] - s.ap_positions[None, :, :]
    return np.linalg.norm(diff, axis=-1)


def pathloss(s: Scenario, d) -> np.ndarray:
    """Linear large-scale gain at distance ``d``; free space at the 1 m reference."""
    d = np.asarray(d, float)
    if s.pathloss_model == "unit":
        return np.ones_like(d)
    pl0 = (s.wavelength / (4.0 * np.pi)) ** 2
    return pl0 * np.maximum(d, 1.0) ** (-s.pathloss_exponent)


def steering_vector(n_antennas, direction_cosine):
    """Half-wavelength ULA response with unit-modulus entries.

    ``direction_cosine`` may be an array; the antenna index is the last axis.
    """
    u = np.asarray(direction_cosine, float)[..., None]
    return np.exp(1j * np.pi * np.arange(n_antennas) * u)


@dataclass(frozen=True)
class ChannelEnsemble:
    h: np.ndarray  # (T, K, L, N) complex
    gain_pairs: np.ndarray  # (L, K) sample mean of |h_kl|^2 / N
    gain_ap: np.ndarray  # (L,)
    large_scale: np.ndarray = field(repr=False)  # (L, K) model mean of |h_kl|^2 / N

    @property
    def n_realizations(self):
        return self.h.shape[0]


def _los_geometry(s: Scenario):
    diff = s.ue_positions[:, None, :] - s.ap_positions[None, :, :]  # (K, L, 3)
    dist = np.linalg.norm(diff, axis=-1)
    axis = np.stack([np.cos(s.ap_orientations), np.sin(s.ap_orientations), np.zeros(s.n_aps)], axis=-1)
    cosines = np.einsum("kld,ld->kl", diff, axis) / dist
    phase = 2.0 * np.pi * np.mod(dist / s.wavelength, 1.0)
    return dist, cosines, phase


def generate_channels(s: Scenario, t_realizations: int, seed=None) -> ChannelEnsemble:
    """Draw ``t_realizations`` i.i.d. channel realizations for every (UE, AP) pair.

    The draw is a pure function of the scenario seed (or ``seed`` if given).
    """
    if t_realizations < 1:
        raise InvalidConfig("t_realizations must be >= 1")
    K, L, N = s.n_ues, s.n_aps, s.n_antennas
    seed = s.rng_seed if seed is None else seed
    rng_block, rng_fade = (np.random.default_rng(c) for c in np.random.SeedSequence([seed, 7]).spawn(2))

    dist, cosines, phase = _los_geometry(s)
    large = pathloss(s, dist)  # (K, L)
    if s.blockage_prob > 0:
        blocked = rng_block.random((K, L)) < s.blockage_prob
        large = np.where(blocked, large * 10.0 ** (-s.blockage_loss_db / 10.0), large)

    if math.isinf(s.rician_k):
        w_los, w_nlos = 1.0, 0.0
    else:
        w_los = math.sqrt(s.rician_k / (1.0 + s.rician_k))
        w_nlos = math.sqrt(1.0 / (1.0 + s.rician_k))
    los = np.exp(1j * phase)[..., None] * steering_vector(N, cosines)  # (K, L, N)
    shape = (t_realizations, K, L, N)
    nlos = (rng_fade.standard_normal(shape) + 1j * rng_fade.standard_normal(shape)) / np.sqrt(2)
    h = np.sqrt(large)[None, :, :, None] * (w_los * los[None] + w_nlos * nlos)

    g_lk = (np.sum(np.abs(h) ** 2, axis=-1) / N).mean(axis=0).T  # (L, K)
    g_l = g_lk.sum(axis=1)
    h.setflags(write=False)
    return ChannelEnsemble(h=h, gain_pairs=_frozen(g_lk), gain_ap=_frozen(g_l), large_scale=_frozen(large.T))
