import numpy as np

from apmode.comm import compute_precoders, estimate_stats
from apmode.modeselect import ProblemInputs
from apmode.scenario import ScenarioConfig, build_scenario, generate_channels
from apmode.sensing import crlb_many, geometry_matrices


def make_instance(seed, n_aps=6, n_ues=2, gamma_db=10.0, eta_factor=8.0, n_antennas=64, area=150.0, t=300):
    """Small random instance with eta a multiple of the all-pairs CRLB."""
    s = build_scenario(ScenarioConfig(n_aps=n_aps, n_ues=n_ues, n_antennas=n_antennas,
                                      area_size=(area, area), seed=seed))
    e = generate_channels(s, t, seed=seed)
    st = estimate_stats(e, compute_precoders(e), s.noise_power_comm)
    g = geometry_matrices(s)
    ones = np.ones(n_aps)
    ref = crlb_many(g, ones, ones, s.p_s_watts)[0]
    return ProblemInputs.from_scenario(s, e, st, gamma_db, eta_factor * ref, g=g)


def p1_feasible_fn(inp):
    from apmode.solver import Status, min_power_p1

    cache = {}

    def feasible(a):
        key = np.asarray(a).tobytes()
        if key not in cache:
            cache[key] = min_power_p1(inp.stats, a, inp.gamma_c, inp.p_max).status == Status.OPTIMAL
        return cache[key]

    return feasible
