"""Configuration-driven Monte Carlo runner, result aggregation and command line."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .comm import compute_precoders, estimate_stats
from .errors import ApModeError, EmptyInput, Infeasible, InvalidConfig, TimeLimitReached, TooLarge
from .modeselect import ALGORITHMS, ModeAssignment, ProblemInputs, validate
from .scenario import (
    Scenario,
    ScenarioConfig,
    build_scenario,
    generate_channels,
    pathloss,
    sample_rcs,
    sample_ue_positions,
)
from .sensing import crlb_many, geometry_matrices

CSV_SCHEMA = "apmode-results/1"
CSV_COLUMNS = ["trial", "seed", "algorithm", "n_ues", "eta", "gamma_c_db", "n_tx", "n_rx", "total",
               "status", "restarts", "iterations", "tx_set", "rx_set"]
TIMING_COLUMNS = ["trial", "algorithm", "n_ues", "eta", "wall_seconds"]


@dataclass
class ExperimentConfig:
    """One Monte Carlo sweep.

    ``eta`` holds absolute CRLB thresholds (m^2) when ``eta_mode`` is
    ``"absolute"``; with ``"calibrated"`` each entry multiplies a reference
    CRLB, the ``eta_quantile`` quantile of the all-pairs CRLB over
    ``calibration_draws`` RCS draws.
    """

    scenario: dict = field(default_factory=dict)
    algorithms: list = field(default_factory=lambda: ["alternating", "sequential", "heuristic"])
    gamma_c_db: float = 20.0
    eta: list = field(default_factory=lambda: [1e-5])
    eta_mode: str = "absolute"
    eta_quantile: float = 0.5
    calibration_draws: int = 200
    n_ues: list = field(default_factory=lambda: [6])
    trials: int = 300
    base_seed: int = 0
    output: str = "results.csv"
    time_limit: float | None = None
    n_realizations: int = 1000
    precoder: str = "mr"
    ue_pool_size: int = 0
    ap_pool_size: int = 0
    target_positions: list | None = None
    max_iter: int = 100
    max_restarts: int = 50
    r_init: int | None = None
    oracle_l_cap: int = 10

    def __post_init__(self):
        self.algorithms = [self.algorithms] if isinstance(self.algorithms, str) else list(self.algorithms)
        self.eta = [float(e) for e in np.atleast_1d(self.eta)]
        self.n_ues = [int(k) for k in np.atleast_1d(self.n_ues)]
        if self.trials < 1:
            raise InvalidConfig("trials must be >= 1")
        if not self.algorithms:
            raise InvalidConfig("at least one algorithm is required")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad:
            raise InvalidConfig(f"unknown algorithms {bad}; choose from {sorted(ALGORITHMS)}")
        if not self.eta or any(not e > 0 for e in self.eta):
            raise InvalidConfig("eta values must be positive")
        if self.eta_mode not in ("absolute", "calibrated"):
            raise InvalidConfig("eta_mode must be 'absolute' or 'calibrated'")
        if not self.n_ues or min(self.n_ues) < 1:
            raise InvalidConfig("n_ues values must be >= 1")
        if not 0.0 <= self.eta_quantile <= 1.0:
            raise InvalidConfig("eta_quantile must lie in [0, 1]")
        if self.ue_pool_size and self.ue_pool_size < max(self.n_ues):
            raise InvalidConfig("ue_pool_size smaller than the largest n_ues")
        if self.time_limit is not None and not self.time_limit > 0:
            raise InvalidConfig("time_limit must be positive")
        ScenarioConfig.from_mapping(self.scenario)

    @classmethod
    def from_mapping(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfig(f"unknown experiment keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as e:
            raise InvalidConfig(str(e)) from None

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as e:
            raise InvalidConfig(f"cannot read config: {e}") from None
        if path.suffix.lower() in (".yaml", ".yml"):
            import yaml

            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
        if not isinstance(data, dict):
            raise InvalidConfig("config must be a mapping")
        return cls.from_mapping(data)


@dataclass
class ResultRecord:
    trial: int
    seed: int
    algorithm: str
    n_ues: int
    eta: float
    gamma_c_db: float
    n_tx: int
    n_rx: int
    total: int
    status: str  # feasible | infeasible | timeout | skipped
    restarts: int
    iterations: int
    tx_set: str
    rx_set: str
    wall_seconds: float = 0.0

    @property
    def feasible(self):
        return self.status == "feasible"


def _bits(v):
    return "".join("1" if x > 0.5 else "0" for x in v)


def base_scenario(cfg: ExperimentConfig) -> Scenario:
    """Fixed deployment: AP positions, orientations and the (first) target.

    With ``ap_pool_size`` the APs are the highest aggregate-gain subset of
    a larger candidate pool, gains taken over a uniform UE sample.
    """
    sc = ScenarioConfig.from_mapping(cfg.scenario)
    if cfg.target_positions:
        sc = sc.replace(target_position=list(cfg.target_positions[0]))
    if cfg.ap_pool_size:
        if cfg.ap_pool_size < sc.n_aps:
            raise InvalidConfig("ap_pool_size smaller than n_aps")
        pool = build_scenario(sc.replace(n_aps=cfg.ap_pool_size, rcs=None))
        probe = sample_ue_positions(np.random.default_rng([sc.seed, 11]), 500, sc.area_size, sc.ue_height)
        d = np.linalg.norm(probe[:, None, :] - pool.ap_positions[None], axis=-1)
        gain = pathloss(pool, d).sum(axis=0)
        keep = np.sort(np.lexsort((np.arange(len(gain)), -gain))[: sc.n_aps])
        sc = sc.replace(ap_positions=pool.ap_positions[keep].tolist())
    return build_scenario(sc)


def ue_pool(cfg: ExperimentConfig, s: Scenario):
    if not cfg.ue_pool_size:
        return None
    sc = ScenarioConfig.from_mapping(cfg.scenario)
    return sample_ue_positions(np.random.default_rng([sc.seed, 13]), cfg.ue_pool_size, sc.area_size, sc.ue_height)


def trial_scenario(cfg: ExperimentConfig, base: Scenario, trial: int, n_ues: int, pool=None, target=None):
    """Scenario for one trial: fresh UEs and RCS, same APs.

    UE sets are nested across ``n_ues`` values of one trial (the first K of
    a shared draw), so a K sweep adds users rather than redrawing them.
    """
    seed = cfg.base_seed + trial
    r_ue, r_rcs = (np.random.default_rng(c) for c in np.random.SeedSequence(seed).spawn(2))
    k_max = max(cfg.n_ues)
    sc = ScenarioConfig.from_mapping(cfg.scenario)
    if pool is not None:
        ues = pool[r_ue.choice(len(pool), size=k_max, replace=False)]
    else:
        ues = sample_ue_positions(r_ue, k_max, sc.area_size, sc.ue_height)
    changes = {"ue_positions": ues[:n_ues].copy(), "rcs": sample_rcs(r_rcs, base.n_aps), "rng_seed": seed}
    if target is not None:
        changes["target_position"] = np.asarray(target, float)[:2]
    return replace(base, **changes)


def reference_crlb(cfg: ExperimentConfig, base: Scenario, target=None):
    """Quantile of the all-pairs CRLB (every AP both transmitting and receiving) over RCS draws.

    Adding TX-RX pairs only adds Fisher information, so this is a lower
    bound on the CRLB of every valid mode assignment of the same draw.
    """
    vals = []
    ones = np.ones(base.n_aps)
    for t in range(cfg.calibration_draws):
        rng = np.random.default_rng([cfg.base_seed, 17, t])
        s = replace(base, rcs=sample_rcs(rng, base.n_aps))
        if target is not None:
            s = replace(s, target_position=np.asarray(target, float)[:2])
        vals.append(crlb_many(geometry_matrices(s), ones, ones, s.p_s_watts)[0])
    return float(np.quantile(vals, cfg.eta_quantile))


def eta_values(cfg: ExperimentConfig, base: Scenario, target=None):
    if cfg.eta_mode == "absolute":
        return list(cfg.eta)
    ref = reference_crlb(cfg, base, target)
    return [f * ref for f in cfg.eta]


def _run_algorithm(name, inp, cfg, trial):
    fn = ALGORITHMS[name]
    if name == "alternating":
        return fn(inp, max_iter=cfg.max_iter, max_restarts=cfg.max_restarts, seed=cfg.base_seed + trial,
                  time_limit=cfg.time_limit)
    if name == "heuristic":
        return fn(inp, r_init=cfg.r_init, time_limit=cfg.time_limit)
    if name == "oracle":
        return fn(inp, l_cap=cfg.oracle_l_cap)
    return fn(inp, time_limit=cfg.time_limit)


def build_inputs(cfg: ExperimentConfig, s: Scenario, gamma_c_db, eta):
    ens = generate_channels(s, cfg.n_realizations, seed=s.rng_seed)
    stats = estimate_stats(ens, compute_precoders(ens, cfg.precoder), s.noise_power_comm)
    return ProblemInputs.from_scenario(s, ens, stats, gamma_c_db, eta)


def run_experiment(cfg: ExperimentConfig, progress=None, assignments=None, on_result=None):
    """Run every (target, trial, K, eta, algorithm) combination in a fixed order.

    Failures become rows with status ``infeasible``, ``timeout`` or
    ``skipped``; nothing aborts the sweep.  ``assignments`` (a list) is
    extended with one JSON-ready instance per feasible row.
    ``on_result(record, report, inputs)`` sees every row; ``report`` is
    None when the algorithm raised.
    """
    base = base_scenario(cfg)
    pool = ue_pool(cfg, base)
    targets = cfg.target_positions or [None]
    records = []
    for target in targets:
        etas = eta_values(cfg, base, target)
        for trial in range(cfg.trials):
            for k in cfg.n_ues:
                s = trial_scenario(cfg, base, trial, k, pool, target)
                inp0 = build_inputs(cfg, s, cfg.gamma_c_db, etas[0])
                for eta in etas:
                    inp = inp0.with_eta(eta)
                    for name in cfg.algorithms:
                        rec, rep = _one(name, inp, cfg, trial, k, eta)
                        records.append(rec)
                        if on_result:
                            on_result(rec, rep, inp)
                        if assignments is not None and rep is not None:
                            assignments.append(assignment_record(cfg, s, rec, rep.assignment))
                        if progress:
                            progress(rec)
    return records


def _one(name, inp, cfg, trial, k, eta):
    L = inp.n_aps
    common = dict(trial=trial, seed=cfg.base_seed + trial, algorithm=name, n_ues=k, eta=eta,
                  gamma_c_db=cfg.gamma_c_db)
    zeros = "0" * L
    try:
        rep = _run_algorithm(name, inp, cfg, trial)
    except TimeLimitReached:
        return ResultRecord(**common, n_tx=0, n_rx=0, total=0, status="timeout", restarts=0, iterations=0,
                            tx_set=zeros, rx_set=zeros, wall_seconds=float(cfg.time_limit or 0.0)), None
    except TooLarge:
        return ResultRecord(**common, n_tx=0, n_rx=0, total=0, status="skipped", restarts=0, iterations=0,
                            tx_set=zeros, rx_set=zeros), None
    except Infeasible:
        return ResultRecord(**common, n_tx=0, n_rx=0, total=0, status="infeasible", restarts=0, iterations=0,
                            tx_set=zeros, rx_set=zeros), None
    a = rep.assignment
    status = "feasible" if (rep.sinr_ok and rep.crlb_ok) else "infeasible"
    return ResultRecord(**common, n_tx=rep.n_tx, n_rx=rep.n_rx, total=rep.total, status=status,
                        restarts=rep.restarts, iterations=rep.iterations, tx_set=_bits(a.a), rx_set=_bits(a.b),
                        wall_seconds=rep.wall_time), rep


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def records_to_csv(records, config_name=""):
    """Deterministic CSV text; wall-clock times live in :func:`timing_to_csv`."""
    buf = io.StringIO()
    buf.write(f"# schema={CSV_SCHEMA} config={config_name}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def timing_to_csv(records):
    buf = io.StringIO()
    buf.write(f"# schema={CSV_SCHEMA}-timing\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TIMING_COLUMNS)
    for r in records:
        w.writerow([_fmt(getattr(r, c)) if c != "wall_seconds" else f"{r.wall_seconds:.6f}" for c in TIMING_COLUMNS])
    return buf.getvalue()


def read_records(csv_path, timing_path=None):
    """Load records written by :func:`records_to_csv` (plus optional timing sidecar)."""
    lines = [ln for ln in Path(csv_path).read_text().splitlines() if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    times = {}
    if timing_path and Path(timing_path).exists():
        tl = [ln for ln in Path(timing_path).read_text().splitlines() if not ln.startswith("#")]
        for i, t in enumerate(csv.DictReader(tl)):
            times[i] = float(t["wall_seconds"])
    out = []
    for i, r in enumerate(rows):
        out.append(ResultRecord(
            trial=int(r["trial"]), seed=int(r["seed"]), algorithm=r["algorithm"], n_ues=int(r["n_ues"]),
            eta=float(r["eta"]), gamma_c_db=float(r["gamma_c_db"]), n_tx=int(r["n_tx"]), n_rx=int(r["n_rx"]),
            total=int(r["total"]), status=r["status"], restarts=int(r["restarts"]),
            iterations=int(r["iterations"]), tx_set=r["tx_set"], rx_set=r["rx_set"],
            wall_seconds=times.get(i, 0.0)))
    return out


@dataclass
class SummaryRow:
    algorithm: str
    n_ues: int
    eta: float
    count: int
    feasible_rate: float
    mean_tx: float
    std_tx: float
    mean_rx: float
    std_rx: float
    mean_total: float
    std_total: float
    mean_seconds: float
    std_seconds: float


def summarize(records):
    """Per (algorithm, K, eta): feasibility rate and mean/std of counts over feasible rows, runtime over all rows."""
    records = list(records)
    if not records:
        raise EmptyInput("no records to summarize")
    groups = {}
    for r in records:
        groups.setdefault((r.algorithm, r.n_ues, r.eta), []).append(r)
    out = []
    for (alg, k, eta), rs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])):
        ok = [r for r in rs if r.feasible]

        def ms(vals):
            if not vals:
                return float("nan"), float("nan")
            v = np.asarray(vals, float)
            return float(v.mean()), float(v.std())

        tx, rx, tot = ms([r.n_tx for r in ok]), ms([r.n_rx for r in ok]), ms([r.total for r in ok])
        sec = ms([r.wall_seconds for r in rs])
        out.append(SummaryRow(alg, k, eta, len(rs), len(ok) / len(rs), *tx, *rx, *tot, *sec))
    return out


def format_summary(rows):
    head = f"{'algorithm':<12} {'K':>3} {'eta':>10} {'n':>5} {'feas':>6} {'TX':>6} {'RX':>6} {'total':>6} {'sec':>8}"
    lines = [head]
    for r in rows:
        lines.append(f"{r.algorithm:<12} {r.n_ues:>3} {r.eta:>10.3e} {r.count:>5} {r.feasible_rate:>6.2f} "
                     f"{r.mean_tx:>6.2f} {r.mean_rx:>6.2f} {r.mean_total:>6.2f} {r.mean_seconds:>8.3f}")
    return "\n".join(lines)


def assignment_record(cfg: ExperimentConfig, s: Scenario, rec: ResultRecord, assign: ModeAssignment):
    """Self-contained instance plus assignment, enough to rebuild and re-validate."""
    return {
        "format": "apmode.assignment",
        "version": 1,
        "scenario": s.to_dict(),
        "n_realizations": cfg.n_realizations,
        "precoder": cfg.precoder,
        "gamma_c_db": cfg.gamma_c_db,
        "eta": rec.eta,
        "algorithm": rec.algorithm,
        "trial": rec.trial,
        "assignment": assign.to_dict(),
    }


def validate_assignment_file(path, out=None):
    """Re-validate every assignment in a JSON or JSON-lines file; True if all pass."""
    out = sys.stdout if out is None else out
    text = Path(path).read_text()
    try:
        items = [json.loads(text)]
    except json.JSONDecodeError:
        items = [json.loads(ln) for ln in text.splitlines() if ln.strip()]
    all_ok = True
    for item in items:
        if item.get("format") != "apmode.assignment":
            raise InvalidConfig("not an assignment file")
        s = Scenario.from_dict(item["scenario"])
        cfg = ExperimentConfig(n_realizations=item["n_realizations"], precoder=item["precoder"])
        inp = build_inputs(cfg, s, item["gamma_c_db"], item["eta"])
        assign = ModeAssignment.from_dict(item["assignment"])
        rep = validate(assign, inp.stats, inp.g, inp.gamma_c, inp.eta, inp.p_s, inp.p_max)
        print(f"== {item.get('algorithm', '?')} trial {item.get('trial', '?')}: "
              f"{'PASS' if rep.passed else 'FAIL'}", file=out)
        print(rep, file=out)
        all_ok &= rep.passed
    return all_ok


def write_outputs(records, out_path, config_name=""):
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(records_to_csv(records, config_name))
    out.with_suffix(".timing.csv").write_text(timing_to_csv(records))


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def make_parser():
    p = _Parser(prog="apmode", description="AP mode selection experiments.")
    p.add_argument("--config", help="experiment config (YAML or JSON)")
    p.add_argument("--algo", help="comma-separated algorithms, overrides the config")
    p.add_argument("--trials", type=int, help="number of trials, overrides the config")
    p.add_argument("--seed", type=int, help="base seed, overrides the config")
    p.add_argument("--out", help="output CSV path, overrides the config")
    p.add_argument("--summary", action="store_true", help="print and save a summary table")
    p.add_argument("--assignments", help="also write feasible assignments as JSON lines")
    p.add_argument("--validate", metavar="PATH", help="re-validate an assignment file and exit")
    p.add_argument("--quiet", action="store_true")
    return p


def cli_main(argv=None):
    """Entry point; returns 0 on success, 1 on usage/config errors, 2 on runtime failures."""
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return 1
    if args.validate:
        try:
            return 0 if validate_assignment_file(args.validate) else 2
        except (OSError, ValueError, KeyError, InvalidConfig) as e:
            print(f"error: {e}", file=sys.stderr)
            return 1
    if not args.config:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print("error: --config is required", file=sys.stderr)
        return 1
    try:
        cfg = ExperimentConfig.load(args.config)
        over = {}
        if args.algo:
            over["algorithms"] = [a.strip() for a in args.algo.split(",") if a.strip()]
        if args.trials is not None:
            over["trials"] = args.trials
        if args.seed is not None:
            over["base_seed"] = args.seed
        if args.out:
            over["output"] = args.out
        if over:
            cfg = ExperimentConfig.from_mapping({**asdict(cfg), **over})
    except (InvalidConfig, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1

    def progress(rec):
        if not args.quiet:
            print(f"trial {rec.trial:4d} K={rec.n_ues} eta={rec.eta:.3e} {rec.algorithm:<12} "
                  f"{rec.status:<10} tx={rec.n_tx} rx={rec.n_rx} {rec.wall_seconds:.2f}s", file=sys.stderr)

    assignments = [] if args.assignments else None
    try:
        records = run_experiment(cfg, progress=progress, assignments=assignments)
        write_outputs(records, cfg.output, Path(args.config).name)
        if assignments is not None:
            Path(args.assignments).write_text("".join(json.dumps(a) + "\n" for a in assignments))
        if args.summary:
            rows = summarize(records)
            print(format_summary(rows))
            Path(cfg.output).with_suffix(".summary.json").write_text(
                json.dumps([asdict(r) for r in rows], indent=2) + "\n")
    except (ApModeError, OSError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(cli_main())
