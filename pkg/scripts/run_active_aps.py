"""Active-AP comparison at a tight and a loose sensing threshold.

Writes the per-trial CSV plus a summary and prints mean TX/RX/total per
algorithm, over all feasible rows and over trials where every algorithm
succeeded.
"""

import argparse
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from apmode.harness import ExperimentConfig, format_summary, run_experiment, summarize, write_outputs

ROOT = Path(__file__).resolve().parents[1]


def common_trial_means(records):
    out = {}
    for eta in sorted({r.eta for r in records}, reverse=True):
        trials = {}
        for r in records:
            if r.eta == eta:
                trials.setdefault(r.trial, []).append(r)
        ok = [rs for rs in trials.values() if all(r.feasible for r in rs)]
        algs = sorted({r.algorithm for r in records})
        means = {a: float(np.mean([r.total for rs in ok for r in rs if r.algorithm == a])) for a in algs}
        out[f"{eta:.6e}"] = {"trials": len(ok), "mean_total": means}
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(ROOT / "configs" / "active_aps.yaml"))
    ap.add_argument("--trials", type=int)
    ap.add_argument("--out")
    args = ap.parse_args()
    cfg = ExperimentConfig.load(args.config)
    over = {k: v for k, v in (("trials", args.trials), ("output", args.out)) if v is not None}
    if over:
        cfg = ExperimentConfig.from_mapping({**asdict(cfg), **over})

    records = run_experiment(cfg)
    out = Path(cfg.output)
    if not out.is_absolute():
        out = ROOT / out
    write_outputs(records, out, Path(args.config).name)
    rows = summarize(records)
    common = common_trial_means(records)
    out.with_suffix(".summary.json").write_text(
        json.dumps({"rows": [asdict(r) for r in rows], "common_trials": common}, indent=2) + "\n")
    print(format_summary(rows))
    for eta, c in common.items():
        print(f"eta={eta} common trials={c['trials']}: "
              + " ".join(f"{a}={m:.2f}" for a, m in c["mean_total"].items()))


if __name__ == "__main__":
    main()
