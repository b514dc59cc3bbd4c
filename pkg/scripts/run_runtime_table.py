"""Mean wall-clock seconds per algorithm for several user counts."""

import argparse
from dataclasses import asdict
from pathlib import Path

from apmode.harness import ExperimentConfig, run_experiment, summarize, write_outputs

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(ROOT / "configs" / "runtime.yaml"))
    ap.add_argument("--trials", type=int)
    args = ap.parse_args()
    cfg = ExperimentConfig.load(args.config)
    if args.trials is not None:
        cfg = ExperimentConfig.from_mapping({**asdict(cfg), "trials": args.trials})

    records = run_experiment(cfg)
    out = Path(cfg.output)
    if not out.is_absolute():
        out = ROOT / out
    write_outputs(records, out, Path(args.config).name)
    rows = {(r.algorithm, r.n_ues): r for r in summarize(records)}
    ks = sorted(cfg.n_ues)
    lines = [f"{'algorithm':<12}" + "".join(f"{'K=' + str(k):>12}" for k in ks)]
    for a in cfg.algorithms:
        lines.append(f"{a:<12}" + "".join(f"{rows[a, k].mean_seconds:>11.3f}s" for k in ks))
    table = "\n".join(lines)
    out.with_suffix(".table.txt").write_text(table + "\n")
    print(table)


if __name__ == "__main__":
    main()
