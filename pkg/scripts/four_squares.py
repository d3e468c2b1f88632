"""Stopping-time statistics of the four-squares family (eps = 0.01, S = 20, uniform mu).

    python3 scripts/four_squares.py [--trials 500] [--threads 4] [--out runs/four_squares]
"""

import argparse
from pathlib import Path

from seqtest import harness

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "four_squares.json"


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(CONFIG))
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=4)
    p.add_argument("--out", default=None, help="directory for report.json and trials.csv")
    args = p.parse_args()

    cfg = harness.load_config(args.config)
    cfg = cfg.replace(**{k: v for k, v in (("trials", args.trials), ("seed", args.seed)) if v is not None})
    rep = harness.run_experiment(cfg, args.threads)

    print("stage  k_s")
    for st in rep.build["stages"]:
        print(f"{st['s']:5d}  {st['k']}")
    a = rep.aggregates
    print(f"trials {a['trials']}, error rate {a['error_rate']:.4f}, no decision {a['no_decision_rate']:.4f}")
    print(f"median {a['median_observations']:g}, mean {a['mean_observations']:.1f}, "
          f"mean/median {a['mean_over_median']:.2f}, max {a['max_observations']:g}")
    print("quantiles " + ", ".join(f"{q}: {v:g}" for q, v in a["quantiles"].items()))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(harness.json_text(rep.to_dict()))
        (out / "trials.csv").write_text(harness.table_text(*harness.trial_rows(rep.records)))


if __name__ == "__main__":
    main()
