"""Empirical reliability of the two-box sequential test.

Counts trials that accept the wrong color, reach no decision, or decide later
than the stage s*(mu), and compares the rate with eps (Wilson 95% interval).

    python3 scripts/calibrate.py [--eps 0.1] [--trials 2000] [--fixed-mu 0.1 0.5]
"""

import argparse
from pathlib import Path

from seqtest import harness

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "two_box_calibrate.json"


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(CONFIG))
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--threads", type=int, default=4)
    p.add_argument("--fixed-mu", type=float, nargs="+", default=None,
                   help="run every trial at this parameter (e.g. a point on the saddle face)")
    args = p.parse_args()

    cfg = harness.load_config(args.config)
    kw = {k: v for k, v in (("eps", args.eps), ("trials", args.trials)) if v is not None}
    if args.fixed_mu:
        kw["mu_sampling"] = {"kind": "fixed", "points": [args.fixed_mu]}
    cal, rep = harness.calibrate_risk(cfg.replace(**kw), args.threads)
    bound = cal.eps + 4 * (cal.eps * (1 - cal.eps) / cal.trials) ** 0.5
    print(f"eps {cal.eps}, trials {cal.trials}")
    print(f"wrong color     {cal.wrong_rate:.4f}  CI [{cal.wrong_ci[0]:.4f}, {cal.wrong_ci[1]:.4f}]")
    print(f"no decision     {cal.no_decision_rate:.4f}  CI [{cal.no_decision_ci[0]:.4f}, {cal.no_decision_ci[1]:.4f}]")
    print(f"wrong or late   {cal.failure_rate:.4f}  CI [{cal.failure_ci[0]:.4f}, {cal.failure_ci[1]:.4f}]"
          f"  (eps + 4 stderr = {bound:.4f})")
    print("violation" if cal.violation else "consistent with eps")


if __name__ == "__main__":
    main()
