"""Bad-cell volumes of the two-box template at stage 11, default vs smart cuts.

    python3 scripts/table_volumes.py [--samples 1000000] [--out volumes.csv]

Prints both default rows: with the margin override r = 0.0092 and with the
margin the schedule itself produces.
"""

import argparse

from seqtest import harness
from seqtest.sequential import ScheduleConfig, compute_schedule


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write the override table as CSV")
    args = p.parse_args()

    dims = [2, 3, 4, 5, 6]
    rows = harness.volumes_report(dims, args.delta, r=0.0092, samples=args.samples, seed=args.seed)
    own = harness.volumes_report(dims, args.delta, r=None, samples=10, policies=("default",))
    r11 = compute_schedule(2, ScheduleConfig(0.01), args.delta**2 / 8).r[10]

    print("n   " + "".join(f"{n:>12d}" for n in dims))
    for policy in ("default", "smart"):
        print(f"{policy:8s}" + "".join(f"{r.volume:12.3g}" for r in rows if r.policy == policy))
    print("stderr  " + "".join(f"{r.stderr:12.1g}" for r in rows if r.policy == "smart"))
    print(f"default (schedule r(11) = {r11:.6f}): " + " ".join(f"{r.volume:.4f}" for r in own))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(harness.table_text(*harness.dataclass_rows(rows)))


if __name__ == "__main__":
    main()
