"""Command line entry point: ``seqtest <command> --config cfg.json [--out dir] ...``.

Exit codes: 0 success, 2 configuration error, 3 build or solver failure,
4 calibration check failed (``calibrate --assert``).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import harness
from .errors import (AssumptionViolation, BuildError, ConfigError, CutInfeasibleError, InputError,
                     SolverFailureError)
from .sequential import LazyStream, build_sequential, dumps, loads, run_sequential

EXIT_OK, EXIT_CONFIG, EXIT_BUILD, EXIT_ASSERT = 0, 2, 3, 4
COMMANDS = ("solve-pair", "build", "run", "simulate", "volumes", "profile", "calibrate")


def _parser():
    p = argparse.ArgumentParser(prog="seqtest", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="experiment config (JSON, version v1)")
        sp.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        if name == "calibrate":
            sp.add_argument("--assert", dest="check", action="store_true",
                            help="exit with code 4 if the failure rate is significantly above eps")
        if name == "run":
            sp.add_argument("--test", default=None, help="previously built test (from `build`)")
    return p


def _write(out: Path, name: str, text: str):
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _table(out, stem, header, rows, fmt):
    _write(out, f"{stem}.{fmt}", harness.table_text(header, rows, fmt))


def _solve_pair(cfg, args, out):
    i, j = cfg.sections.get("pair", [0, 1])
    rep = harness.solve_pair_report(cfg, int(i), int(j))
    _write(out, "report.json", harness.json_text(rep))
    print(f"opt {rep['opt']:.12g}  risk {rep['risk']:.12g}")


def _build(cfg, args, out):
    test = build_sequential(cfg.family(), cfg.schedule_config())
    _write(out, "test.json", dumps(test))
    _write(out, "report.json", harness.json_text({"build": harness.build_metadata(test), "config": cfg.to_dict()}))
    print(f"built {test.S} stages, K = {test.K}")


def _run(cfg, args, out):
    if args.test:
        test = loads(Path(args.test).read_text())
    else:
        test = build_sequential(cfg.family(), cfg.schedule_config())
    run = cfg.sections.get("run", {})
    if "observations" in run:
        stream = np.asarray(run["observations"])
    elif "mu" in run:
        stream = LazyStream(test.family.scheme, run["mu"], harness.trial_rng(cfg.seed, 0))
    else:
        raise ConfigError("`run` needs a 'run' section with 'observations' or 'mu'")
    v = run_sequential(test, stream)
    doc = {"accepted_color": v.accepted_color, "stage": v.stage, "observations_used": v.observations_used}
    _write(out, "report.json", harness.json_text(doc))
    print(json.dumps(doc))


def _simulate(cfg, args, out):
    rep = harness.run_experiment(cfg, args.threads)
    _write(out, "report.json", harness.json_text(rep.to_dict()))
    _table(out, "trials", *harness.trial_rows(rep.records), args.format)
    a = rep.aggregates
    print(f"trials {a['trials']}  error {a['error_rate']:.4f}  median {a['median_observations']:g}  "
          f"mean {a['mean_observations']:.6g}")


def _volumes(cfg, args, out):
    sec = dict(cfg.sections.get("volumes", {}))
    stage = int(sec.get("stage", 11))
    rows = harness.volumes_report(dims=sec.get("dims", [2, 3, 4, 5, 6]), delta=float(sec.get("delta", 0.1)),
                                  stage=stage, eps=cfg.eps, r=cfg.r.get(stage),
                                  samples=int(sec.get("samples", 1_000_000)), seed=cfg.seed)
    _table(out, "volumes", *harness.dataclass_rows(rows), args.format)
    for r in rows:
        print(f"n={r.n} {r.policy:7s} {r.volume:.6g} +- {r.stderr:.2g}")


def _profile(cfg, args, out):
    sec = cfg.sections.get("profile", {})
    lo, hi = harness._union_bbox(cfg.bodies)
    lo = sec.get("lower", lo.tolist())
    hi = sec.get("upper", hi.tolist())
    m = int(sec.get("resolution", 101))
    if m < 2:
        raise ConfigError("profile resolution must be >= 2")
    test = build_sequential(cfg.family(), cfg.schedule_config())
    rows = harness.profile_grid(test, np.linspace(lo[0], hi[0], m), np.linspace(lo[1], hi[1], m))
    _table(out, "profile", *harness.dataclass_rows(rows), args.format)
    finite = [r.ln_k_sstar for r in rows if not math.isnan(r.ln_k_sstar)]
    print(f"{len(finite)} of {len(rows)} grid points inside the sets")


def _calibrate(cfg, args, out):
    cal, rep = harness.calibrate_risk(cfg, args.threads)
    _write(out, "report.json", harness.json_text({**rep.to_dict(), "calibration": cal.__dict__}))
    _table(out, "trials", *harness.trial_rows(rep.records), args.format)
    print(f"failure rate {cal.failure_rate:.4f}  95% CI [{cal.failure_ci[0]:.4f}, {cal.failure_ci[1]:.4f}]  "
          f"eps {cal.eps}")
    if args.check and cal.violation:
        print("calibration check FAILED: failure rate significantly above eps", file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


HANDLERS = {"solve-pair": _solve_pair, "build": _build, "run": _run, "simulate": _simulate,
            "volumes": _volumes, "profile": _profile, "calibrate": _calibrate}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = harness.load_config(args.config)
        if args.seed is not None:
            cfg = cfg.replace(seed=args.seed)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        return HANDLERS[args.command](cfg, args, Path(args.out)) or EXIT_OK
    except (ConfigError, InputError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BuildError, SolverFailureError, AssumptionViolation, CutInfeasibleError) as exc:
        print(f"build failed: {exc}", file=sys.stderr)
        return EXIT_BUILD


if __name__ == "__main__":
    sys.exit(main())
