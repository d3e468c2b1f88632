"""Config-driven Monte Carlo experiments: stopping-time statistics, risk calibration,
bad-cell volume tables and stage-bound profiles, with CSV/JSON writers.

Every trial draws from its own generator ``SeedSequence(seed, spawn_key=(trial,))``,
so results do not depend on the number of worker threads or their scheduling.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import binomtest

from . import analysis
from .convexgeom import Box, region_volume, smart_cut, solve_pairwise
from .errors import ConfigError, InputError
from .schemes import SchemeKind
from .sequential import (HypothesisFamily, LazyStream, ScheduleConfig, SequentialTest, body_from_dict,
                         build_sequential, compute_schedule, default_cut, run_sequential)

CONFIG_VERSION = "v1"
QUANTILES = (0.1, 0.25, 0.5, 0.75, 0.9, 0.99)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    """One experiment: a hypothesis family, its schedule, and how trial points are drawn.

    ``mu_sampling`` is ``{"kind": "uniform"}`` (uniform over the union of the sets),
    ``{"kind": "grid", "resolution": m}`` (grid over the union's bounding box, points
    outside every set skipped) or ``{"kind": "fixed", "points": [...]}``; grid and
    fixed points are cycled through by trial index. ``sections`` keeps the
    command-specific parts of the config file (``volumes``, ``profile``, ``run``...).
    """

    scheme: SchemeKind
    bodies: list
    colors: list
    eps: float
    kbar: Optional[list] = None
    cut_policy: str = "default"
    trials: int = 2000
    seed: int = 0
    mu_sampling: dict = field(default_factory=lambda: {"kind": "uniform"})
    S: Optional[int] = None
    r: dict = field(default_factory=dict)
    sections: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        kind = self.mu_sampling.get("kind")
        if kind not in ("uniform", "grid", "fixed"):
            raise ConfigError(f"unknown mu_sampling kind {kind!r}")
        if kind == "grid" and int(self.mu_sampling.get("resolution", 0)) < 2:
            raise ConfigError("grid resolution must be >= 2")
        if kind == "fixed" and not self.mu_sampling.get("points"):
            raise ConfigError("fixed mu_sampling needs a nonempty 'points' list")
        if len(self.bodies) != len(self.colors):
            raise ConfigError("need exactly one color per body")

    def schedule_config(self) -> ScheduleConfig:
        return ScheduleConfig(self.eps, self.kbar, self.cut_policy, self.S, dict(self.r))

    def family(self) -> HypothesisFamily:
        return HypothesisFamily(self.bodies, self.colors, self.scheme)

    def replace(self, **kw) -> "ExperimentConfig":
        doc = {k: getattr(self, k) for k in self.__dataclass_fields__}
        doc.update(kw)
        return ExperimentConfig(**doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        if doc.get("version") != CONFIG_VERSION:
            raise ConfigError(f"config version must be {CONFIG_VERSION!r}, got {doc.get('version')!r}")
        try:
            scheme = _scheme_from(doc["scheme"])
            bodies = [body_from_dict(b, validate=True) for b in doc["bodies"]]
            colors = [int(c) for c in doc["colors"]]
            over = doc.get("overrides", {})
            return cls(scheme=scheme, bodies=bodies, colors=colors, eps=float(doc["eps"]),
                       kbar=doc.get("kbar"), cut_policy=doc.get("cut_policy", "default"),
                       trials=int(doc.get("trials", 2000)), seed=int(doc.get("seed", 0)),
                       mu_sampling=dict(doc.get("mu_sampling", {"kind": "uniform"})),
                       S=over.get("S"), r={int(s): float(v) for s, v in over.get("r", {}).items()},
                       sections={k: doc[k] for k in ("volumes", "profile", "run", "pair") if k in doc})
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad config: {exc!r}") from exc

    def to_dict(self) -> dict:
        from .sequential import body_to_dict

        return {"version": CONFIG_VERSION, "scheme": {"kind": self.scheme.kind, "n": self.scheme.n},
                "bodies": [body_to_dict(b) for b in self.bodies], "colors": list(self.colors),
                "eps": self.eps, "kbar": self.kbar, "cut_policy": self.cut_policy, "trials": self.trials,
                "seed": int(self.seed), "mu_sampling": self.mu_sampling,
                "overrides": {"S": self.S, "r": {str(s): v for s, v in self.r.items()}}, **self.sections}


def _scheme_from(d):
    if "kind" in d:
        return SchemeKind(d["kind"], int(d["n"]))
    kinds = [k for k in d if k != "n"]
    if len(kinds) != 1:
        raise ConfigError(f"cannot read scheme from {d!r}")
    return SchemeKind(kinds[0], int(d["n"]))


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return ExperimentConfig.from_dict(doc)


# ---------------------------------------------------------------------------
# trials


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    seed: int
    mu: tuple
    color_true: int
    color_accepted: Optional[int]
    stage: int
    observations: int
    s_star: int
    k_star: int

    @property
    def correct(self):
        return self.color_accepted == self.color_true

    @property
    def late(self):
        return self.observations > self.k_star


@dataclass
class ExperimentReport:
    records: list
    aggregates: dict
    build: dict
    config: dict

    def to_dict(self):
        return {"aggregates": self.aggregates, "build": self.build, "config": self.config}


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(trial,)))


def trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence(int(seed), spawn_key=(trial,)).generate_state(1, np.uint64)[0])


def _union_bbox(bodies):
    boxes = [b.bounding_box() for b in bodies]
    return np.min([lo for lo, _ in boxes], axis=0), np.max([hi for _, hi in boxes], axis=0)


def _uniform_union(bodies, rng, max_tries=1_000_000):
    lo, hi = _union_bbox(bodies)
    for _ in range(max_tries):
        x = lo + (hi - lo) * rng.random(len(lo))
        if any(b.contains(x, tol=0.0) for b in bodies):
            return x
    raise InputError("could not draw a point in the union of the sets")


def grid_points(bodies, resolution: int):
    """Grid over the union's bounding box, keeping the points inside some set."""
    lo, hi = _union_bbox(bodies)
    axes = [np.linspace(a, b, resolution) for a, b in zip(lo, hi)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))
    return [p for p in pts if any(b.contains(p) for b in bodies)]


def _home_color(family, mu):
    for j, b in enumerate(family.bodies):
        if b.contains(mu):
            return family.colors[j]
    raise InputError(f"point {mu} lies in none of the hypothesis sets")


def _run_trial(test: SequentialTest, cfg: ExperimentConfig, points, trial: int) -> TrialRecord:
    rng = trial_rng(cfg.seed, trial)
    fam = test.family
    if points is None:
        mu = _uniform_union(fam.bodies, rng)
    else:
        mu = np.asarray(points[trial % len(points)], dtype=float)
    verdict = run_sequential(test, LazyStream(fam.scheme, mu, rng))
    s = analysis.s_star(mu, test)
    return TrialRecord(trial, trial_seed(cfg.seed, trial), tuple(float(v) for v in mu), _home_color(fam, mu),
                       verdict.accepted_color, verdict.stage, verdict.observations_used, s,
                       analysis.stage_k(test, s))


def _points(cfg: ExperimentConfig, family):
    kind = cfg.mu_sampling["kind"]
    if kind == "uniform":
        return None
    if kind == "grid":
        pts = grid_points(family.bodies, int(cfg.mu_sampling["resolution"]))
        if not pts:
            raise ConfigError("the sampling grid has no point inside the sets")
        return pts
    pts = [np.asarray(p, dtype=float) for p in cfg.mu_sampling["points"]]
    for p in pts:
        _home_color(family, p)
    return pts


def build_metadata(test: SequentialTest) -> dict:
    return {"S": test.schedule.S, "stages_kept": test.S, "d": test.d, "K": test.K,
            "stages": [{"s": st.s, "k": st.k, "eps_s": st.eps_s, "r_s": st.r_s, "delta_s": st.delta_s,
                        "cells": st.L, "achieved_risk": st.achieved} for st in test.stages]}


def aggregate(records) -> dict:
    obs = np.array([r.observations for r in records], dtype=float)
    n = len(records)
    wrong = sum(r.color_accepted is not None and not r.correct for r in records)
    undecided = sum(r.color_accepted is None for r in records)
    mean, median = float(obs.mean()), float(np.median(obs))
    return {"trials": n, "error_rate": wrong / n, "no_decision_rate": undecided / n,
            "late_rate": sum(r.correct and r.late for r in records) / n,
            "mean_observations": mean, "median_observations": median,
            "mean_over_median": mean / median,
            "quantiles": {str(q): float(np.quantile(obs, q)) for q in QUANTILES},
            "max_observations": float(obs.max())}


def run_experiment(cfg: ExperimentConfig, threads: int = 1, test: Optional[SequentialTest] = None
                   ) -> ExperimentReport:
    """Build the test once and run ``cfg.trials`` seeded trials on lazily drawn streams."""
    if test is None:
        test = build_sequential(cfg.family(), cfg.schedule_config())
    points = _points(cfg, test.family)
    trials = range(cfg.trials)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            records = list(pool.map(lambda t: _run_trial(test, cfg, points, t), trials))
    else:
        records = [_run_trial(test, cfg, points, t) for t in trials]
    return ExperimentReport(records, aggregate(records), build_metadata(test), cfg.to_dict())


# ---------------------------------------------------------------------------
# risk calibration


@dataclass(frozen=True)
class Calibration:
    """Empirical rates with Wilson 95% intervals.

    ``failure`` is the event "wrong color accepted, no decision, or the correct
    color accepted only after the stage ``s*(mu)``"; ``violation`` flags a
    failure interval lying entirely above ``eps``.
    """

    eps: float
    trials: int
    wrong_rate: float
    wrong_ci: tuple
    no_decision_rate: float
    no_decision_ci: tuple
    failure_rate: float
    failure_ci: tuple
    violation: bool


def wilson(successes: int, n: int, level: float = 0.95) -> tuple:
    ci = binomtest(successes, n).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def calibrate_from_records(records, eps: float) -> Calibration:
    n = len(records)
    wrong = sum(r.color_accepted is not None and not r.correct for r in records)
    none = sum(r.color_accepted is None for r in records)
    fail = sum(not (r.correct and not r.late) for r in records)
    fci = wilson(fail, n)
    return Calibration(eps, n, wrong / n, wilson(wrong, n), none / n, wilson(none, n), fail / n, fci,
                       fci[0] > eps)


def calibrate_risk(cfg: ExperimentConfig, threads: int = 1):
    """Run the experiment and return ``(calibration, report)``."""
    if cfg.trials < 500:
        raise ConfigError("calibration needs at least 500 trials")
    report = run_experiment(cfg, threads)
    return calibrate_from_records(report.records, cfg.eps), report


# ---------------------------------------------------------------------------
# volumes of bad cells in the two-box template


def two_box_family(n: int, delta: float) -> HypothesisFamily:
    """``X1 = [delta, 1 + delta] x [0, 1]^(n-1)`` (color 1) against ``X2 = [-1, 0]^n`` (color 2)."""
    lower = np.zeros(n)
    lower[0] = delta
    upper = np.ones(n)
    upper[0] = 1 + delta
    return HypothesisFamily([Box(lower, upper), Box(-np.ones(n), np.zeros(n))], [1, 2], SchemeKind.gaussian(n))


@dataclass(frozen=True)
class VolumeRow:
    n: int
    policy: str
    volume: float
    stderr: float


def volumes_report(dims=(2, 3, 4, 5, 6), delta: float = 0.1, stage: int = 11, eps: float = 0.01,
                   r: Optional[float] = None, samples: int = 1_000_000, seed: int = 0,
                   policies=("default", "smart")) -> list[VolumeRow]:
    """Volume of the bad cell of ``X1`` at one stage, per dimension and cut policy.

    ``r`` overrides the stage margin; otherwise it follows the schedule for the
    family. Default cuts of this family are axis-aligned, so their volume is exact.
    """
    rows = []
    for n in dims:
        fam = two_box_family(n, delta)
        d = fam.separation()
        r_s = r if r is not None else float(compute_schedule(2, ScheduleConfig(eps), d).r[stage - 1])
        X, Y = fam.bodies
        for policy in policies:
            if policy == "default":
                cut = default_cut(fam.saddle(0, 1), r_s)
            else:
                cut, _ = smart_cut(fam.scheme, X, Y, r_s)
            rng = trial_rng(seed, n)
            vol, err = region_volume(X, [cut], rng, samples=samples)
            rows.append(VolumeRow(n, policy, vol, err))
    return rows


# ---------------------------------------------------------------------------
# stage-bound profiles


@dataclass(frozen=True)
class ProfileRow:
    x: float
    y: float
    ln_k_sstar: float
    ln_k_sbar: float


def profile_grid(test: SequentialTest, xs, ys) -> list[ProfileRow]:
    """``ln k(s*(mu))`` and ``ln k(s_bar(mu))`` over a 2-d grid; NaN outside the sets."""
    if test.family.scheme.n != 2:
        raise ConfigError("profiles are drawn over two-dimensional families")
    gauss = test.family.scheme.kind == "gaussian"
    rows = []
    for x in xs:
        for y in ys:
            mu = np.array([x, y], dtype=float)
            try:
                s = analysis.s_star(mu, test)
            except InputError:
                rows.append(ProfileRow(float(x), float(y), math.nan, math.nan))
                continue
            ks = math.log(analysis.stage_k(test, s))
            kb = math.log(analysis.stage_k(test, analysis.s_bar_gaussian(mu, test)[0])) if gauss else math.nan
            rows.append(ProfileRow(float(x), float(y), ks, kb))
    return rows


# ---------------------------------------------------------------------------
# writers


def trial_rows(records) -> tuple[list, list]:
    n = len(records[0].mu) if records else 0
    header = ["seed"] + [f"mu{i + 1}" for i in range(n)] + ["color_true", "color_accepted", "stage",
                                                            "observations"]
    rows = [[r.seed, *(_num(v) for v in r.mu), r.color_true,
             "" if r.color_accepted is None else r.color_accepted, r.stage, r.observations] for r in records]
    return header, rows


def dataclass_rows(items) -> tuple[list, list]:
    if not items:
        return [], []
    header = list(asdict(items[0]).keys())
    return header, [[_num(v) for v in asdict(it).values()] for it in items]


def _num(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return v


def table_text(header, rows, fmt: str = "csv") -> str:
    if fmt == "json":
        return json.dumps([dict(zip(header, r)) for r in rows], indent=1) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def json_text(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o)}")


def solve_pair_report(cfg: ExperimentConfig, i: int = 0, j: int = 1, tol: float = 1e-9) -> dict:
    sp = solve_pairwise(cfg.scheme, cfg.bodies[i], cfg.bodies[j], tol=tol)
    return {"pair": [i, j], "mu_star": sp.mu_star.tolist(), "nu_star": sp.nu_star.tolist(), "opt": sp.opt,
            "risk": math.exp(sp.opt), "certified_gap": sp.certified_gap, "iterations": sp.iterations}
