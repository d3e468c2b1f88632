"""Staged sequential test over convex hypothesis sets.

Stage ``s`` splits every set ``X_j`` with affine cuts into a "good" cell, whose
points are provably far (in rate) from every set of another color, and "bad"
cells. Cells of different colors whose detector risk is below the stage
tolerance must be told apart by the stage test; the number of observations
``k_s`` a stage needs is the smallest one bringing the spectral norm of the
masked risk matrix below the per-stage budget. Running the test applies the
stage tests to growing prefixes of one observation stream and stops at the
first stage accepting a nonempty set of cells of a single color.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import multitest, schemes
from .convexgeom import (Box, ConvexBody, Cut, Polytope, SaddlePoint, discarded, retained,
                         smart_cut, solve_pairwise)
from .errors import (AssumptionViolation, BuildError, ConfigError, CutInfeasibleError,
                     InputError)
from .pairwise import Detector, build_detector
from .schemes import SchemeKind

log = logging.getLogger(__name__)

FORMAT_VERSION = "seqtest/v1"
SOLVE_TOL = 1e-9
RISK_ONE = 1.0 - 1e-12


# ---------------------------------------------------------------------------
# inputs


class HypothesisFamily:
    """Sets ``X_1..X_J`` painted in ``I >= 2`` colors, for one observation scheme.

    Cross-color pairs are solved once at construction; a pair whose rate
    maximum is not negative violates the separation assumption.
    """

    def __init__(self, bodies: Sequence[ConvexBody], colors: Sequence[int], scheme: SchemeKind,
                 tol: float = SOLVE_TOL):
        if len(bodies) != len(colors):
            raise ValueError("need exactly one color per body")
        self.bodies = list(bodies)
        self.colors = [int(c) for c in colors]
        self.scheme = scheme
        if len(set(self.colors)) < 2:
            raise ValueError("a hypothesis family needs at least two colors")
        self._saddles: dict[tuple[int, int], SaddlePoint] = {}
        for j, j2 in self.cross_pairs():
            if j < j2:
                sp = solve_pairwise(scheme, self.bodies[j], self.bodies[j2], tol=tol)
                if sp.opt >= -1e-12:
                    raise AssumptionViolation(
                        f"sets {j} and {j2} have different colors but are not separated (psi max {sp.opt:.3e})")
                self._saddles[(j, j2)] = sp
                self._saddles[(j2, j)] = sp.swapped()

    @property
    def J(self):
        return len(self.bodies)

    def opponents(self, j):
        return [k for k in range(self.J) if self.colors[k] != self.colors[j]]

    def cross_pairs(self):
        return [(j, k) for j in range(self.J) for k in self.opponents(j)]

    def saddle(self, j, j2) -> SaddlePoint:
        return self._saddles[(j, j2)]

    def separation(self):
        return min(-sp.opt for sp in self._saddles.values())


@dataclass
class ScheduleConfig:
    """Risk level, stage sample schedule ``kbar(s)`` and cut policy.

    ``kbar`` is None for ``2**(s-1)`` or an explicit list ``[kbar(1), kbar(2), ...]``.
    ``S`` overrides the number of stages; ``r`` maps stage numbers to overridden
    cut margins.
    """

    eps: float
    kbar: Optional[list] = None
    cut_policy: str = "default"
    S: Optional[int] = None
    r: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise ConfigError("eps must lie in (0, 1)")
        if self.cut_policy not in ("default", "smart"):
            raise ConfigError(f"unknown cut policy {self.cut_policy!r}")
        if self.kbar is not None:
            k = [int(v) for v in self.kbar]
            if not k or k[0] != 1 or any(not (a < b <= 2 * a) for a, b in zip(k, k[1:])):
                raise ConfigError("kbar must start at 1 and satisfy kbar(s) < kbar(s+1) <= 2 kbar(s)")
            self.kbar = k
        self.r = {int(s): float(v) for s, v in self.r.items()}

    def kbar_at(self, s: int) -> int:
        if self.kbar is None:
            return 2 ** (s - 1)
        if s > len(self.kbar):
            raise ConfigError(f"kbar schedule has only {len(self.kbar)} entries, stage {s} requested")
        return self.kbar[s - 1]


@dataclass
class Schedule:
    S: int
    eps_s: np.ndarray
    r: np.ndarray
    delta: np.ndarray
    kbar: np.ndarray


def compute_schedule(J: int, cfg: ScheduleConfig, d: float) -> Schedule:
    """Number of stages and per-stage budgets, margins and tolerances.

    ``S`` is the smallest integer with ``kbar(S) > ln(S J^2 / eps) / d`` unless
    overridden; ``eps_s = eps / (2S)``, ``r(s) = ln(S J^2 / eps) / kbar(s)``,
    ``delta_s = exp(-r(s))``.
    """
    if d <= 0:
        raise ValueError("separation d must be positive")
    if cfg.S is not None:
        S = int(cfg.S)
    else:
        S = 1
        while cfg.kbar_at(S) <= math.log(S * J**2 / cfg.eps) / d:
            S += 1
    lg = math.log(S * J**2 / cfg.eps)
    kbar = np.array([cfg.kbar_at(s) for s in range(1, S + 1)])
    r = lg / kbar
    for s, v in cfg.r.items():
        if 1 <= s <= S:
            r[s - 1] = v
    return Schedule(S, np.full(S, cfg.eps / (2 * S)), r, np.exp(-r), kbar)


# ---------------------------------------------------------------------------
# cuts and cells


def default_cut(saddle: SaddlePoint, r: float) -> Cut:
    """``l(mu) = psi(mu*, nu*) + grad_mu @ (mu - mu*) + r``; ``l <= 0`` keeps the rate below ``-r``."""
    if r < 0:
        raise ValueError("r must be nonnegative")
    e = saddle.grad_mu
    return Cut(e, saddle.opt - float(e @ saddle.mu_star) + r)


@dataclass(frozen=True, eq=False)
class Cell:
    body: ConvexBody
    origin: int
    color: int
    good: bool


def stage_cuts(family: HypothesisFamily, r: float, policy: str, last: bool) -> dict:
    """One cut per ordered cross-color pair ``(j, j')``."""
    cuts = {}
    n = family.scheme.n
    for j, j2 in family.cross_pairs():
        if last:
            cuts[(j, j2)] = Cut.keep_all(n)
        elif policy == "smart":
            try:
                cuts[(j, j2)], _ = smart_cut(family.scheme, family.bodies[j], family.bodies[j2], r)
            except CutInfeasibleError:
                cuts[(j, j2)] = default_cut(family.saddle(j, j2), r)
        else:
            cuts[(j, j2)] = default_cut(family.saddle(j, j2), r)
    return cuts


def partition_stage(family: HypothesisFamily, cuts: dict) -> list[Cell]:
    """Good and bad cells of every set; empty cells dropped, duplicates within a set merged."""
    cells = []
    for j, body in enumerate(family.bodies):
        color = family.colors[j]
        seen = set()
        good = body
        for j2 in family.opponents(j):
            good = retained(good, cuts[(j, j2)]) if good is not None else None
        candidates = [(good, True)] + [(discarded(body, cuts[(j, j2)]), False)
                                       for j2 in family.opponents(j)]
        for cell_body, is_good in candidates:
            if cell_body is None:
                continue
            key = cell_body.key()
            if key in seen:
                continue
            seen.add(key)
            cells.append(Cell(cell_body, j, color, is_good))
    if len(cells) > family.J**2:
        raise BuildError(f"{len(cells)} cells exceed the J^2 = {family.J**2} bound")
    return cells


# ---------------------------------------------------------------------------
# stages


@dataclass(eq=False)
class StageComponent:
    scheme: SchemeKind
    s: int
    eps_s: float
    r_s: float
    delta_s: float
    cells: list
    cuts: dict
    eps: np.ndarray
    closeness: np.ndarray
    shifts: np.ndarray
    k: int
    saddles: dict
    achieved: float = float("nan")

    def __post_init__(self):
        self._compile()

    def _compile(self):
        pairs = np.argwhere(self.closeness == 1)
        self._pairs = pairs
        dets = [self.detector(int(i), int(j)) for i, j in pairs]
        n = self.cells[0].body.dim if self.cells else 0
        self._a = np.array([d.as_affine.a for d in dets]).reshape(len(dets), -1) if dets else np.zeros((0, n))
        self._b = np.array([d.as_affine.b for d in dets])
        self._alpha = np.array([self.shifts[i, j] for i, j in pairs])
        self._colors = np.array([c.color for c in self.cells])

    def detector(self, q: int, q2: int) -> Detector:
        """Unshifted detector between cells ``q`` and ``q2`` (different colors)."""
        if (q, q2) in self.saddles:
            sp = self.saddles[(q, q2)]
        else:
            sp = self.saddles[(q2, q)].swapped()
        return build_detector(sp, self.scheme)

    @property
    def L(self):
        return len(self.cells)

    def accepted(self, stat, k=None) -> list[int]:
        """Cells accepted on ``k`` observations with sufficient statistic ``stat``."""
        k = self.k if k is None else k
        values = self._a @ stat + k * self._b - self._alpha
        rejected = np.zeros(self.L, dtype=bool)
        rejected[self._pairs[values <= 0, 0]] = True
        return [int(q) for q in np.flatnonzero(~rejected)]

    def decision(self, stat) -> Optional[int]:
        acc = self.accepted(stat)
        if not acc:
            return None
        colors = set(self._colors[acc].tolist())
        return colors.pop() if len(colors) == 1 else None


def _smallest_k(eps, c, budget):
    if multitest.risk_matrix_norm(eps, c, 1) < budget:
        return 1
    hi = 2
    while multitest.risk_matrix_norm(eps, c, hi) >= budget:
        hi *= 2
    lo = hi // 2  # norm(lo) >= budget
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if multitest.risk_matrix_norm(eps, c, mid) < budget:
            hi = mid
        else:
            lo = mid
    return hi


class _SolveCache:
    def __init__(self, scheme, tol=SOLVE_TOL):
        self.scheme, self.tol, self.store = scheme, tol, {}

    def __call__(self, X, Y):
        key = (X.key(), Y.key())
        if key not in self.store:
            back = (Y.key(), X.key())
            if back in self.store:
                return self.store[back].swapped()
            self.store[key] = solve_pairwise(self.scheme, X, Y, tol=self.tol, check=False)
        return self.store[key]


def build_stage(scheme: SchemeKind, cells: list, s: int, eps_s: float, r_s: float, delta_s: float,
                kbar_s: int, cuts: dict, last: bool = False, solver=None,
                enforce_kbar: bool = True) -> StageComponent:
    """Detectors, closeness, sample size and shifts for one partition.

    On the last stage every cross-color pair is forced non-close; the recorded
    tolerance is raised to the largest cross risk if the schedule's own
    tolerance falls below it. ``k <= kbar_s`` is a build error when
    ``enforce_kbar`` is set and a logged warning otherwise.
    """
    if not cells:
        raise BuildError(f"stage {s} has no cells")
    solver = solver or _SolveCache(scheme)
    L = len(cells)
    eps = np.ones((L, L))
    saddles = {}
    for q in range(L):
        for q2 in range(q + 1, L):
            if cells[q].color == cells[q2].color:
                continue
            sp = solver(cells[q].body, cells[q2].body)
            risk = math.exp(sp.opt)
            if risk >= RISK_ONE:
                raise AssumptionViolation(
                    f"stage {s}: cells {q} and {q2} of different colors have detector risk {risk}")
            saddles[(q, q2)] = sp
            eps[q, q2] = eps[q2, q] = risk
    cross = np.array([[c1.color != c2.color for c2 in cells] for c1 in cells])
    if last:
        if cross.any():
            delta_s = max(delta_s, float(eps[cross].max()))
        closeness = cross.astype(int)
    else:
        closeness = (cross & (eps <= delta_s)).astype(int)
    k = _smallest_k(eps, closeness, eps_s)
    norm = multitest.risk_matrix_norm(eps, closeness, k)
    eta = min(1e-9 * (norm + 1.0), max((eps_s - norm) / (2 * L), 1e-300))
    alpha, achieved = multitest.optimal_shifts(eps, closeness, k, eta=eta)
    if achieved > eps_s:
        raise BuildError(f"stage {s}: shifted risk {achieved} exceeds budget {eps_s}")
    if k > kbar_s:
        if enforce_kbar:
            raise BuildError(f"stage {s}: k = {k} exceeds kbar = {kbar_s}")
        log.warning("stage %d: k = %d exceeds kbar = %d", s, k, kbar_s)
    return StageComponent(scheme, s, eps_s, float(r_s), float(delta_s), cells, cuts, eps,
                          closeness, alpha, k, saddles, achieved)


# ---------------------------------------------------------------------------
# the sequential test


@dataclass(eq=False)
class SequentialTest:
    family: HypothesisFamily
    config: ScheduleConfig
    schedule: Schedule
    d: float
    stages: list

    @property
    def K(self):
        return self.stages[-1].k

    @property
    def S(self):
        return len(self.stages)


def build_sequential(family: HypothesisFamily, cfg: ScheduleConfig) -> SequentialTest:
    """Assemble all stages; stages needing more than ``k_S`` observations are dropped
    and the rest ordered by nondecreasing sample size."""
    d = family.separation()
    sched = compute_schedule(family.J, cfg, d)
    if sched.r[-1] >= d:
        log.warning("r(S) = %.4g is not below d = %.4g; the last stage tolerance will be raised",
                    sched.r[-1], d)
    # the k <= kbar guarantee needs kbar(S) > ln(S J^2 / eps) / d, which an S override may break
    enforce = sched.kbar[-1] > math.log(sched.S * family.J**2 / cfg.eps) / d
    solver = _SolveCache(family.scheme)
    stages = []
    for s in range(1, sched.S + 1):
        last = s == sched.S
        cuts = stage_cuts(family, sched.r[s - 1], cfg.cut_policy, last)
        cells = partition_stage(family, cuts)
        stages.append(build_stage(family.scheme, cells, s, sched.eps_s[s - 1], sched.r[s - 1],
                                  sched.delta[s - 1], int(sched.kbar[s - 1]), cuts, last, solver, enforce))
    K = stages[-1].k
    kept = sorted((st for st in stages[:-1] if st.k <= K), key=lambda st: st.k) + [stages[-1]]
    return SequentialTest(family, cfg, sched, d, kept)


@dataclass(frozen=True)
class Verdict:
    accepted_color: Optional[int]
    stage: int
    observations_used: int


class ArrayStream:
    """Prefix statistics of a fixed array of observations."""

    def __init__(self, scheme: SchemeKind, observations):
        self.scheme = scheme
        self.obs = np.asarray(observations)
        self.capacity = len(self.obs)

    def statistic(self, k):
        return schemes.statistic(self.scheme, self.obs[:k])


class LazyStream:
    """Observations of ``p_mu`` drawn on demand; only sufficient statistics are kept."""

    def __init__(self, scheme: SchemeKind, mu, rng: np.random.Generator):
        self.scheme = scheme
        self.mu = schemes.check_point(scheme, mu)
        self.rng = rng
        self.drawn = 0
        self.capacity = math.inf
        self._stat = np.zeros(scheme.n)

    def statistic(self, k):
        if k < self.drawn:
            raise InputError("lazy streams only move forward")
        if k > self.drawn:
            self._stat = self._stat + schemes.sample_statistic(self.scheme, self.mu, self.rng, k - self.drawn)
            self.drawn = k
        return self._stat


def run_sequential(test: SequentialTest, stream) -> Verdict:
    """Apply the stage tests to growing prefixes of ``stream`` until one color wins.

    ``stream`` is an observation array (at least ``K`` long) or a stream object
    with ``statistic(k)``.
    """
    if not hasattr(stream, "statistic"):
        stream = ArrayStream(test.family.scheme, stream)
    if stream.capacity < test.K:
        raise InputError(f"stream holds {stream.capacity} observations, the test needs K = {test.K}")
    for pos, stage in enumerate(test.stages, start=1):
        color = stage.decision(stream.statistic(stage.k))
        if color is not None:
            return Verdict(color, pos, stage.k)
    return Verdict(None, test.S, test.K)


# ---------------------------------------------------------------------------
# JSON round trip; reals are written as 17-significant-digit strings


def _f(x):
    return format(float(x), ".17g")


def _arr(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return _f(a)
    return [_arr(v) for v in a]


def _unarr(v):
    if isinstance(v, list):
        return np.array([_unarr(x) for x in v], dtype=float) if v else np.zeros(0)
    return float(v)


def body_to_dict(body: ConvexBody):
    if isinstance(body, Box):
        return {"box": {"lower": _arr(body.lower), "upper": _arr(body.upper)}}
    return {"polytope": {"A": _arr(body.A), "b": _arr(body.b),
                         "simplex_restricted": body.simplex_restricted, "margin": _f(body.margin)}}


def body_from_dict(d, validate=False):
    if "box" in d:
        return Box(_unarr(d["box"]["lower"]), _unarr(d["box"]["upper"]))
    p = d["polytope"]
    return Polytope(np.atleast_2d(_unarr(p["A"])), _unarr(p["b"]), bool(p.get("simplex_restricted", False)),
                    float(p.get("margin", 1e-9)), validate=validate)


def _saddle_to_dict(sp: SaddlePoint):
    return {"mu": _arr(sp.mu_star), "nu": _arr(sp.nu_star), "opt": _f(sp.opt),
            "grad_mu": _arr(sp.grad_mu), "grad_nu": _arr(sp.grad_nu), "gap": _f(sp.certified_gap)}


def _saddle_from_dict(d):
    return SaddlePoint(_unarr(d["mu"]), _unarr(d["nu"]), float(d["opt"]), _unarr(d["grad_mu"]),
                       _unarr(d["grad_nu"]), float(d["gap"]))


def to_dict(test: SequentialTest) -> dict:
    fam, cfg, sch = test.family, test.config, test.schedule
    return {
        "format": FORMAT_VERSION,
        "scheme": {"kind": fam.scheme.kind, "n": fam.scheme.n},
        "bodies": [body_to_dict(b) for b in fam.bodies],
        "colors": fam.colors,
        "family_saddles": [{"pair": [j, j2], **_saddle_to_dict(fam.saddle(j, j2))}
                           for j, j2 in fam.cross_pairs() if j < j2],
        "config": {"eps": _f(cfg.eps), "kbar": cfg.kbar, "cut_policy": cfg.cut_policy, "S": cfg.S,
                   "r": {str(s): _f(v) for s, v in cfg.r.items()}},
        "d": _f(test.d),
        "schedule": {"S": sch.S, "eps_s": _arr(sch.eps_s), "r": _arr(sch.r), "delta": _arr(sch.delta),
                     "kbar": [int(k) for k in sch.kbar]},
        "stages": [{
            "s": st.s, "eps_s": _f(st.eps_s), "r_s": _f(st.r_s), "delta_s": _f(st.delta_s), "k": st.k,
            "achieved": _f(st.achieved),
            "cells": [{"origin": c.origin, "color": c.color, "good": c.good, **body_to_dict(c.body)}
                      for c in st.cells],
            "cuts": [{"pair": [j, j2], "normal": _arr(cut.normal), "offset": _f(cut.offset),
                      "separating": cut.separating} for (j, j2), cut in st.cuts.items()],
            "eps": _arr(st.eps), "closeness": st.closeness.astype(int).tolist(), "shifts": _arr(st.shifts),
            "saddles": [{"pair": [q, q2], **_saddle_to_dict(sp)} for (q, q2), sp in st.saddles.items()],
        } for st in test.stages],
    }


def from_dict(doc: dict) -> SequentialTest:
    if doc.get("format") != FORMAT_VERSION:
        raise ConfigError(f"unsupported test format {doc.get('format')!r}")
    scheme = SchemeKind(doc["scheme"]["kind"], doc["scheme"]["n"])
    fam = HypothesisFamily.__new__(HypothesisFamily)
    fam.bodies = [body_from_dict(b) for b in doc["bodies"]]
    fam.colors = [int(c) for c in doc["colors"]]
    fam.scheme = scheme
    fam._saddles = {}
    for e in doc["family_saddles"]:
        j, j2 = e["pair"]
        sp = _saddle_from_dict(e)
        fam._saddles[(j, j2)] = sp
        fam._saddles[(j2, j)] = sp.swapped()
    c = doc["config"]
    cfg = ScheduleConfig(float(c["eps"]), c["kbar"], c["cut_policy"], c["S"],
                         {int(s): float(v) for s, v in c["r"].items()})
    sd = doc["schedule"]
    sched = Schedule(sd["S"], _unarr(sd["eps_s"]), _unarr(sd["r"]), _unarr(sd["delta"]),
                     np.array(sd["kbar"], dtype=int))
    stages = []
    for e in doc["stages"]:
        cells = [Cell(body_from_dict(cd), cd["origin"], cd["color"], cd["good"]) for cd in e["cells"]]
        cuts = {tuple(cd["pair"]): Cut(_unarr(cd["normal"]), float(cd["offset"]), cd["separating"])
                for cd in e["cuts"]}
        saddles = {tuple(sd_["pair"]): _saddle_from_dict(sd_) for sd_ in e["saddles"]}
        L = len(cells)
        st = StageComponent(scheme, e["s"], float(e["eps_s"]), float(e["r_s"]), float(e["delta_s"]), cells,
                                cuts, _unarr(e["eps"]).reshape(L, L), np.array(e["closeness"], dtype=int).reshape(L, L),
                                _unarr(e["shifts"]).reshape(L, L), int(e["k"]), saddles, float(e["achieved"]))
        stages.append(st)
    return SequentialTest(fam, cfg, sched, float(doc["d"]), stages)


def dumps(test: SequentialTest) -> str:
    return json.dumps(to_dict(test), indent=1)


def loads(text: str) -> SequentialTest:
    return from_dict(json.loads(text))
