"""Performance analytics: separation, sample-size bounds and per-point stage bounds.

``s_star(mu)`` is the first stage whose partition puts ``mu`` into a good cell;
the sequential test stops (correctly, with probability at least ``1 - eps``)
no later than that stage. For Gaussian families with default cuts,
``s_bar_gaussian`` is an explicit upper bound on it driven by how deep ``mu``
sits inside its set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import schemes
from .convexgeom import Box, solve_pairwise
from .errors import AssumptionViolation, InputError, UnsupportedOperation
from .sequential import HypothesisFamily, SequentialTest

DEFAULT_KAPPA = 5.0


@dataclass(frozen=True)
class SeparationReport:
    """``d = min over cross-color pairs of -psi_jj'``, attained at ``pair``."""

    d: float
    pair: tuple
    psi: dict


@dataclass(frozen=True)
class StageBoundReport:
    s_star: int
    s_bar: Optional[int]
    rho: float
    kappa: float = DEFAULT_KAPPA


def separation(family: HypothesisFamily, tol: float = 1e-9) -> SeparationReport:
    psi = {}
    for j, j2 in family.cross_pairs():
        if j < j2:
            sp = solve_pairwise(family.scheme, family.bodies[j], family.bodies[j2], tol=tol)
            if sp.opt >= -1e-12:
                raise AssumptionViolation(f"sets {j} and {j2} are not separated (psi max {sp.opt:.3e})")
            psi[(j, j2)] = psi[(j2, j)] = sp.opt
    pair = max((p for p in psi if p[0] < p[1]), key=lambda p: psi[p])
    return SeparationReport(-psi[pair], pair, psi)


def k_plus(eps: float, d: float):
    """Lower bound ``K+`` on the sample size of any ``eps``-reliable test, with the floor ``ln(1/eps)/(4d)``.

    Returns ``(k_plus, floor)``.
    """
    if not 0 < eps < 0.25:
        raise ValueError("eps must lie in (0, 1/4)")
    if d <= 0:
        raise ValueError("d must be positive")
    L = math.log(1 / eps)
    return (0.5 * L - math.log(2)) / L * L / d, L / (4 * d)


def worst_case_bound(J: int, eps: float, d: float, kappa: float = DEFAULT_KAPPA):
    """``(premise, bound)``: whether ``ln(1/d) <= kappa ln(J^2/eps)``, and ``max(1, 5 kappa ln(J^2/eps) / d)``."""
    if J < 2 or not 0 < eps < 0.25 or kappa < 1 or d <= 0:
        raise ValueError("need J >= 2, eps in (0, 1/4), kappa >= 1, d > 0")
    lg = math.log(J**2 / eps)
    return math.log(1 / d) <= kappa * lg, max(1.0, 5 * kappa * lg / d)


def _homes(mu, test: SequentialTest):
    fam = test.family
    mu = np.asarray(mu, dtype=float)
    homes = [j for j, body in enumerate(fam.bodies) if body.contains(mu)]
    if not homes:
        raise InputError(f"point {mu} lies in none of the hypothesis sets")
    return mu, homes


def s_star(mu, test: SequentialTest) -> int:
    """Smallest stage number ``s`` at which ``mu`` lies in the good cell of a set containing it.

    Stage numbers are those of the schedule (``1..S``); stages dropped from the
    built test count with their own numbers, so the value is always ``<= S``.
    """
    mu, homes = _homes(mu, test)
    fam = test.family
    for st in sorted(test.stages, key=lambda st: st.s):
        for j in homes:
            if all(st.cuts[(j, j2)](mu) <= 0 for j2 in fam.opponents(j)):
                return st.s
    return test.schedule.S


def inscribed_radius(mu, body) -> float:
    """Distance from ``mu`` to the boundary of ``body`` (0 outside)."""
    if isinstance(body, Box):
        return max(0.0, float(min(np.min(mu - body.lower), np.min(body.upper - mu))))
    A, b = body.constraints()
    return max(0.0, float(np.min((b - A @ mu) / np.linalg.norm(A, axis=1))))


def s_bar_gaussian(mu, test: SequentialTest, sep: Optional[SeparationReport] = None):
    """``min{s <= S : r(s) <= d + sqrt(d/2) rho(mu)}`` with ``rho`` the depth of ``mu`` in its set.

    Returns ``(s_bar, rho)``. Defined for Gaussian families only.
    """
    if test.family.scheme.kind != schemes.GAUSSIAN:
        raise UnsupportedOperation("the depth bound on the stopping stage holds for Gaussian families only")
    mu, homes = _homes(mu, test)
    d = sep.d if sep is not None else test.d
    rho = max(inscribed_radius(mu, test.family.bodies[j]) for j in homes)
    threshold = d + math.sqrt(d / 2) * rho
    hits = np.flatnonzero(test.schedule.r <= threshold)
    return (int(hits[0]) + 1 if hits.size else test.schedule.S), rho


def stage_bounds(mu, test: SequentialTest, sep: Optional[SeparationReport] = None,
                 kappa: float = DEFAULT_KAPPA) -> StageBoundReport:
    s = s_star(mu, test)
    if test.family.scheme.kind == schemes.GAUSSIAN:
        sb, rho = s_bar_gaussian(mu, test, sep)
    else:
        sb, rho = None, max(inscribed_radius(np.asarray(mu, float), test.family.bodies[j])
                            for j in _homes(mu, test)[1])
    return StageBoundReport(s, sb, rho, kappa)


def stage_k(test: SequentialTest, s: int) -> int:
    """Observations the built test uses by schedule stage ``s`` (``K`` if that stage was dropped)."""
    for st in test.stages:
        if st.s == s:
            return min(st.k, test.K)
    return test.K
