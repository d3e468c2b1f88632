"""Convex parameter sets, the pairwise saddle problem, barrier cuts and region volumes.

Bodies are axis-aligned boxes or bounded H-polytopes ``{x : A x <= b}``.
The central routine is :func:`solve_pairwise`, which maximizes the concave
rate function ``psi(mu, nu)`` over ``X x Y`` with an away-step
conditional-gradient method and returns a certified saddle point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Union

import numpy as np
from scipy.optimize import brentq, linprog

from . import schemes
from .errors import CutInfeasibleError, InvalidParameterError, SolverFailureError
from .schemes import SchemeKind

SIMPLEX_MARGIN = 1e-9
EMPTY_TOL = 1e-9
CUT_SLACK = 1e-8


# ---------------------------------------------------------------------------
# bodies


@dataclass(frozen=True, eq=False)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape or lo.size == 0:
            raise ValueError("box bounds must be nonempty vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            raise ValueError(f"box lower bound exceeds upper bound: {lo} > {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return self.lower.size

    def constraints(self):
        eye = np.eye(self.dim)
        return np.vstack([eye, -eye]), np.concatenate([self.upper, -self.lower])

    @cached_property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    def bounding_box(self):
        return self.lower.copy(), self.upper.copy()

    def contains(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def volume(self):
        return float(np.prod(self.upper - self.lower))

    def key(self):
        return ("box", self.lower.tobytes(), self.upper.tobytes())


@dataclass(frozen=True, eq=False)
class Polytope:
    """``{x : A x <= b}``, optionally intersected with ``{sum x = 1, x >= margin}``.

    Nonemptiness and boundedness are checked with ``2n`` LPs unless ``validate=False``.
    """

    A: np.ndarray
    b: np.ndarray
    simplex_restricted: bool = False
    margin: float = SIMPLEX_MARGIN
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.shape[0] != b.size:
            raise ValueError(f"A has {A.shape[0]} rows but b has {b.size} entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        if self.validate:
            lo, hi = self.bounding_box()
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise ValueError("polytope is unbounded")

    @property
    def dim(self):
        return self.A.shape[1]

    @cached_property
    def _full(self):
        if not self.simplex_restricted:
            return self.A, self.b
        n = self.dim
        ones = np.ones((1, n))
        A = np.vstack([self.A, ones, -ones, -np.eye(n)])
        b = np.concatenate([self.b, [1.0, -1.0], np.full(n, -self.margin)])
        return A, b

    def constraints(self):
        return self._full

    @cached_property
    def _bbox(self):
        n = self.dim
        lo = np.array([linear_minimize(self, e)[i] for i, e in enumerate(np.eye(n))])
        hi = np.array([linear_minimize(self, -e)[i] for i, e in enumerate(np.eye(n))])
        return lo, hi

    def bounding_box(self):
        lo, hi = self._bbox
        return lo.copy(), hi.copy()

    @cached_property
    def center(self):
        """Chebyshev center (a point of the relative interior when the body is full-dimensional)."""
        A, b = self._full
        norms = np.linalg.norm(A, axis=1)
        c = np.zeros(self.dim + 1)
        c[-1] = -1.0
        res = linprog(c, A_ub=np.hstack([A, norms[:, None]]), b_ub=b,
                      bounds=[(None, None)] * self.dim + [(0, None)], method="highs")
        if res.status != 0:
            raise ValueError(f"polytope is empty or unbounded ({res.message})")
        return res.x[:-1]

    def contains(self, x, tol=1e-9):
        A, b = self._full
        return bool(np.all(A @ np.asarray(x, dtype=float) <= b + tol))

    def key(self):
        A, b = self._full
        return ("poly", A.tobytes(), b.tobytes())


ConvexBody = Union[Box, Polytope]


def linear_minimize(body: ConvexBody, direction) -> np.ndarray:
    """A minimizer of ``direction @ x`` over the body (a vertex when the direction is nonzero)."""
    c = np.asarray(direction, dtype=float)
    if isinstance(body, Box):
        return np.where(c > 0, body.lower, body.upper)
    A, b = body.constraints()
    res = linprog(c, A_ub=A, b_ub=b, bounds=[(None, None)] * body.dim, method="highs-ds")
    if res.status != 0:
        raise ValueError(f"LP over polytope failed: {res.message}")
    return res.x


def as_polytope(body: ConvexBody) -> Polytope:
    if isinstance(body, Polytope):
        return body
    A, b = body.constraints()
    return Polytope(A, b, validate=False)


def intersect_halfspace(body: ConvexBody, a, beta, tol=EMPTY_TOL) -> Optional[ConvexBody]:
    """``body ∩ {x : a @ x <= beta}``, or None when that set is empty.

    Redundant halfspaces return ``body`` unchanged; axis-aligned ones keep boxes boxes.
    A halfspace that only touches the body (within ``tol``) yields the touching face.
    """
    a = np.asarray(a, dtype=float)
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    if scale == 0.0:
        return body if beta >= -tol else None
    lo_val = float(a @ linear_minimize(body, a))
    if lo_val > beta + tol * max(1.0, scale):
        return None
    beta = max(beta, lo_val)
    hi_val = float(a @ linear_minimize(body, -a))
    if hi_val <= beta:
        return body
    nz = np.flatnonzero(a)
    if isinstance(body, Box) and nz.size == 1:
        i = nz[0]
        lo, hi = body.lower.copy(), body.upper.copy()
        bound = beta / a[i]
        if a[i] > 0:
            hi[i] = min(hi[i], max(bound, lo[i]))
        else:
            lo[i] = max(lo[i], min(bound, hi[i]))
        return Box(lo, hi)
    A, b = body.constraints()
    return Polytope(np.vstack([A, a]), np.append(b, beta), validate=False)


# ---------------------------------------------------------------------------
# cuts


@dataclass(frozen=True, eq=False)
class Cut:
    """Affine form ``l(x) = normal @ x + offset``; ``l <= 0`` is the retained side.

    ``separating`` marks the fallback used when the region to discard is empty.
    """

    normal: np.ndarray
    offset: float
    separating: bool = False

    def __post_init__(self):
        c = np.asarray(self.normal, dtype=float).reshape(-1)
        if not np.all(np.isfinite(c)) or not math.isfinite(self.offset):
            raise ValueError("cut coefficients must be finite")
        if np.linalg.norm(c) + abs(self.offset) == 0:
            raise ValueError("cut must not be identically zero")
        object.__setattr__(self, "normal", c)
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def keep_all(cls, n):
        """``l == -1``: everything is retained."""
        return cls(np.zeros(n), -1.0)

    def __call__(self, x):
        return np.asarray(x, dtype=float) @ self.normal + self.offset


def retained(body, cut: Cut):
    return intersect_halfspace(body, cut.normal, -cut.offset)


def discarded(body, cut: Cut):
    return intersect_halfspace(body, -cut.normal, cut.offset)


# ---------------------------------------------------------------------------
# pairwise saddle problem


@dataclass(frozen=True, eq=False)
class SaddlePoint:
    mu_star: np.ndarray
    nu_star: np.ndarray
    opt: float
    grad_mu: np.ndarray
    grad_nu: np.ndarray
    certified_gap: float
    iterations: int = 0

    def swapped(self):
        return SaddlePoint(self.nu_star, self.mu_star, self.opt, self.grad_nu,
                           self.grad_mu, self.certified_gap, self.iterations)


def _interval_gap(lo1, hi1, lo2, hi2):
    """Closest points of two families of intervals, coordinatewise."""
    x = np.where(hi1 < lo2, hi1, np.where(lo1 > hi2, lo1, np.maximum(lo1, lo2)))
    y = np.clip(x, lo2, hi2)
    return x, y


def check_body(scheme: SchemeKind, body: ConvexBody):
    """Raise InvalidParameterError unless every point of the body is in the scheme's domain."""
    if body.dim != scheme.n:
        raise InvalidParameterError(f"body has dimension {body.dim}, scheme has {scheme.n}")
    if scheme.kind == schemes.GAUSSIAN:
        return
    lo, _ = body.bounding_box()
    if np.any(lo < schemes.DOMAIN_TOL):
        raise InvalidParameterError(f"body leaves the positive orthant (min coords {lo})")
    if scheme.kind == schemes.DISCRETE:
        ones = np.ones(body.dim)
        smin = ones @ linear_minimize(body, ones)
        smax = ones @ linear_minimize(body, -ones)
        if abs(smin - 1) > schemes.DOMAIN_TOL or abs(smax - 1) > schemes.DOMAIN_TOL:
            raise InvalidParameterError("Discrete body must lie in the probability simplex")


def _line_search(scheme, x, y, dx, dy, gmax, slope0):
    if scheme.kind == schemes.GAUSSIAN:
        delta, ddelta = x - y, dx - dy
        denom = float(ddelta @ ddelta)
        if denom == 0.0:
            return gmax
        return min(gmax, max(0.0, -float(delta @ ddelta) / denom))

    def slope(g):
        _, gx, gy = schemes.rate_grad(scheme, x + g * dx, y + g * dy)
        return float(gx @ dx + gy @ dy)

    if slope0 <= 0:
        return 0.0
    if slope(gmax) >= 0:
        return gmax
    return brentq(slope, 0.0, gmax, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def _afw(scheme, X, Y, tol, max_iter):
    """Away-step conditional gradient on X x Y; the active set holds vertex pairs."""
    cx, cy = X.center, Y.center
    x = linear_minimize(X, cx - cy)
    y = linear_minimize(Y, cy - cx)
    verts = {(_vkey(x), _vkey(y)): [x, y, 1.0]}
    gap = math.inf
    for it in range(1, max_iter + 1):
        _, gx, gy = schemes.rate_grad(scheme, x, y)
        sx, sy = linear_minimize(X, -gx), linear_minimize(Y, -gy)
        gap = float(gx @ (sx - x) + gy @ (sy - y))
        if gap <= tol:
            return x, y, max(gap, 0.0), it
        here = float(gx @ x + gy @ y)
        akey, (vx, vy, wa) = min(verts.items(), key=lambda kv: float(gx @ kv[1][0] + gy @ kv[1][1]))
        away_gap = here - float(gx @ vx + gy @ vy)
        if gap >= away_gap or wa >= 1.0:
            dx, dy, gmax = sx - x, sy - y, 1.0
            step = _line_search(scheme, x, y, dx, dy, gmax, gap)
            for v in verts.values():
                v[2] *= 1.0 - step
            key = (_vkey(sx), _vkey(sy))
            if step >= 1.0:
                verts = {key: [sx, sy, 1.0]}
            elif key in verts:
                verts[key][2] += step
            else:
                verts[key] = [sx, sy, step]
        else:
            dx, dy, gmax = x - vx, y - vy, wa / (1.0 - wa)
            step = _line_search(scheme, x, y, dx, dy, gmax, away_gap)
            for v in verts.values():
                v[2] *= 1.0 + step
            verts[akey][2] -= step
            if step >= gmax:
                del verts[akey]
        verts = {k: v for k, v in verts.items() if v[2] > 0}
        x = x + step * dx
        y = y + step * dy
        if it % 200 == 0:
            # resync the iterate with its vertex representation
            total = sum(v[2] for v in verts.values())
            x = sum(v[2] * v[0] for v in verts.values()) / total
            y = sum(v[2] * v[1] for v in verts.values()) / total
    raise SolverFailureError(f"conditional gradient did not converge in {max_iter} iterations", gap)


def _vkey(v):
    return np.round(v, 11).tobytes()


def solve_pairwise(scheme: SchemeKind, X: ConvexBody, Y: ConvexBody, tol: float = 1e-9,
                   max_iter: int = 100_000, method: str = "auto", check: bool = True) -> SaddlePoint:
    """Maximize ``psi(mu, nu)`` over ``mu in X, nu in Y``.

    Gaussian pairs of boxes are solved in closed form (``method="auto"``);
    everything else, or ``method="fw"``, goes through the away-step
    conditional-gradient solver, stopped once the Frank-Wolfe gap is ``<= tol``.
    The gap bounds ``max_X grad_mu @ (mu - mu*) + max_Y grad_nu @ (nu - nu*)``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if check:
        check_body(scheme, X)
        check_body(scheme, Y)
    if method == "auto" and scheme.kind == schemes.GAUSSIAN and isinstance(X, Box) and isinstance(Y, Box):
        mu, nu = _interval_gap(X.lower, X.upper, Y.lower, Y.upper)
        gap, it = 0.0, 0
    elif method in ("auto", "fw"):
        mu, nu, gap, it = _afw(scheme, X, Y, tol, max_iter)
    else:
        raise ValueError(f"unknown method {method!r}")
    val, gmu, gnu = schemes.rate_grad(scheme, mu, nu)
    return SaddlePoint(mu, nu, val, gmu, gnu, gap, it)


def psi_to_body(scheme: SchemeKind, x, body: ConvexBody, tol=1e-10) -> float:
    """``max over nu in body of psi(x, nu)``."""
    x = np.asarray(x, dtype=float)
    return solve_pairwise(scheme, Box(x, x), body, tol=tol, check=False).opt


# ---------------------------------------------------------------------------
# barrier-based cuts


@dataclass(frozen=True, eq=False)
class BarrierInfo:
    theta: float
    center: np.ndarray
    gradient: np.ndarray
    hessian: np.ndarray

    @property
    def rho(self):
        return self.theta + 2.0 * math.sqrt(self.theta)


def _log_barrier(A, b, x):
    s = b - A @ x
    if np.any(s <= 0):
        return math.inf, None, None
    inv = 1.0 / s
    return float(-np.sum(np.log(s))), A.T @ inv, (A.T * inv**2) @ A


def analytic_center(body: ConvexBody, tol=1e-12, max_iter=200):
    """Minimizer of the logarithmic barrier of a full-dimensional body (damped Newton)."""
    A, b = body.constraints()
    x = body.center.copy()
    _, g, H = _log_barrier(A, b, x)
    if g is None:
        raise ValueError("body has an empty interior")
    for _ in range(max_iter):
        step = np.linalg.solve(H, g)
        dec = math.sqrt(max(float(g @ step), 0.0))
        if dec * dec < tol:
            return x
        x = x - step / (1.0 + dec)
        _, g, H = _log_barrier(A, b, x)
    raise SolverFailureError("analytic center: Newton did not converge", dec)


def _barrier_objective(scheme, AX, bX, AY, bY, r, tau, z):
    n = AX.shape[1]
    x, nu = z[:n], z[n:]
    fx, gx, hx = _log_barrier(AX, bX, x)
    fy, gy, hy = _log_barrier(AY, bY, nu)
    if gx is None or gy is None or np.any(nu <= 0) and scheme.kind != schemes.GAUSSIAN:
        return math.inf, None, None
    if scheme.kind != schemes.GAUSSIAN and np.any(x <= 0):
        return math.inf, None, None
    val, gmu, gnu = schemes.rate_grad(scheme, x, nu)
    slack = val + r
    if slack <= 0:
        return math.inf, None, None
    gpsi = np.concatenate([gmu, gnu])
    hpsi = schemes.rate_hessian(scheme, x, nu)
    f = fx + tau * (fy - math.log(slack))
    g = np.concatenate([gx, tau * gy]) - tau * gpsi / slack
    H = np.zeros((2 * n, 2 * n))
    H[:n, :n] = hx
    H[n:, n:] = tau * hy
    H += tau * (-hpsi / slack + np.outer(gpsi, gpsi) / slack**2)
    return f, g, H


def _newton(fun, z, tol=1e-13, max_iter=500):
    f, g, H = fun(z)
    for _ in range(max_iter):
        step = np.linalg.solve(H, g)
        dec2 = float(g @ step)
        if dec2 < tol:
            return z
        t = 1.0
        while True:
            f_new, g_new, H_new = fun(z - t * step)
            if f_new <= f - 0.25 * t * dec2:
                break
            t *= 0.5
            if t < 1e-16:
                return z
        z = z - t * step
        f, g, H = f_new, g_new, H_new
    raise SolverFailureError("barrier Newton did not converge", dec2)


def _linear_min_over_region(scheme, AX, bX, AY, bY, r, c, z, t_final=1e10):
    """Lower bound on ``min c @ x`` over ``{(x, nu) in X x opponent : psi(x, nu) >= -r}``.

    Path following on ``t c @ x + F_X(x) + F_opp(nu) - ln(psi + r)``; on the central
    path the objective is within ``m / t`` of the minimum (``m`` log terms).
    """
    n = c.size
    m = AX.shape[0] + AY.shape[0] + 1

    def fun(w, t):
        f, g, H = _barrier_objective(scheme, AX, bX, AY, bY, r, 1.0, w)
        if g is None:
            return f, g, H
        g = g.copy()
        g[:n] += t * c
        return f + t * float(c @ w[:n]), g, H

    t = 1.0
    while True:
        # near-centered points: the gap bound m / t picks up a term of order sqrt(m * tol) / t
        z = _newton(lambda w: fun(w, t), z, tol=1e-9)
        if t >= t_final:
            return float(c @ z[:n]) - (m + 1.0) / t
        t = min(t * 10.0, t_final)


def _center_cut(scheme, X, AX, bX, AY, bY, r, xc, z):
    """Cut for the degenerate case ``xc in Y``: a hyperplane supporting ``Y`` along a Dikin axis.

    Tries both orientations of every principal axis of the barrier Hessian at the
    analytic center and keeps the one retaining the widest part of ``X``.
    """
    _, grad, hess = _log_barrier(AX, bX, xc)
    best = None
    for v in np.linalg.eigh(hess)[1].T:
        for c in (v, -v):
            m = _linear_min_over_region(scheme, AX, bX, AY, bY, r, c, z.copy())
            lo = float(c @ linear_minimize(X, c))
            hi = float(c @ linear_minimize(X, -c))
            width = (m - CUT_SLACK - lo) / (hi - lo)
            if best is None or width > best[0]:
                best = (width, c, m)
    width, c, m = best
    if width <= 1e-9:
        raise CutInfeasibleError("cut infeasible: the region to discard covers the whole body")
    return Cut(c, -m + CUT_SLACK), BarrierInfo(float(AX.shape[0]), xc, grad, hess)


def smart_cut(scheme: SchemeKind, X: ConvexBody, opponent: ConvexBody, r: float,
              tau_final: float = 1e-10):
    """Barrier cut discarding ``Y = {x in X : max_{nu in opponent} psi(x, nu) >= -r}``.

    With ``F`` the log-barrier of ``X`` and ``xbar`` its minimizer over ``Y``, the
    cut is ``l(x) = <grad F(xbar), x - xbar>`` (normalized), nonnegative on ``Y``;
    its retained side ``l <= 0`` therefore satisfies the rate bound ``<= -r``.
    Both bodies must be full-dimensional.

    Returns ``(cut, info)``. When ``Y`` is empty (or only touches the boundary of X)
    the cut is the separating fallback ``l == -1`` with ``info=None`` and
    ``cut.separating`` set. When ``Y`` contains the analytic center of ``X`` the
    barrier gradient vanishes there; the cut then supports ``Y`` along the longest
    axis of the Dikin ellipsoid at the center. Raises CutInfeasibleError when no
    such cut retains anything, e.g. when ``Y = X``.
    """
    if r <= 0:
        raise ValueError("r must be positive")
    n = X.dim
    saddle = solve_pairwise(scheme, X, opponent, tol=1e-12, check=False)
    if saddle.opt + r <= 1e-12:
        return Cut(np.zeros(n), -1.0, separating=True), None
    AX, bX = X.constraints()
    AY, bY = opponent.constraints()
    xc = analytic_center(X)
    yc = analytic_center(opponent)
    z = None
    for t in 0.5 ** np.arange(1, 60):
        x0 = saddle.mu_star + t * (xc - saddle.mu_star)
        y0 = saddle.nu_star + t * (yc - saddle.nu_star)
        if schemes.rate_value(scheme, x0, y0) > -r:
            z = np.concatenate([x0, y0])
            break
    if z is None:
        return Cut(np.zeros(n), -1.0, separating=True), None
    if psi_to_body(scheme, xc, opponent) >= -r:
        return _center_cut(scheme, X, AX, bX, AY, bY, r, xc, z)
    tau = 1.0
    while True:
        z = _newton(lambda w: _barrier_objective(scheme, AX, bX, AY, bY, r, tau, w), z)
        if tau <= tau_final:
            break
        tau = max(tau * 0.1, tau_final)
    xbar = z[:n]
    _, grad, hess = _log_barrier(AX, bX, xbar)
    norm = float(np.linalg.norm(grad))
    normal = grad / norm
    cut = Cut(normal, -float(normal @ xbar) + CUT_SLACK)
    return cut, BarrierInfo(float(AX.shape[0]), xbar, grad, hess)


# ---------------------------------------------------------------------------
# volumes


def _axis_aligned(cut: Cut):
    return np.count_nonzero(cut.normal) <= 1


def region_volume(body: ConvexBody, extra_cuts, rng: np.random.Generator, samples: int = 100_000,
                  batch: int = 200_000):
    """Volume of ``{x in body : l(x) >= 0 for every cut}`` (the discarded side of all cuts).

    Exact for boxes with axis-aligned cuts; otherwise hit-or-miss Monte Carlo over
    the body's bounding box. Returns ``(estimate, stderr)``.
    """
    cuts = list(extra_cuts)
    if isinstance(body, Box) and all(_axis_aligned(c) for c in cuts):
        region = body
        for c in cuts:
            region = discarded(region, c) if region is not None else None
        if region is None:
            return 0.0, 0.0
        return region.volume(), 0.0
    if samples < 1000:
        raise ValueError("samples must be >= 1000")
    lo, hi = body.bounding_box()
    box_vol = float(np.prod(hi - lo))
    A, b = body.constraints()
    hits, done = 0, 0
    while done < samples:
        m = min(batch, samples - done)
        pts = lo + (hi - lo) * rng.random((m, body.dim))
        inside = np.all(pts @ A.T <= b + 1e-12, axis=1)
        for c in cuts:
            inside &= c(pts) >= 0
        hits += int(inside.sum())
        done += m
    p = hits / samples
    return box_vol * p, box_vol * math.sqrt(p * (1 - p) / samples)


def sample_uniform(body: ConvexBody, rng: np.random.Generator, count: int) -> np.ndarray:
    """Uniform points of a (full-dimensional) body, by rejection from its bounding box."""
    lo, hi = body.bounding_box()
    if isinstance(body, Box):
        return lo + (hi - lo) * rng.random((count, body.dim))
    out = []
    got = 0
    while got < count:
        pts = lo + (hi - lo) * rng.random((max(64, 2 * (count - got)), body.dim))
        pts = pts[[body.contains(p, tol=0.0) for p in pts]]
        out.append(pts)
        got += len(pts)
    return np.vstack(out)[:count]
