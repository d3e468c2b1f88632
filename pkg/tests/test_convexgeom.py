import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from seqtest import schemes
from seqtest.convexgeom import (Box, Cut, Polytope, analytic_center, discarded, intersect_halfspace,
                                linear_minimize, psi_to_body, region_volume, retained, sample_uniform,
                                smart_cut, solve_pairwise)
from seqtest.errors import CutInfeasibleError, InvalidParameterError, SolverFailureError
from seqtest.schemes import SchemeKind

G2 = SchemeKind.gaussian(2)


def interval_dist(l1, u1, l2, u2):
    return np.maximum(0, np.maximum(l2 - u1, l1 - u2))


def random_boxes(rng, n):
    a = np.sort(rng.uniform(-2, 2, (2, n)), axis=0)
    b = np.sort(rng.uniform(-2, 2, (2, n)), axis=0)
    b[:, 0] += 4.1  # keep them apart
    return Box(a[0], a[1]), Box(b[0], b[1])


def regular_polygon(m=12, radius=1.0, center=(0.0, 0.0)):
    ang = np.linspace(0, 2 * np.pi, m + 1)[:-1]
    A = np.c_[np.cos(ang), np.sin(ang)]
    return Polytope(A, radius + A @ np.asarray(center))


# --- linear oracle -------------------------------------------------------------

def test_linear_minimize_box():
    assert np.array_equal(linear_minimize(Box([0, 0], [1, 1]), [1, -1]), [0, 1])
    x = linear_minimize(Box([-1, -1], [0, 0]), [0, 0])
    assert Box([-1, -1], [0, 0]).contains(x)


def test_linear_minimize_polytope_vs_samples(rng):
    P = regular_polygon(7, 1.3, (0.2, -0.4))
    pts = sample_uniform(P, rng, 1000)
    for _ in range(20):
        c = rng.normal(size=2)
        x = linear_minimize(P, c)
        assert P.contains(x)
        assert np.all(c @ x <= pts @ c + 1e-9)


def test_polytope_validation():
    with pytest.raises(ValueError):
        Polytope([[1.0, 0.0]], [1.0])  # unbounded
    with pytest.raises(ValueError):
        Polytope([[1.0], [-1.0]], [0.0, -1.0])  # empty
    simplex = Polytope(np.zeros((1, 3)), [0.0], simplex_restricted=True)
    lo, hi = simplex.bounding_box()
    np.testing.assert_allclose(lo, 1e-9, atol=1e-12)
    np.testing.assert_allclose(hi, 1 - 2e-9, atol=1e-12)


# --- intersections and cuts ------------------------------------------------------

def test_intersect_halfspace_cases():
    B = Box([0, 0], [1, 1])
    assert intersect_halfspace(B, [1, 0], 2.0) is B
    assert intersect_halfspace(B, [1, 0], -0.5) is None
    half = intersect_halfspace(B, [1, 0], 0.682)
    assert isinstance(half, Box) and half.volume() == pytest.approx(0.682)
    face = intersect_halfspace(B, [1, 0], 0.0)
    assert isinstance(face, Box) and face.upper[0] == 0.0
    tri = intersect_halfspace(B, [1, 1], 1.0)
    assert isinstance(tri, Polytope) and tri.contains([0.5, 0.5]) and not tri.contains([0.6, 0.6])


def test_cut_sides_partition_box():
    B = Box([0, 0], [1, 1])
    cut = Cut([-1.0, 0.0], 0.3)  # l = 0.3 - x1, retained side x1 >= 0.3
    keep, drop = retained(B, cut), discarded(B, cut)
    assert keep.lower[0] == pytest.approx(0.3) and drop.upper[0] == pytest.approx(0.3)
    with pytest.raises(ValueError):
        Cut([0.0, 0.0], 0.0)


# --- pairwise saddle problem ---------------------------------------------------------

def test_two_box_saddle():
    sp = solve_pairwise(G2, Box([0.1, 0], [1.1, 1]), Box([-1, -1], [0, 0]))
    assert sp.opt == pytest.approx(-0.00125, rel=1e-12)
    np.testing.assert_allclose(sp.mu_star, [0.1, 0.0])
    np.testing.assert_allclose(sp.nu_star, [0.0, 0.0])
    fw = solve_pairwise(G2, Box([0.1, 0], [1.1, 1]), Box([-1, -1], [0, 0]), method="fw")
    assert fw.opt == pytest.approx(-0.00125, abs=1e-9)


@pytest.mark.parametrize("scheme,mu", [(SchemeKind.gaussian(2), [0.3, 0.4]), (SchemeKind.poisson(2), [0.3, 2.0]),
                                       (SchemeKind.discrete(2), [0.3, 0.7])], ids=lambda v: str(v))
def test_singleton_pair(scheme, mu):
    box = Box(mu, mu) if scheme.kind != "discrete" else Polytope(
        [[1.0, 0.0], [-1.0, 0.0]], [mu[0], -mu[0]], simplex_restricted=True, margin=1e-12)
    assert solve_pairwise(scheme, box, box).opt == pytest.approx(0.0, abs=1e-12)


def test_discrete_singletons():
    D = SchemeKind.discrete(2)
    X = Polytope([[1.0, 0], [-1.0, 0]], [0.5, -0.5], simplex_restricted=True, margin=1e-12)
    Y = Polytope([[1.0, 0], [-1.0, 0]], [0.9, -0.9], simplex_restricted=True, margin=1e-12)
    assert solve_pairwise(D, X, Y).opt == pytest.approx(math.log(math.sqrt(0.45) + math.sqrt(0.05)), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_gaussian_boxes_closed_form(n, seed):
    rng = np.random.default_rng(seed)
    X, Y = random_boxes(rng, n)
    oracle = -0.125 * float(np.sum(interval_dist(X.lower, X.upper, Y.lower, Y.upper) ** 2))
    assert solve_pairwise(SchemeKind.gaussian(n), X, Y).opt == pytest.approx(oracle, abs=1e-12)
    assert solve_pairwise(SchemeKind.gaussian(n), X, Y, method="fw").opt == pytest.approx(oracle, abs=1e-9)


def test_poisson_boxes_sqrt_oracle():
    # psi is separable in sqrt coordinates: -1/2 sum dist([sqrt l, sqrt u], [sqrt l', sqrt u'])^2
    rng = np.random.default_rng(4)
    P = SchemeKind.poisson(3)
    for _ in range(20):
        a = np.sort(rng.uniform(0.1, 5, (2, 3)), axis=0)
        b = np.sort(rng.uniform(0.1, 5, (2, 3)), axis=0)
        b[:, 0] += 5.5
        X, Y = Box(a[0], a[1]), Box(b[0], b[1])
        dist = interval_dist(*(np.sqrt(v) for v in (X.lower, X.upper, Y.lower, Y.upper)))
        assert solve_pairwise(P, X, Y).opt == pytest.approx(-0.5 * float(dist @ dist), abs=1e-9)


def _slsqp_oracle(scheme, X, Y):
    n = scheme.n
    AX, bX = X.constraints()
    AY, bY = Y.constraints()
    cons = [{"type": "ineq", "fun": lambda z: bX - AX @ z[:n]}, {"type": "ineq", "fun": lambda z: bY - AY @ z[n:]}]
    best = math.inf
    for x0 in (X.center, linear_minimize(X, np.ones(n))):
        z0 = np.concatenate([x0, Y.center])
        res = minimize(lambda z: -schemes.rate_value(scheme, np.maximum(z[:n], 1e-12), np.maximum(z[n:], 1e-12)),
                       z0, constraints=cons, method="SLSQP", options={"ftol": 1e-14, "maxiter": 1000})
        best = min(best, res.fun)
    return -best


def test_discrete_polytopes_vs_slsqp():
    D = SchemeKind.discrete(3)
    X = Polytope([[-1.0, 0, 0], [0, 1.0, 0]], [-0.5, 0.3], simplex_restricted=True)
    Y = Polytope([[1.0, 0, 0], [0, -1.0, 0]], [0.3, -0.4], simplex_restricted=True)
    sp = solve_pairwise(D, X, Y)
    assert sp.opt == pytest.approx(_slsqp_oracle(D, X, Y), abs=1e-7)
    assert X.contains(sp.mu_star) and Y.contains(sp.nu_star)


def test_gaussian_polytopes_vs_slsqp():
    X = regular_polygon(8, 1.0, (0, 0))
    Y = regular_polygon(5, 0.7, (2.5, 1.0))
    assert solve_pairwise(G2, X, Y).opt == pytest.approx(_slsqp_oracle(G2, X, Y), abs=1e-8)


def test_saddle_certificate_symmetry_monotonicity():
    P = SchemeKind.poisson(2)
    X = regular_polygon(6, 0.8, (2.0, 2.0))
    Y = Box([4.0, 0.5], [5.0, 3.0])
    tol = 1e-9
    sp = solve_pairwise(P, X, Y, tol=tol)
    assert sp.certified_gap <= tol
    assert sp.grad_mu @ (linear_minimize(X, -sp.grad_mu) - sp.mu_star) <= tol
    assert sp.grad_nu @ (linear_minimize(Y, -sp.grad_nu) - sp.nu_star) <= tol
    assert solve_pairwise(P, Y, X, tol=tol).opt == pytest.approx(sp.opt, abs=2 * tol)
    sub = Box([4.5, 1.0], [5.0, 2.0])
    assert solve_pairwise(P, X, sub, tol=tol).opt <= sp.opt + 2 * tol


def test_solver_errors():
    D = SchemeKind.discrete(3)
    X = Polytope([[-1.0, 0, 0], [0, 1.0, 0]], [-0.5, 0.3], simplex_restricted=True)
    Y = Polytope([[1.0, 0, 0], [0, -1.0, 0]], [0.3, -0.4], simplex_restricted=True)
    with pytest.raises(SolverFailureError) as info:
        solve_pairwise(D, X, Y, max_iter=1)
    assert info.value.gap > 0
    with pytest.raises(InvalidParameterError):
        solve_pairwise(SchemeKind.poisson(2), Box([-1, 1], [1, 2]), Box([3, 3], [4, 4]))
    with pytest.raises(InvalidParameterError):
        solve_pairwise(SchemeKind.gaussian(3), Box([0, 0], [1, 1]), Box([3, 3], [4, 4]))


# --- barrier and smart cuts ----------------------------------------------------------

def two_box(n=2, delta=0.1):
    lo, hi = np.zeros(n), np.ones(n)
    lo[0], hi[0] = delta, 1 + delta
    return Box(lo, hi), Box(-np.ones(n), np.zeros(n))


def test_analytic_center():
    np.testing.assert_allclose(analytic_center(Box([0, 1], [2, 5])), [1, 3], atol=1e-8)
    np.testing.assert_allclose(analytic_center(regular_polygon(10, 1.0, (0.3, -0.2))), [0.3, -0.2], atol=1e-8)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_smart_cut_validity(n):
    X, Y = two_box(n)
    r = 0.0092
    cut, info = smart_cut(SchemeKind.gaussian(n), X, Y, r)
    rng = np.random.default_rng(n)
    pts = sample_uniform(X, rng, 20000)
    keep = pts[cut(pts) <= 0][:1000]
    assert len(keep) == 1000
    worst = max(psi_to_body(SchemeKind.gaussian(n), p, Y) for p in keep)
    assert worst <= -r + 1e-8


def test_smart_cut_dikin_containment():
    X, Y = two_box(3)
    _, info = smart_cut(SchemeKind.gaussian(3), X, Y, 0.0092)
    assert info.rho == pytest.approx(6 + 2 * math.sqrt(6))
    assert np.all(np.linalg.eigvalsh(info.hessian) > 0)
    rng = np.random.default_rng(0)
    L = np.linalg.cholesky(np.linalg.inv(info.hessian))
    u = rng.normal(size=(1000, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    pts = info.center + u @ L.T  # boundary of {h : h^T H h <= 1}
    A, b = X.constraints()
    assert np.all(pts @ A.T <= b + 1e-9)


def test_smart_cut_smaller_than_default():
    X, Y = two_box(2)
    cut, _ = smart_cut(G2, X, Y, 0.0092)
    vol, err = region_volume(X, [cut], np.random.default_rng(1), samples=200_000)
    assert vol + 4 * err < 0.318


def test_smart_cut_poisson_validity():
    P = SchemeKind.poisson(2)
    X, Y = Box([1.0, 1.0], [3.0, 3.0]), Box([4.0, 1.0], [6.0, 3.0])
    d = -solve_pairwise(P, X, Y).opt
    r = 2 * d
    cut, info = smart_cut(P, X, Y, r)
    pts = sample_uniform(X, np.random.default_rng(2), 4000)
    keep = pts[cut(pts) <= 0][:500]
    assert len(keep) > 0
    assert max(psi_to_body(P, p, Y) for p in keep) <= -r + 1e-8


def test_smart_cut_center_case():
    X = regular_polygon(12)
    tiny = Box([-0.01, -0.01], [0.01, 0.01])
    cut, info = smart_cut(G2, X, tiny, 0.001)
    # psi >= -0.001 reaches sqrt(0.008) beyond the tiny box: the cut supports that disc
    assert abs(cut.offset) == pytest.approx(0.01 + math.sqrt(0.008), abs=1e-6)
    full, _ = region_volume(X, [], np.random.default_rng(3), samples=400_000)
    bad, err = region_volume(X, [cut], np.random.default_rng(3), samples=400_000)
    # half the polygon plus a strip of width 0.0994 whose chord is at most 2 / cos(15 deg)
    strip = 0.0994 * 2 / math.cos(math.pi / 12) / (12 * math.tan(math.pi / 12))
    assert 0.5 < bad / full < 0.5 + strip + 4 * err
    with pytest.raises(CutInfeasibleError):
        smart_cut(G2, X, X, 0.001)


def test_smart_cut_separating_fallback():
    X, Y = two_box(2)
    cut, info = smart_cut(G2, X, Y, 0.001)  # r below d: nothing to discard
    assert cut.separating and info is None
    assert cut(np.array([0.1, 0.0])) == -1.0


# --- volumes ------------------------------------------------------------------------

def test_region_volume_closed_forms():
    B = Box([0, 0], [1, 1])
    assert region_volume(B, [], np.random.default_rng(0)) == (1.0, 0.0)
    vol, err = region_volume(B, [Cut([-1.0, 0.0], 0.682)], np.random.default_rng(0))  # x1 <= 0.682
    assert (vol, err) == (pytest.approx(0.682), 0.0)


def test_region_volume_triangle_mc():
    t = 0.6
    B = Box([0, 0], [1, 1])
    vol, err = region_volume(B, [Cut([-1.0, -1.0], t)], np.random.default_rng(5), samples=100_000)
    assert abs(vol - t * t / 2) <= 3 * err
    with pytest.raises(ValueError):
        region_volume(B, [Cut([-1.0, -1.0], t)], np.random.default_rng(5), samples=10)
