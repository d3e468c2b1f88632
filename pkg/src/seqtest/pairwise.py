"""Detectors built from saddle points, exact risk verification, repeated observations."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import schemes
from .convexgeom import ConvexBody, SaddlePoint, linear_minimize
from .errors import InputError
from .schemes import AffineFunctional, SchemeKind


@dataclass(frozen=True, eq=False)
class Detector:
    """``phi(omega) = 1/2 ln(p_mu*(omega) / p_nu*(omega)) - shift``, summed over ``K`` observations.

    The log-ratio is kept in its affine (Gaussian/Poisson) or tabular (Discrete)
    closed form, so evaluation never touches the densities.
    """

    scheme: SchemeKind
    mu_star: np.ndarray
    nu_star: np.ndarray
    risk_log: float
    as_affine: AffineFunctional
    shift: float = 0.0
    K: int = 1

    @property
    def risk(self):
        return math.exp(self.risk_log)

    def __call__(self, sample):
        """Value on a ``K``-sample (one observation when ``K == 1``)."""
        if self.K == 1:
            return schemes.eval_affine(self.scheme, self.as_affine, sample) - self.shift
        batch = np.asarray(sample)
        if len(batch) != self.K:
            raise InputError(f"detector expects {self.K} observations, got {len(batch)}")
        return float(np.sum(schemes.eval_affine(self.scheme, self.as_affine, batch))) - self.shift

    def on_statistic(self, stat, k=None):
        """Value on ``k`` observations summarized by their sufficient statistic."""
        k = self.K if k is None else k
        return float(self.as_affine.a @ stat + k * self.as_affine.b) - self.shift

    def with_shift(self, shift):
        return replace(self, shift=float(shift))

    def negated(self):
        phi = AffineFunctional(-self.as_affine.a, -self.as_affine.b)
        return replace(self, mu_star=self.nu_star, nu_star=self.mu_star, as_affine=phi,
                       shift=-self.shift)


def build_detector(saddle: SaddlePoint, scheme: SchemeKind) -> Detector:
    phi = schemes.log_ratio_functional(scheme, saddle.mu_star, saddle.nu_star)
    return Detector(scheme, saddle.mu_star, saddle.nu_star, float(saddle.opt), phi)


def _sup_log_mgf(scheme, a, b, body):
    # every scheme's log-mgf is a nondecreasing function of the linear form mu -> c @ mu
    c = a if scheme.kind == schemes.GAUSSIAN else np.expm1(a) if scheme.kind == schemes.POISSON else np.exp(a)
    mu = linear_minimize(body, -c)
    return schemes.log_mgf_raw(scheme, a, b, mu), mu


def verify_detector_risk(detector: Detector, X1: ConvexBody, X2: ConvexBody):
    """Exact suprema of ``E exp(-phi)`` over ``X1`` and ``E exp(+phi)`` over ``X2``.

    Both exponents are monotone in a linear function of the parameter, so a
    single linear-oracle call per side returns the exact maximizer.
    Returns ``(side1, side2)``; both are ``<= exp(risk_log)`` for a detector
    from :func:`build_detector`. Shift and repetition count are included.
    """
    scheme, phi, K = detector.scheme, detector.as_affine, detector.K
    lhs1, _ = _sup_log_mgf(scheme, -phi.a, -phi.b, X1)
    lhs2, _ = _sup_log_mgf(scheme, phi.a, phi.b, X2)
    return math.exp(K * lhs1 + detector.shift), math.exp(K * lhs2 - detector.shift)


def repeated_detector(detector: Detector, K: int) -> Detector:
    """Detector on ``K`` iid observations: summed evaluations, risk raised to the power ``K``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    return replace(detector, K=detector.K * K, risk_log=detector.risk_log * K)


def sample_size_for_risk(eps_star: float, eps_target: float) -> int:
    """Smallest ``K`` with ``eps_star ** K <= eps_target``."""
    if not 0 < eps_target < 1:
        raise ValueError("eps_target must lie in (0, 1)")
    if not 0 < eps_star < 1:
        raise ValueError(f"detector risk {eps_star} gives no decay: eps_star must lie in (0, 1)")
    k = max(1, math.ceil(math.log(eps_target) / math.log(eps_star)))
    # guard the ceiling against rounding in the log ratio
    while k > 1 and eps_star ** (k - 1) <= eps_target:
        k -= 1
    while eps_star**k > eps_target:
        k += 1
    return k


def near_optimality_factor(eps: float, K_bar: int) -> int:
    """Sample size that lets the saddle detector match any test working with ``K_bar`` observations."""
    if not 0 < eps < 0.25:
        raise ValueError("eps must lie in (0, 1/4)")
    return math.ceil(2 * K_bar / (1 - 2 * math.log(2) / math.log(1 / eps)))


@dataclass(frozen=True)
class TestDetector:
    """Detector ``1/2 ln((1 - eps_bar)/eps_bar) * T(omega)`` induced by a +/-1 test."""

    test_sign: object
    eps_bar: float

    def __post_init__(self):
        if not 0 < self.eps_bar < 0.5:
            raise ValueError("eps_bar must lie in (0, 1/2)")

    @property
    def magnitude(self):
        return 0.5 * math.log((1 - self.eps_bar) / self.eps_bar)

    @property
    def risk(self):
        return 2 * math.sqrt(self.eps_bar * (1 - self.eps_bar))

    def __call__(self, omega):
        return self.magnitude * self.test_sign(omega)


def detector_from_test(test_sign, eps_bar: float) -> TestDetector:
    return TestDetector(test_sign, eps_bar)
