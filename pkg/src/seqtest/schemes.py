"""Gaussian, Poisson and Discrete observation schemes.

Each scheme is a parametric density family ``p_mu`` on an observation space.
Parameter points are plain 1-d float arrays. Observations are

* Gaussian: real vectors of length ``n`` (unit covariance),
* Poisson: nonnegative integer vectors of length ``n``,
* Discrete: category indices in ``{1, ..., n}``.

A batch of ``k`` observations is an array with ``k`` rows (Gaussian/Poisson)
or a length-``k`` integer array (Discrete).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import InvalidParameterError

GAUSSIAN = "gaussian"
POISSON = "poisson"
DISCRETE = "discrete"
KINDS = (GAUSSIAN, POISSON, DISCRETE)

# below this the 1/sqrt(mu) terms of the rate gradient are useless
DOMAIN_TOL = 1e-12


@dataclass(frozen=True)
class SchemeKind:
    kind: str
    n: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scheme kind {self.kind!r}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.n}")

    @classmethod
    def gaussian(cls, n):
        return cls(GAUSSIAN, n)

    @classmethod
    def poisson(cls, n):
        return cls(POISSON, n)

    @classmethod
    def discrete(cls, n):
        return cls(DISCRETE, n)


@dataclass(frozen=True, eq=False)
class AffineFunctional:
    """``phi(omega) = a @ omega + b``; for Discrete, ``a`` is the value table and ``b`` an offset."""

    a: np.ndarray
    b: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if not (np.all(np.isfinite(a)) and math.isfinite(self.b)):
            raise ValueError("affine functional must have finite entries")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))


def check_point(scheme: SchemeKind, mu) -> np.ndarray:
    """Return ``mu`` as a float array, raising if it is outside the parameter domain."""
    mu = np.asarray(mu, dtype=float).reshape(-1)
    if mu.shape != (scheme.n,):
        raise InvalidParameterError(f"expected a point of length {scheme.n}, got shape {mu.shape}")
    if not np.all(np.isfinite(mu)):
        raise InvalidParameterError("parameter point has non-finite entries")
    if scheme.kind == POISSON and np.any(mu < DOMAIN_TOL):
        raise InvalidParameterError(f"Poisson intensities must be >= {DOMAIN_TOL}: {mu}")
    if scheme.kind == DISCRETE:
        if np.any(mu < DOMAIN_TOL):
            raise InvalidParameterError(f"Discrete probabilities must be >= {DOMAIN_TOL}: {mu}")
        if abs(mu.sum() - 1.0) > DOMAIN_TOL:
            raise InvalidParameterError(f"Discrete probabilities must sum to 1, got {mu.sum()!r}")
    return mu


def _as_batch(scheme, omega):
    if scheme.kind == DISCRETE:
        return np.atleast_1d(np.asarray(omega, dtype=np.int64))
    return np.atleast_2d(np.asarray(omega, dtype=float))


def log_density(scheme: SchemeKind, mu, omega):
    """ln p_mu(omega) for one observation (scalar result) or a batch (array result)."""
    mu = check_point(scheme, mu)
    single = np.ndim(omega) == (0 if scheme.kind == DISCRETE else 1)
    w = _as_batch(scheme, omega)
    if scheme.kind == GAUSSIAN:
        out = -0.5 * scheme.n * math.log(2 * math.pi) - 0.5 * np.sum((w - mu) ** 2, axis=1)
    elif scheme.kind == POISSON:
        if np.any(w < 0) or np.any(w != np.round(w)):
            raise InvalidParameterError("Poisson observations must be nonnegative integers")
        out = np.sum(w * np.log(mu) - mu - gammaln(w + 1), axis=1)
    else:
        if np.any(w < 1) or np.any(w > scheme.n):
            raise InvalidParameterError(f"Discrete observations must lie in 1..{scheme.n}")
        out = np.log(mu[w - 1])
    return float(out[0]) if single else out


def sample(scheme: SchemeKind, mu, rng: np.random.Generator, count: int):
    """Draw ``count`` iid observations from ``p_mu``."""
    mu = check_point(scheme, mu)
    if count < 1:
        raise ValueError("count must be >= 1")
    if scheme.kind == GAUSSIAN:
        return mu + rng.standard_normal((count, scheme.n))
    if scheme.kind == POISSON:
        return rng.poisson(mu, size=(count, scheme.n))
    return rng.choice(scheme.n, size=count, p=mu / mu.sum()) + 1


def statistic(scheme: SchemeKind, omega) -> np.ndarray:
    """Sufficient statistic of a batch: the sum (Gaussian/Poisson) or the category counts (Discrete)."""
    w = _as_batch(scheme, omega)
    if scheme.kind == DISCRETE:
        return np.bincount(w - 1, minlength=scheme.n).astype(float)
    return w.sum(axis=0)


def sample_statistic(scheme: SchemeKind, mu, rng: np.random.Generator, count: int) -> np.ndarray:
    """Sufficient statistic of ``count`` fresh draws, without materializing Gaussian/Discrete batches."""
    mu = np.asarray(mu, dtype=float)
    if scheme.kind == GAUSSIAN:
        return count * mu + math.sqrt(count) * rng.standard_normal(scheme.n)
    if scheme.kind == POISSON:
        return rng.poisson(count * mu).astype(float)
    return rng.multinomial(count, mu / mu.sum()).astype(float)


# ---------------------------------------------------------------------------
# rate function psi(mu, nu) = ln of the Hellinger affinity


def rate_value(scheme: SchemeKind, mu, nu) -> float:
    if scheme.kind == GAUSSIAN:
        return -0.125 * float(np.sum((mu - nu) ** 2))
    if scheme.kind == POISSON:
        return -0.5 * float(np.sum((np.sqrt(mu) - np.sqrt(nu)) ** 2))
    return math.log(float(np.sum(np.sqrt(mu * nu))))


def rate_grad(scheme: SchemeKind, mu, nu):
    """Value and partial gradients of psi, no domain checks."""
    if scheme.kind == GAUSSIAN:
        diff = mu - nu
        return -0.125 * float(diff @ diff), -0.25 * diff, 0.25 * diff
    if scheme.kind == POISSON:
        smu, snu = np.sqrt(mu), np.sqrt(nu)
        val = -0.5 * float(np.sum((smu - snu) ** 2))
        return val, -0.5 * (1.0 - snu / smu), -0.5 * (1.0 - smu / snu)
    root = np.sqrt(mu * nu)
    total = float(root.sum())
    return math.log(total), 0.5 * np.sqrt(nu / mu) / total, 0.5 * np.sqrt(mu / nu) / total


def rate_hessian(scheme: SchemeKind, mu, nu) -> np.ndarray:
    """Hessian of psi with respect to the stacked variable (mu, nu), shape (2n, 2n)."""
    n = scheme.n
    if scheme.kind == GAUSSIAN:
        eye = np.eye(n)
        return -0.25 * np.block([[eye, -eye], [-eye, eye]])
    # both remaining cases are built from the separable terms sqrt(mu_i nu_i)
    h_mm = -0.25 * np.sqrt(nu) * mu ** -1.5
    h_nn = -0.25 * np.sqrt(mu) * nu ** -1.5
    h_mn = 0.25 / np.sqrt(mu * nu)
    hess_root = np.block([[np.diag(h_mm), np.diag(h_mn)], [np.diag(h_mn), np.diag(h_nn)]])
    if scheme.kind == POISSON:
        return hess_root
    total = float(np.sum(np.sqrt(mu * nu)))
    grad_root = np.concatenate([0.5 * np.sqrt(nu / mu), 0.5 * np.sqrt(mu / nu)])
    return hess_root / total - np.outer(grad_root, grad_root) / total**2


def rate(scheme: SchemeKind, mu, nu):
    """Rate function psi(mu, nu) with its exact partial gradients.

    Returns
    -------
    value : float
        ``ln of the integral of sqrt(p_mu p_nu)``; zero iff ``mu == nu``, negative otherwise.
    grad_mu, grad_nu : ndarray
    """
    mu = check_point(scheme, mu)
    nu = check_point(scheme, nu)
    return rate_grad(scheme, mu, nu)


def log_mgf(scheme: SchemeKind, phi: AffineFunctional, mu) -> float:
    """ln E_mu[exp(phi(omega))], evaluated in closed form (Gaussian, Poisson) or as a finite sum."""
    mu = check_point(scheme, mu)
    return log_mgf_raw(scheme, phi.a, phi.b, mu)


def log_mgf_raw(scheme, a, b, mu) -> float:
    if scheme.kind == GAUSSIAN:
        return float(b + a @ mu + 0.5 * (a @ a))
    if scheme.kind == POISSON:
        return float(np.sum(np.expm1(a) * mu) + b)
    top = float(np.max(a))
    return float(b + top + math.log(float(np.sum(np.exp(a - top) * mu))))


def log_ratio_functional(scheme: SchemeKind, mu, nu, scale=0.5) -> AffineFunctional:
    """Closed form of ``scale * ln(p_mu / p_nu)`` as an affine functional (a value table for Discrete)."""
    mu = check_point(scheme, mu)
    nu = check_point(scheme, nu)
    if scheme.kind == GAUSSIAN:
        return AffineFunctional(scale * (mu - nu), 0.5 * scale * float(nu @ nu - mu @ mu))
    if scheme.kind == POISSON:
        return AffineFunctional(scale * np.log(mu / nu), -scale * float(np.sum(mu - nu)))
    return AffineFunctional(scale * np.log(mu / nu), 0.0)


def eval_affine(scheme: SchemeKind, phi: AffineFunctional, omega):
    """phi at one observation (float) or at every row of a batch (array)."""
    single = np.ndim(omega) == (0 if scheme.kind == DISCRETE else 1)
    w = _as_batch(scheme, omega)
    if scheme.kind == DISCRETE:
        out = phi.a[w - 1] + phi.b
    else:
        out = w @ phi.a + phi.b
    return float(out[0]) if single else out
