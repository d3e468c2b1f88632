"""Aggregating pairwise detectors into a test of N hypotheses.

Risks ``eps`` and closeness ``c`` are N x N arrays. The masked risk matrix
``D = eps**k * c`` is symmetric and entrywise nonnegative; its spectral norm
is the best achievable row-max of shifted risk sums, and the shifts attaining
it come from its Perron eigenvector.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InputError


def masked_risks(eps, c, k):
    eps = np.asarray(eps, dtype=float)
    c = np.asarray(c)
    return np.where(c == 1, eps ** k, 0.0)


def perron(D, rtol=1e-13, max_iter=1_000_000, rng=None):
    """Dominant eigenpair ``(lam, g)`` of a symmetric nonnegative matrix by power iteration.

    Iterates with ``D + sigma I`` (``sigma`` = half the max row sum) so that the
    ``-lam`` eigenvalue of bipartite patterns cannot stall the iteration. Starts
    from the all-ones vector; restarts once from a random positive vector if the
    iterate collapses to zero. Stops on the residual ``||D g - lam g|| <= rtol lam``
    rather than on the Rayleigh quotient, which settles long before the vector does.
    """
    D = np.asarray(D, dtype=float)
    n = D.shape[0]
    sigma = 0.5 * float(np.max(D.sum(axis=1))) if n else 0.0
    if sigma == 0.0:
        return 0.0, np.full(n, 1 / math.sqrt(n)) if n else np.zeros(0)
    rng = np.random.default_rng(0) if rng is None else rng
    starts = [np.ones(n), rng.random(n) + 0.5]
    for x in starts:
        x = x / np.linalg.norm(x)
        for _ in range(max_iter):
            y = D @ x
            lam = float(x @ y)
            if np.linalg.norm(y - lam * x) <= rtol * abs(lam):
                return lam, x
            z = y + sigma * x
            nz = np.linalg.norm(z)
            if nz == 0 or not math.isfinite(nz):
                break
            x = z / nz
        else:
            return lam, x
    return lam, x


def risk_matrix_norm(eps, c, k: int) -> float:
    """Spectral norm of ``[eps_ij**k * c_ij]``."""
    D = masked_risks(eps, c, k)
    if not np.any(D):
        return 0.0
    lam, _ = perron(D)
    return lam


def shifts_from_vector(g) -> np.ndarray:
    """``alpha_ij = ln g_j - ln g_i`` for a positive vector ``g``.

    ``g`` is rescaled to unit maximum first, so ``t * g`` gives the same shifts.
    """
    g = np.asarray(g, dtype=float)
    logs = np.log(g / np.max(g))
    return logs[None, :] - logs[:, None]


def shift_risk(eps, c, k: int, alpha) -> float:
    """``max_i sum_{j : c_ij = 1} eps_ij**k exp(alpha_ij)``."""
    D = masked_risks(eps, c, k)
    alpha = np.asarray(alpha, dtype=float)
    if D.size == 0:
        return 0.0
    return float(np.max(np.sum(D * np.exp(np.where(D > 0, alpha, 0.0)), axis=1)))


def optimal_shifts(eps, c, k: int, eta: float | None = None):
    """Shifts from the Perron vector of ``D`` with its zero off-diagonal entries raised to ``eta``.

    ``eta`` defaults to ``1e-9 * max(D)``, i.e. at most ``1e-9`` since risks are ``<= 1``.

    Returns ``(alpha, achieved)`` where ``achieved = shift_risk(eps, c, k, alpha)``
    is at most ``||D|| + N * eta``.
    """
    D = masked_risks(eps, c, k)
    n = D.shape[0]
    if eta is None:
        top = float(D.max(initial=0.0))
        eta = 1e-9 * (top if top > 0 else 1.0)
    if eta <= 0:
        raise ValueError("eta must be positive")
    off = ~np.eye(n, dtype=bool)
    Dp = D + eta * (off & (D == 0))
    _, g = perron(Dp)
    alpha = shifts_from_vector(np.abs(g))
    return alpha, shift_risk(eps, c, k, alpha)


def accept_from_values(values, c) -> list[int]:
    """Indices ``i`` with ``values[i, j] > 0`` for every ``j`` such that ``c[i, j] == 1``."""
    values = np.asarray(values, dtype=float)
    c = np.asarray(c)
    if values.shape != c.shape:
        raise InputError(f"detector matrix {values.shape} does not match closeness {c.shape}")
    ok = np.all((values > 0) | (c != 1), axis=1)
    return [int(i) for i in np.flatnonzero(ok)]


def aggregate_accept(detectors, c, sample, alpha=None) -> list[int]:
    """Hypotheses accepted on ``sample``: every detector against a non-close rival is positive.

    The result may be empty or hold several indices. Strict positivity is required.
    """
    n = len(detectors)
    alpha = np.zeros((n, n)) if alpha is None else alpha
    return accept_from_values(detector_values(detectors, alpha, sample), c)


def detector_values(detectors, alpha, sample):
    """Evaluate the shifted sums ``phi_ij^K(sample) - alpha_ij`` for a matrix of detectors.

    ``detectors[i][j]`` is a :class:`~seqtest.pairwise.Detector` (or None where
    the pair is never compared); every detector must accept ``len(sample)``
    observations.
    """
    n = len(detectors)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            det = detectors[i][j]
            if det is not None:
                if det.K != len(sample):
                    raise InputError(f"sample has {len(sample)} observations, detectors expect {det.K}")
                out[i, j] = det(sample) - alpha[i, j]
    return out
