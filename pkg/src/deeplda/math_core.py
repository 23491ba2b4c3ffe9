"""Dense linear algebra and Gaussian primitives.

Every quadratic form goes through a triangular solve against a Cholesky
factor; nothing here forms an explicit inverse. Functions that take points
accept either a single vector of shape ``(d,)`` or a stack ``(..., d)``.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, NonPositiveDiagonal, NotPositiveDefinite

LOG_2PI = float(np.log(2.0 * np.pi))

_SYMMETRY_RTOL = 1e-10


def cholesky(a) -> np.ndarray:
    """Lower Cholesky factor ``L`` with ``L @ L.T == a``.

    Raises NotPositiveDefinite for asymmetric or non-PD input.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"cholesky needs a square matrix, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    scale = max(np.abs(a).max(), np.finfo(float).tiny)
    if np.abs(a - a.T).max() > _SYMMETRY_RTOL * scale:
        raise NotPositiveDefinite("matrix is not symmetric")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None


def log_det_from_cholesky(l) -> float:
    """``log det(L L^T) = 2 * sum(log diag(L))``."""
    diag = np.diagonal(np.asarray(l, dtype=np.float64))
    if np.any(diag <= 0) or not np.all(np.isfinite(diag)):
        raise NonPositiveDiagonal("Cholesky factor needs a strictly positive diagonal")
    return float(2.0 * np.sum(np.log(diag)))


def _factor(cov) -> np.ndarray:
    # CovarianceParam exposes its factor directly; plain arrays are treated as Sigma.
    if hasattr(cov, "cholesky_factor"):
        return cov.cholesky_factor()
    return cholesky(cov)


def whiten(x, mu, chol) -> np.ndarray:
    """Solve ``L u = x - mu`` for u, broadcasting over leading axes of x."""
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    d = chol.shape[0]
    if x.shape[-1] != d or mu.shape[-1] != d:
        raise DimensionMismatch(
            f"point dim {x.shape[-1]} / mean dim {mu.shape[-1]} vs covariance dim {d}"
        )
    r = x - mu
    flat = r.reshape(-1, d)
    u = solve_triangular(chol, flat.T, lower=True, check_finite=False).T
    return u.reshape(r.shape)


def mahalanobis_sq(x, mu, cov):
    """Squared Mahalanobis distance ``(x-mu)^T Sigma^{-1} (x-mu)``.

    ``cov`` is a CovarianceParam or an SPD matrix.
    """
    u = whiten(x, mu, _factor(cov))
    out = np.sum(u * u, axis=-1)
    return float(out) if out.ndim == 0 else out


def log_softmax(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    shifted = v - np.max(v, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax(v, axis: int = -1) -> np.ndarray:
    return np.exp(log_softmax(v, axis=axis))


def logsumexp(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    m = np.max(v, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def gaussian_log_pdf(x, mu, cov):
    """Log density of N(mu, Sigma) at x."""
    chol = _factor(cov)
    d = chol.shape[0]
    u = whiten(x, mu, chol)
    out = -0.5 * d * LOG_2PI - 0.5 * log_det_from_cholesky(chol) - 0.5 * np.sum(u * u, axis=-1)
    return float(out) if out.ndim == 0 else out
