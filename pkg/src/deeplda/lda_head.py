"""Generative LDA head: shared-covariance Gaussian class conditionals.

Parameters are stored unconstrained: class priors as logits, and the
covariance through a Cholesky factor whose diagonal is log-parameterized.
Class labels are 0-based throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import DimensionMismatch
from .math_core import LOG_2PI, cholesky, log_softmax, logsumexp, whiten

COV_KINDS = ("spherical", "diagonal", "full")


@dataclass
class CovarianceParam:
    """Shared covariance in one of three parameterizations.

    ``values`` holds the unconstrained parameters:

    * spherical: scalar ``log sigma`` (array of shape ``()``)
    * diagonal: ``log sigma_k`` for each axis, shape ``(d,)``
    * full: lower-triangular ``(d, d)`` matrix whose diagonal stores
      ``log L_kk`` and whose strict lower part stores ``L_ij`` as is.
      Entries above the diagonal are ignored.
    """

    kind: str
    values: np.ndarray
    dim: int

    def __post_init__(self):
        if self.kind not in COV_KINDS:
            raise ValueError(f"unknown covariance kind {self.kind!r}")
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = {"spherical": (), "diagonal": (self.dim,), "full": (self.dim, self.dim)}[self.kind]
        if self.values.shape != expected:
            raise DimensionMismatch(
                f"{self.kind} covariance of dim {self.dim} needs values of shape {expected}, "
                f"got {self.values.shape}"
            )

    @classmethod
    def identity(cls, kind: str, dim: int) -> "CovarianceParam":
        shape = {"spherical": (), "diagonal": (dim,), "full": (dim, dim)}[kind]
        return cls(kind, np.zeros(shape), dim)

    @classmethod
    def spherical(cls, sigma: float, dim: int) -> "CovarianceParam":
        return cls("spherical", np.array(np.log(sigma)), dim)

    @classmethod
    def diagonal(cls, sigmas) -> "CovarianceParam":
        sigmas = np.asarray(sigmas, dtype=np.float64)
        return cls("diagonal", np.log(sigmas), sigmas.shape[0])

    @classmethod
    def from_matrix(cls, sigma) -> "CovarianceParam":
        """Full parameterization of an SPD matrix."""
        l = cholesky(sigma)
        raw = np.tril(l, -1) + np.diag(np.log(np.diag(l)))
        return cls("full", raw, l.shape[0])

    def cholesky_factor(self) -> np.ndarray:
        v = self.values
        if self.kind == "spherical":
            return np.exp(v) * np.eye(self.dim)
        if self.kind == "diagonal":
            return np.diag(np.exp(v))
        return np.tril(v, -1) + np.diag(np.exp(np.diag(v)))

    def matrix(self) -> np.ndarray:
        l = self.cholesky_factor()
        return l @ l.T

    def log_det(self) -> float:
        if self.kind == "spherical":
            return float(2.0 * self.dim * self.values)
        if self.kind == "diagonal":
            return float(2.0 * np.sum(self.values))
        return float(2.0 * np.sum(np.diag(self.values)))

    def det(self) -> float:
        return float(np.exp(self.log_det()))

    def sigma(self) -> float:
        """Geometric-mean standard deviation ``det(Sigma)^(1/2d)``.

        Equals sigma exactly for the spherical head.
        """
        return float(np.exp(self.log_det() / (2.0 * self.dim)))

    def copy(self) -> "CovarianceParam":
        return CovarianceParam(self.kind, self.values.copy(), self.dim)


@dataclass
class LdaParams:
    prior_logits: np.ndarray
    means: np.ndarray
    cov: CovarianceParam

    def __post_init__(self):
        self.prior_logits = np.asarray(self.prior_logits, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        c, d = self.means.shape
        if self.prior_logits.shape != (c,):
            raise DimensionMismatch(f"{c} means but prior logits of shape {self.prior_logits.shape}")
        if self.cov.dim != d:
            raise DimensionMismatch(f"means live in R^{d} but covariance has dim {self.cov.dim}")

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.means.shape[1]

    def log_priors(self) -> np.ndarray:
        return log_softmax(self.prior_logits)

    def priors(self) -> np.ndarray:
        return np.exp(self.log_priors())

    def copy(self) -> "LdaParams":
        return LdaParams(self.prior_logits.copy(), self.means.copy(), self.cov.copy())

    def to_dict(self) -> dict:
        return {
            "prior_logits": self.prior_logits.tolist(),
            "means": self.means.tolist(),
            "cov": {"variant": self.cov.kind, "values": self.cov.values.tolist()},
            "dims": {"num_classes": self.num_classes, "latent_dim": self.latent_dim},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LdaParams":
        d = int(doc["dims"]["latent_dim"])
        cov = CovarianceParam(doc["cov"]["variant"], np.array(doc["cov"]["values"], dtype=float), d)
        means = np.array(doc["means"], dtype=float).reshape(int(doc["dims"]["num_classes"]), d)
        return cls(np.array(doc["prior_logits"], dtype=float), means, cov)

    def to_json(self) -> str:
        # json writes floats with repr(), which round-trips exactly
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "LdaParams":
        return cls.from_dict(json.loads(text))


def make_params(priors, means, sigma, kind: str = "full") -> LdaParams:
    """Build LdaParams from natural parameters (probabilities and an SPD matrix)."""
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    d = means.shape[1]
    sigma = np.asarray(sigma, dtype=np.float64)
    if kind == "full":
        cov = CovarianceParam.from_matrix(sigma)
    elif kind == "diagonal":
        cov = CovarianceParam.diagonal(np.sqrt(np.diag(sigma)))
    else:
        cov = CovarianceParam.spherical(float(np.sqrt(sigma if sigma.ndim == 0 else sigma[0, 0])), d)
    return LdaParams(np.log(np.asarray(priors, dtype=np.float64)), means, cov)


def _check_dim(params: LdaParams, z: np.ndarray):
    if z.shape[-1] != params.latent_dim:
        raise DimensionMismatch(f"embedding dim {z.shape[-1]} vs head dim {params.latent_dim}")


def discriminants(params: LdaParams, z) -> np.ndarray:
    """``delta_c(z) = log pi_c - 1/2 log det Sigma - 1/2 ||z - mu_c||^2_{Sigma^-1}``.

    The log-determinant term is kept for every covariance kind, so
    ``exp(delta_c(z)) = pi_c * N(z; mu_c, Sigma) * (2 pi)^(d/2)``.
    Returns shape ``(C,)`` for one point or ``(n, C)`` for a stack.
    """
    z = np.asarray(z, dtype=np.float64)
    _check_dim(params, z)
    u = whiten(z[..., None, :], params.means, params.cov.cholesky_factor())
    return params.log_priors() - 0.5 * params.cov.log_det() - 0.5 * np.sum(u * u, axis=-1)


def posterior(params: LdaParams, z) -> np.ndarray:
    return np.exp(log_softmax(discriminants(params, z)))


def predict(params: LdaParams, z):
    """Argmax of the discriminants; ``np.argmax`` resolves ties to the lowest index."""
    out = np.argmax(discriminants(params, z), axis=-1)
    return int(out) if out.ndim == 0 else out


def log_mixture_density(params: LdaParams, z):
    """``log sum_c pi_c N(z; mu_c, Sigma)``."""
    out = logsumexp(discriminants(params, z), axis=-1) - 0.5 * params.latent_dim * LOG_2PI
    return float(out) if np.ndim(out) == 0 else out


def mixture_density(params: LdaParams, z):
    return np.exp(log_mixture_density(params, z))


def sample(params: LdaParams, n: int, seed) -> Dataset:
    """Draw ``n`` labelled points from the joint model."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    y = rng.choice(params.num_classes, size=n, p=params.priors())
    eps = rng.standard_normal((n, params.latent_dim))
    x = params.means[y] + eps @ params.cov.cholesky_factor().T
    return Dataset(x, y, truth=params)


def closed_form_mle(x, y, num_classes: int, kind: str = "full") -> LdaParams:
    """Maximum-likelihood LDA estimates from sample statistics.

    Priors are class frequencies, means are class centroids and the covariance
    is the pooled within-class scatter divided by n.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    n, d = x.shape
    counts = np.bincount(y, minlength=num_classes).astype(float)
    means = np.zeros((num_classes, d))
    np.add.at(means, y, x)
    means /= counts[:, None]
    r = x - means[y]
    sigma = r.T @ r / n
    if kind == "spherical":
        sigma = np.eye(d) * np.trace(sigma) / d
    elif kind == "diagonal":
        sigma = np.diag(np.diag(sigma))
    return make_params(counts / n, means, sigma, kind)
