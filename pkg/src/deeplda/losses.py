"""NLL, cross-entropy and DNLL objectives for the LDA head.

Each objective is written as a function of the discriminant vector
``delta`` plus its gradient ``G = d loss / d delta``. Everything upstream
(priors, means, covariance, embeddings) is reached from ``G`` by the chain
rule in :func:`head_backward`, so the three losses share one backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import EmptyBatch, InvalidLabel, NegativeLambda, NonFiniteLoss
from .lda_head import LdaParams
from .math_core import LOG_2PI, logsumexp, softmax, whiten


@dataclass(frozen=True)
class Objective:
    """Training objective: ``"nll"``, ``"ce"`` or ``"dnll"`` with weight ``lam``."""

    kind: str
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in ("nll", "ce", "dnll"):
            raise ValueError(f"unknown objective {self.kind!r}")
        if self.lam < 0:
            raise NegativeLambda(f"lambda must be >= 0, got {self.lam}")

    @classmethod
    def parse(cls, name: str, lam: float = 0.01) -> "Objective":
        name = name.lower()
        return cls(name, lam if name == "dnll" else 0.0)

    def __str__(self) -> str:
        return f"dnll(lambda={self.lam:g})" if self.kind == "dnll" else self.kind


NLL = Objective("nll")
CROSS_ENTROPY = Objective("ce")


def DNLL(lam: float) -> Objective:
    return Objective("dnll", lam)


@dataclass
class HeadGrads:
    """Gradient record laid out like LdaParams."""

    prior_logits: np.ndarray
    means: np.ndarray
    cov: np.ndarray


@dataclass
class LossBatchResult:
    """Mean loss over a batch.

    ``grad_embeddings[i]`` is the gradient of the *mean* loss with respect to
    embedding ``i`` (so it already carries the ``1/n`` factor).
    """

    value: float
    grad_embeddings: np.ndarray
    grad_params: HeadGrads
    per_sample: np.ndarray


def _check_labels(y: np.ndarray, num_classes: int) -> None:
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise InvalidLabel(f"labels must lie in [0, {num_classes}), got range [{y.min()}, {y.max()}]")


def dnll_grad_wrt_discriminants(delta, y: int, lam: float) -> np.ndarray:
    """``lam * exp(delta) - e_y``."""
    delta = np.asarray(delta, dtype=np.float64)
    if lam < 0:
        raise NegativeLambda(f"lambda must be >= 0, got {lam}")
    _check_labels(np.asarray([y]), delta.shape[-1])
    g = lam * np.exp(delta)
    g[..., y] -= 1.0
    return g


def loss_from_discriminants(delta, y, objective: Objective, latent_dim: int = 0):
    """Per-sample loss values as a function of the discriminants alone.

    Written with plain array ops only so that it also evaluates on complex
    input (used for complex-step derivative checks).
    """
    y = np.asarray(y)
    own = np.take_along_axis(delta, y[..., None], axis=-1)[..., 0]
    if objective.kind == "nll":
        return -own + 0.5 * latent_dim * LOG_2PI
    if objective.kind == "ce":
        if np.iscomplexobj(delta):
            return -own + np.log(np.sum(np.exp(delta), axis=-1))
        return -own + logsumexp(delta, axis=-1)
    return -own + objective.lam * np.sum(np.exp(delta), axis=-1)


def _grad_from_discriminants(delta: np.ndarray, y: np.ndarray, objective: Objective) -> np.ndarray:
    onehot = np.zeros_like(delta)
    onehot[np.arange(delta.shape[0]), y] = 1.0
    if objective.kind == "nll":
        return -onehot
    if objective.kind == "ce":
        return softmax(delta) - onehot
    return objective.lam * np.exp(delta) - onehot


def head_forward(params: LdaParams, z: np.ndarray):
    """Discriminants plus the whitened residuals needed by :func:`head_backward`."""
    chol = params.cov.cholesky_factor()
    u = whiten(z[:, None, :], params.means, chol)
    delta = params.log_priors() - 0.5 * params.cov.log_det() - 0.5 * np.sum(u * u, axis=-1)
    return delta, u, chol


def head_backward(params: LdaParams, g: np.ndarray, u: np.ndarray, chol: np.ndarray):
    """Chain rule from ``G = d loss / d delta`` (shape ``(n, C)``) to head params and embeddings."""
    n, c, d = u.shape
    # w = Sigma^{-1} (z - mu_c) = L^{-T} u
    w = solve_triangular(chol.T, u.reshape(-1, d).T, lower=False, check_finite=False).T.reshape(n, c, d)

    g_class = g.sum(axis=0)
    g_alpha = g_class - g_class.sum() * params.priors()
    g_means = np.einsum("nc,ncd->cd", g, w)
    g_z = -np.einsum("nc,ncd->nd", g, w)

    # d delta_c / dL = w u^T - L^{-T}; only the lower triangle is free and
    # the lower triangle of L^{-T} is diag(1 / L_kk).
    diag_l = np.diag(chol)
    g_chol = np.tril(np.einsum("nc,nci,ncj->ij", g, w, u)) - g.sum() * np.diag(1.0 / diag_l)

    kind = params.cov.kind
    if kind == "spherical":
        g_cov = np.array(np.sum(np.diag(g_chol) * diag_l))
    elif kind == "diagonal":
        g_cov = np.diag(g_chol) * diag_l
    else:
        g_cov = np.tril(g_chol, -1) + np.diag(np.diag(g_chol) * diag_l)
    return g_z, HeadGrads(g_alpha, g_means, g_cov)


def batch_loss(params: LdaParams, z, y, objective: Objective) -> LossBatchResult:
    """Mean loss over ``(z_i, y_i)`` and its gradients."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    n = z.shape[0]
    if n == 0:
        raise EmptyBatch("batch is empty")
    if y.shape[0] != n:
        raise ValueError(f"{n} embeddings but {y.shape[0]} labels")
    _check_labels(y, params.num_classes)

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        delta, u, chol = head_forward(params, z)
        per_sample = loss_from_discriminants(delta, y, objective, params.latent_dim)
        value = float(np.mean(per_sample))
        if not np.isfinite(value):
            raise NonFiniteLoss(f"{objective} loss is not finite ({value})")
        g = _grad_from_discriminants(delta, y, objective) / n
        g_z, grads = head_backward(params, g, u, chol)
    # a finite loss can still carry overflowed gradients near collapse
    if not (np.all(np.isfinite(g_z)) and all(np.all(np.isfinite(a)) for a in vars(grads).values())):
        raise NonFiniteLoss(f"{objective} gradient is not finite (loss {value})")
    return LossBatchResult(value, g_z, grads, per_sample)


def _single(params: LdaParams, z, y: int, objective: Objective) -> LossBatchResult:
    z = np.asarray(z, dtype=np.float64)
    res = batch_loss(params, z[None, :], np.array([y]), objective)
    res.grad_embeddings = res.grad_embeddings[0]
    return res


def nll(params: LdaParams, z, y: int) -> LossBatchResult:
    """``-log(pi_y N(z; mu_y, Sigma))``; one-class heads are allowed."""
    return _single(params, z, y, NLL)


def cross_entropy(params: LdaParams, z, y: int) -> LossBatchResult:
    """``-log p(y | z)`` with the discriminants as logits."""
    return _single(params, z, y, CROSS_ENTROPY)


def dnll(params: LdaParams, z, y: int, lam: float) -> LossBatchResult:
    """``-delta_y(z) + lam * sum_c exp(delta_c(z))``."""
    return _single(params, z, y, DNLL(lam))


def softmax_cross_entropy(logits, y):
    """Mean CE for a plain affine softmax head; returns ``(value, d value / d logits)``."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    n = logits.shape[0]
    if n == 0:
        raise EmptyBatch("batch is empty")
    _check_labels(y, logits.shape[1])
    lse = logsumexp(logits, axis=-1)
    value = float(np.mean(lse - logits[np.arange(n), y]))
    g = softmax(logits)
    g[np.arange(n), y] -= 1.0
    return value, g / n
