"""Overlap analysis for shared-covariance Gaussian mixtures, and calibration metrics.

The information potential ``C(p) = int p(z)^2 dz`` of an LDA mixture has a
closed form; the helpers here compute it two independent ways, relate it to
the empirical density penalty, and check the KL-controlled bound between the
two. Monte Carlo estimates always come with a standard error.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfidenceOutOfRange, DimensionMismatch, EmptyDataset, GridTooCoarse, LengthMismatch
from .lda_head import LdaParams, log_mixture_density, mixture_density, sample
from .math_core import LOG_2PI, cholesky, gaussian_log_pdf, whiten

# RHS/LHS ratio above which the overlap bound is reported as uninformative
UNINFORMATIVE_RATIO = 1e3
# relative slack for floating-point error in the exact left-hand side
ROUNDOFF = 1e-12


# ---------------------------------------------------------------------------
# Information potential and cross overlap
# ---------------------------------------------------------------------------


def information_potential(params: LdaParams) -> float:
    """``(4 pi)^{-d/2} |Sigma|^{-1/2} sum_ij pi_i pi_j exp(-||mu_i - mu_j||^2_{Sigma^-1} / 4)``."""
    d = params.latent_dim
    pri = params.priors()
    diff = params.means[:, None, :] - params.means[None, :, :]
    u = whiten(diff, np.zeros(d), params.cov.cholesky_factor())
    m2 = np.sum(u * u, axis=-1)
    pref = math.exp(-0.5 * d * math.log(4.0 * math.pi) - 0.5 * params.cov.log_det())
    return float(pref * np.sum(np.outer(pri, pri) * np.exp(-0.25 * m2)))


def _pairwise_gaussian_sum(w_p, mu_p, w_q, mu_q, cov_sum) -> float:
    # sum_ij w_i v_j N(mu_i - mu_j; 0, cov_sum), each term through a generic log-pdf
    diff = mu_p[:, None, :] - mu_q[None, :, :]
    logn = gaussian_log_pdf(diff, np.zeros(diff.shape[-1]), cov_sum)
    return float(np.sum(np.outer(w_p, w_q) * np.exp(logn)))


def information_potential_pairwise(params: LdaParams) -> float:
    """Double-sum form ``sum_ij pi_i pi_j N(mu_i - mu_j; 0, 2 Sigma)``."""
    sigma = params.cov.matrix()
    pri = params.priors()
    return _pairwise_gaussian_sum(pri, params.means, pri, params.means, 2.0 * sigma)


def cross_overlap_closed_form(p: LdaParams, q: LdaParams) -> float:
    """``int p(z) q(z) dz = sum_ij pi^p_i pi^q_j N(mu^p_i - mu^q_j; 0, Sigma_p + Sigma_q)``."""
    if p.latent_dim != q.latent_dim:
        raise DimensionMismatch(f"dims {p.latent_dim} and {q.latent_dim} differ")
    cov_sum = p.cov.matrix() + q.cov.matrix()
    return _pairwise_gaussian_sum(p.priors(), p.means, q.priors(), q.means, cov_sum)


def linf_bound(params: LdaParams) -> float:
    """Upper bound ``(2 pi)^{-d/2} det(Sigma)^{-1/2}`` on the mixture density."""
    return math.exp(-0.5 * params.latent_dim * LOG_2PI - 0.5 * params.cov.log_det())


# ---------------------------------------------------------------------------
# Monte Carlo estimators
# ---------------------------------------------------------------------------


def _mean_and_se(values: np.ndarray) -> tuple[float, float]:
    n = values.shape[0]
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se


def mc_mean_model_density(z, params: LdaParams) -> tuple[float, float]:
    """Mean and standard error of ``p_theta(z_i)`` over the given embeddings."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[0] == 0:
        raise EmptyDataset("no embeddings given")
    return _mean_and_se(np.atleast_1d(mixture_density(params, z)))


def mc_information_potential(params: LdaParams, n: int = 200_000, seed=0) -> tuple[float, float]:
    """``E_{Z ~ p}[p(Z)]`` by sampling the mixture itself."""
    z = sample(params, n, seed).x
    return mc_mean_model_density(z, params)


def mc_cross_overlap(p: LdaParams, q: LdaParams, n: int = 200_000, seed=0) -> tuple[float, float]:
    """``E_{Z ~ p}[q(Z)]``."""
    if p.latent_dim != q.latent_dim:
        raise DimensionMismatch(f"dims {p.latent_dim} and {q.latent_dim} differ")
    return mc_mean_model_density(sample(p, n, seed).x, q)


def kl_mc_estimate(p: LdaParams, q: LdaParams, n: int = 200_000, seed=0) -> tuple[float, float]:
    """Unbiased Monte Carlo ``KL(p || q)`` between mixture marginals, with standard error."""
    if p.latent_dim != q.latent_dim:
        raise DimensionMismatch(f"dims {p.latent_dim} and {q.latent_dim} differ")
    if n < 1000:
        raise ValueError("KL estimate needs n >= 1000 samples")
    z = sample(p, n, seed).x
    return _mean_and_se(log_mixture_density(p, z) - log_mixture_density(q, z))


# ---------------------------------------------------------------------------
# Overlap bound
# ---------------------------------------------------------------------------


@dataclass
class OverlapReport:
    closed_form_C: float
    closed_form_cross: float
    lhs: float
    mc_estimate_cross: float
    mc_std_err: float
    linf_bound: float
    kl_estimate: float
    kl_std_err: float
    bound_rhs: float
    bound_rhs_upper: float
    bound_satisfied: bool
    uninformative: bool
    max_density_seen: float
    l1_l2: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def overlap_bound_check(p_data: LdaParams, p_model: LdaParams, n: int = 200_000, seed=0) -> OverlapReport:
    """Check ``|int p q - int q^2| <= ||q||_inf sqrt(2 KL(p || q))`` with ``q = p_model``.

    The left side is exact. The KL on the right is a Monte Carlo estimate; the
    bound counts as satisfied when the left side stays below the right side
    evaluated at ``KL + 3 * std_err``.
    """
    if p_data.latent_dim != p_model.latent_dim:
        raise DimensionMismatch(f"dims {p_data.latent_dim} and {p_model.latent_dim} differ")
    ip = information_potential(p_model)
    cross = cross_overlap_closed_form(p_data, p_model)
    # same code path for both terms, so identical models give an exact zero
    lhs = abs(cross - cross_overlap_closed_form(p_model, p_model))

    z = sample(p_data, n, seed).x
    log_q = log_mixture_density(p_model, z)
    kl, kl_se = _mean_and_se(log_mixture_density(p_data, z) - log_q)
    dens_q = np.exp(log_q)
    mc_cross, mc_se = _mean_and_se(dens_q)

    linf = linf_bound(p_model)
    rhs = linf * math.sqrt(2.0 * max(kl, 0.0))
    rhs_upper = linf * math.sqrt(2.0 * max(kl + 3.0 * kl_se, 0.0))
    return OverlapReport(
        closed_form_C=ip,
        closed_form_cross=cross,
        lhs=lhs,
        mc_estimate_cross=mc_cross,
        mc_std_err=mc_se,
        linf_bound=linf,
        kl_estimate=kl,
        kl_std_err=kl_se,
        bound_rhs=rhs,
        bound_rhs_upper=rhs_upper,
        bound_satisfied=bool(lhs <= rhs_upper + ROUNDOFF * max(ip, cross)),
        uninformative=bool(rhs > UNINFORMATIVE_RATIO * lhs),
        max_density_seen=float(dens_q.max()),
        l1_l2=l1_l2_comparison(p_model, lam=1.0, kl=kl, empirical_penalty=mc_cross),
    )


def l1_l2_comparison(params: LdaParams, lam: float, kl: float, empirical_penalty: float) -> dict:
    """Diagnostic numbers for comparing the intrinsic and empirical density penalties.

    Reports the empirical penalty ``lam * E_p[p_theta(Z)]``, the slack term
    ``lam * ||p_theta||_inf * sqrt(2 KL)`` that bounds how far the intrinsic
    penalty can exceed it, and the inflation factor ``det(Sigma)^{-1/2}``.
    """
    linf = linf_bound(params)
    return {
        "empirical_penalty": lam * empirical_penalty,
        "intrinsic_penalty": lam * information_potential(params),
        "slack": lam * linf * math.sqrt(2.0 * max(kl, 0.0)),
        "inflation_factor": math.exp(-0.5 * params.cov.log_det()),
    }


# ---------------------------------------------------------------------------
# KL under marginalization (1-D quadrature)
# ---------------------------------------------------------------------------


@dataclass
class QuadratureGrid:
    lo: float
    hi: float
    nodes: int

    @classmethod
    def covering(cls, *models: LdaParams, width: float = 10.0, nodes: int = 20_001) -> "QuadratureGrid":
        """Grid spanning ``width`` standard deviations past every component."""
        lo, hi = np.inf, -np.inf
        for m in models:
            s = math.sqrt(float(m.cov.matrix()[0, 0]))
            lo = min(lo, float(m.means[:, 0].min()) - width * s)
            hi = max(hi, float(m.means[:, 0].max()) + width * s)
        return cls(lo, hi, nodes)

    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.nodes)


def _log_joint_1d(params: LdaParams, z: np.ndarray) -> np.ndarray:
    # log p(z, y) for every class, shape (n, C)
    s2 = float(params.cov.matrix()[0, 0])
    r = z[:, None] - params.means[None, :, 0]
    return params.log_priors() - 0.5 * LOG_2PI - 0.5 * math.log(s2) - 0.5 * r * r / s2


def kl_marginalization_check(p: LdaParams, q: LdaParams, grid: QuadratureGrid | None = None) -> tuple[float, float]:
    """Joint and marginal ``KL(p || q)`` for 1-D LDA models by trapezoid quadrature."""
    if p.latent_dim != 1 or q.latent_dim != 1:
        raise DimensionMismatch("quadrature check is for 1-D models")
    if p.num_classes != q.num_classes:
        raise DimensionMismatch("models need the same number of classes")
    grid = grid or QuadratureGrid.covering(p, q)
    if grid.nodes < 1000:
        raise GridTooCoarse(f"{grid.nodes} nodes; need at least 1000")
    z = grid.points()
    lp = _log_joint_1d(p, z)
    lq = _log_joint_1d(q, z)
    joint = np.trapezoid(np.sum(np.exp(lp) * (lp - lq), axis=1), z)
    lp_m = np.logaddexp.reduce(lp, axis=1)
    lq_m = np.logaddexp.reduce(lq, axis=1)
    marginal = np.trapezoid(np.exp(lp_m) * (lp_m - lq_m), z)
    return float(joint), float(marginal)


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------


@dataclass
class CalibrationBin:
    lower: float
    upper: float
    count: int
    mean_confidence: float
    empirical_accuracy: float

    @property
    def gap(self) -> float:
        return abs(self.empirical_accuracy - self.mean_confidence) if self.count else 0.0


@dataclass
class CalibrationReport:
    bins: list[CalibrationBin]
    ece: float
    overall_accuracy: float
    mean_confidence: float
    n: int

    def ece_from_bins(self) -> float:
        return float(sum(b.count / self.n * b.gap for b in self.bins)) if self.n else 0.0

    def to_dict(self) -> dict:
        return {
            "ece": self.ece,
            "overall_accuracy": self.overall_accuracy,
            "mean_confidence": self.mean_confidence,
            "n": self.n,
            "bins": [asdict(b) for b in self.bins],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_low", "bin_high", "count", "conf", "acc", "gap"])
            for b in self.bins:
                w.writerow([repr(b.lower), repr(b.upper), b.count, repr(b.mean_confidence),
                            repr(b.empirical_accuracy), repr(b.gap)])


def calibration_report(confidences, correct, num_bins: int = 10) -> CalibrationReport:
    """Reliability-diagram bins and expected calibration error.

    Bins are ``[m/M, (m+1)/M)`` with the top bin closed, so a confidence on an
    interior edge falls in the higher bin and 1.0 falls in the top bin. Empty
    bins report zero confidence and accuracy and contribute nothing.
    """
    conf = np.asarray(confidences, dtype=np.float64).ravel()
    corr = np.asarray(correct, dtype=bool).ravel()
    if conf.shape != corr.shape:
        raise LengthMismatch(f"{conf.size} confidences but {corr.size} correctness flags")
    if num_bins < 1:
        raise ValueError("need at least one bin")
    if conf.size and (np.any(~np.isfinite(conf)) or conf.min() < 0.0 or conf.max() > 1.0):
        raise ConfidenceOutOfRange("confidences must lie in [0, 1]")

    edges = np.arange(num_bins + 1) / num_bins
    idx = np.minimum(np.searchsorted(edges, conf, side="right") - 1, num_bins - 1)
    n = conf.size
    bins = []
    ece = 0.0
    for m in range(num_bins):
        mask = idx == m
        k = int(mask.sum())
        mc = float(conf[mask].mean()) if k else 0.0
        acc = float(corr[mask].mean()) if k else 0.0
        bins.append(CalibrationBin(float(edges[m]), float(edges[m + 1]), k, mc, acc))
        if k:
            ece += k / n * abs(acc - mc)
    return CalibrationReport(
        bins=bins,
        ece=float(ece),
        overall_accuracy=float(corr.mean()) if n else 0.0,
        mean_confidence=float(conf.mean()) if n else 0.0,
        n=n,
    )
