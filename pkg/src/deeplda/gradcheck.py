"""Finite-difference and complex-step checks of every analytic gradient."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lda_head import COV_KINDS, CovarianceParam, LdaParams
from .losses import CROSS_ENTROPY, DNLL, NLL, Objective, batch_loss, dnll_grad_wrt_discriminants, loss_from_discriminants
from .train import Encoder, encoder_backward, encoder_forward, head_arrays, head_grad_dict

FD_STEP = 1e-5
TOLERANCE = 1e-5


def rel_err(analytic, numeric) -> np.ndarray:
    """``|a - fd| / max(1, |a|)`` elementwise."""
    a = np.asarray(analytic, dtype=float)
    return np.abs(a - numeric) / np.maximum(1.0, np.abs(a))


def central_difference(f, arrays: dict[str, np.ndarray], h: float = FD_STEP) -> dict[str, np.ndarray]:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arrays`` (perturbed in place)."""
    out = {}
    for key, arr in arrays.items():
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            gflat[i] = (fp - fm) / (2.0 * h)
        out[key] = g
    return out


def random_head(rng: np.random.Generator, num_classes: int, dim: int, kind: str) -> LdaParams:
    if kind == "spherical":
        values = np.array(rng.uniform(-0.3, 0.3))
    elif kind == "diagonal":
        values = rng.uniform(-0.3, 0.3, dim)
    else:
        values = np.tril(rng.normal(0.0, 0.3, (dim, dim)), -1) + np.diag(rng.uniform(-0.3, 0.3, dim))
    return LdaParams(rng.normal(0.0, 0.5, num_classes), rng.normal(0.0, 1.0, (num_classes, dim)),
                     CovarianceParam(kind, values, dim))


@dataclass
class CheckOutcome:
    name: str
    max_rel_err: float = 0.0
    trials: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_err < TOLERANCE

    def update(self, err: float) -> None:
        self.max_rel_err = max(self.max_rel_err, err)
        self.trials += 1


def head_check(params: LdaParams, z: np.ndarray, y: np.ndarray, objective: Objective, h: float = FD_STEP) -> float:
    """Max relative error over head parameters and embeddings for one configuration."""
    res = batch_loss(params, z, y, objective)
    analytic = head_grad_dict(res.grad_params)
    analytic["z"] = res.grad_embeddings
    arrays = head_arrays(params)
    arrays["z"] = z
    numeric = central_difference(lambda: batch_loss(params, z, y, objective).value, arrays, h)
    return max(float(np.max(rel_err(analytic[k], numeric[k]))) for k in arrays)


def pipeline_check(enc: Encoder, params: LdaParams, x: np.ndarray, y: np.ndarray, objective: Objective,
                   h: float = FD_STEP) -> float:
    """Max relative error over every encoder and head parameter of the full model."""
    z, cache = encoder_forward(enc, x)
    res = batch_loss(params, z, y, objective)
    analytic = head_grad_dict(res.grad_params)
    analytic.update(encoder_backward(enc, cache, res.grad_embeddings).as_dict())
    arrays = head_arrays(params)
    arrays.update(enc.arrays())

    def f():
        return batch_loss(params, encoder_forward(enc, x)[0], y, objective).value

    numeric = central_difference(f, arrays, h)
    return max(float(np.max(rel_err(analytic[k], numeric[k]))) for k in arrays)


def complex_step_identity(n: int = 1000, seed=0) -> float:
    """Max abs gap between ``lam * exp(delta) - e_y`` and the complex-step derivative of the DNLL map.

    The complex step ``Im f(delta + i h e_k) / h`` has no subtractive
    cancellation, so agreement is at machine precision.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    h = 1e-30
    for _ in range(n):
        c = int(rng.integers(2, 6))
        delta = rng.normal(0.0, 2.0, c)
        y = int(rng.integers(c))
        lam = float(10.0 ** rng.uniform(-4, 1))
        closed = dnll_grad_wrt_discriminants(delta, y, lam)
        probe = delta[None, :] + 1j * h * np.eye(c)
        chain = loss_from_discriminants(probe, np.full(c, y), DNLL(lam)).imag / h
        worst = max(worst, float(np.max(np.abs(closed - chain))))
    return worst


@dataclass
class GradCheckReport:
    outcomes: list = field(default_factory=list)
    identity_max_abs_err: float = 0.0

    @property
    def passed(self) -> bool:
        return all(o.passed for o in self.outcomes) and self.identity_max_abs_err < 1e-10

    def to_dict(self) -> dict:
        return {
            "checks": {o.name: {"max_rel_err": o.max_rel_err, "trials": o.trials, "passed": o.passed}
                       for o in self.outcomes},
            "dnll_delta_identity_max_abs_err": self.identity_max_abs_err,
            "fd_step": FD_STEP,
            "tolerance": TOLERANCE,
            "passed": self.passed,
        }


def run_grad_check(trials: int = 100, seed: int = 0, batch: int = 4) -> GradCheckReport:
    """Random configurations (d <= 4, C <= 5) for every loss and covariance kind, plus the full pipeline."""
    rng = np.random.default_rng(seed)
    objectives = {"nll": NLL, "ce": CROSS_ENTROPY, "dnll": DNLL(0.01)}
    head_out = {(o, k): CheckOutcome(f"{o}/{k}") for o in objectives for k in COV_KINDS}
    pipe_out = {o: CheckOutcome(f"pipeline/{o}") for o in objectives}
    for _ in range(trials):
        c = int(rng.integers(2, 6))
        d = int(rng.integers(1, 5))
        y = rng.integers(0, c, batch)
        for kind in COV_KINDS:
            params = random_head(rng, c, d, kind)
            z = rng.normal(0.0, 1.5, (batch, d))
            for name, obj in objectives.items():
                head_out[(name, kind)].update(head_check(params, z, y, obj))
        enc = Encoder.init([2, 8, 2], rng.integers(1 << 31))
        params = random_head(rng, 3, 2, "full")
        x = rng.normal(0.0, 1.0, (batch, 2))
        yp = rng.integers(0, 3, batch)
        for name, obj in objectives.items():
            pipe_out[name].update(pipeline_check(enc, params, x, yp, obj))
    identity = complex_step_identity(1000, [seed, 1])
    return GradCheckReport(list(head_out.values()) + list(pipe_out.values()), identity)
