"""Feed-forward encoder, Adam, and the classical / deep training loops."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .errors import DimensionMismatch, EmptyDataset, NonFiniteLoss, ShapeMismatch, StaleCache
from .lda_head import CovarianceParam, LdaParams, discriminants
from .losses import NLL, Objective, batch_loss, softmax_cross_entropy
from .math_core import whiten

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "identity")


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"


@dataclass
class Encoder:
    layers: list[Layer]
    version: int = 0

    def __post_init__(self):
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")
            if layer.bias.shape != (layer.weight.shape[0],):
                raise DimensionMismatch(f"layer {i}: bias shape {layer.bias.shape} vs weight {layer.weight.shape}")
            if i and layer.weight.shape[1] != self.layers[i - 1].weight.shape[0]:
                raise DimensionMismatch(f"layer {i} input dim does not chain with layer {i - 1}")
        if self.layers and self.layers[-1].activation != "identity":
            raise ValueError("final encoder layer must be identity")

    @classmethod
    def init(cls, sizes, seed) -> "Encoder":
        """ReLU MLP with layer widths ``sizes``; uniform(+-1/sqrt(fan_in)) init."""
        rng = np.random.default_rng(seed)
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / math.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            b = rng.uniform(-bound, bound, size=fan_out)
            act = "identity" if i == len(sizes) - 2 else "relu"
            layers.append(Layer(w, b, act))
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def latent_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    def arrays(self, prefix: str = "enc") -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{prefix}.{i}.weight"] = layer.weight
            out[f"{prefix}.{i}.bias"] = layer.bias
        return out

    def copy(self) -> "Encoder":
        return Encoder([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"weight": l.weight.tolist(), "bias": l.bias.tolist(), "activation": l.activation}
                for l in self.layers
            ]
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Encoder":
        return cls(
            [Layer(np.array(l["weight"], dtype=float), np.array(l["bias"], dtype=float), l["activation"])
             for l in doc["layers"]]
        )


@dataclass
class ForwardCache:
    encoder: Encoder
    version: int
    inputs: list  # input to each layer
    preacts: list  # pre-activation of each layer


@dataclass
class EncoderGrads:
    weights: list
    biases: list
    inputs: np.ndarray

    def as_dict(self, prefix: str = "enc") -> dict[str, np.ndarray]:
        out = {}
        for i, (gw, gb) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.{i}.weight"] = gw
            out[f"{prefix}.{i}.bias"] = gb
        return out


def encoder_forward(enc: Encoder, x):
    """Map inputs (``(in,)`` or ``(n, in)``) to embeddings; returns ``(z, cache)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != enc.input_dim:
        raise DimensionMismatch(f"input dim {x.shape[-1]} vs encoder input dim {enc.input_dim}")
    h = x
    inputs, preacts = [], []
    for layer in enc.layers:
        inputs.append(h)
        a = h @ layer.weight.T + layer.bias
        preacts.append(a)
        h = np.maximum(a, 0.0) if layer.activation == "relu" else a
    return h, ForwardCache(enc, enc.version, inputs, preacts)


def encoder_backward(enc: Encoder, cache: ForwardCache, grad_z) -> EncoderGrads:
    """Reverse-mode gradients of a scalar whose gradient w.r.t. the output is ``grad_z``.

    For batched input the weight gradients are summed over the batch.
    ReLU'(0) is taken as 0.
    """
    if cache.encoder is not enc or cache.version != enc.version:
        raise StaleCache("forward cache does not belong to the current encoder parameters")
    g = np.asarray(grad_z, dtype=np.float64)
    gws, gbs = [], []
    for layer, inp, pre in zip(reversed(enc.layers), reversed(cache.inputs), reversed(cache.preacts)):
        if layer.activation == "relu":
            g = g * (pre > 0)
        if g.ndim == 1:
            gws.append(np.outer(g, inp))
            gbs.append(g.copy())
        else:
            gws.append(g.T @ inp)
            gbs.append(g.sum(axis=0))
        g = g @ layer.weight
    return EncoderGrads(gws[::-1], gbs[::-1], g)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


class Adam:
    """Adam with bias correction, updating a dict of arrays in place."""

    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0 or eps <= 0 or not (0 < beta1 < 1) or not (0 < beta2 < 1):
            raise ValueError("invalid Adam hyperparameters")
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        if grads.keys() != self.params.keys():
            raise ShapeMismatch(f"gradient keys {sorted(grads)} vs parameter keys {sorted(self.params)}")
        for k, g in grads.items():
            if np.shape(g) != self.params[k].shape:
                raise ShapeMismatch(f"{k}: gradient shape {np.shape(g)} vs parameter {self.params[k].shape}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# Config, trace, helpers
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    objective: Objective = NLL
    epochs: int = 100
    batch_size: int = 256
    eval_batch_size: int = 1024
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ValueError("learning rate and epsilon must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "objective": self.objective.kind,
            "lambda": self.objective.lam,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "eval_batch_size": self.eval_batch_size,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "seed": self.seed,
            "shuffle": self.shuffle,
        }


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    det_sigma: float
    sigma: float
    min_mean_dist: float


@dataclass
class TrainTrace:
    records: list[EpochRecord] = field(default_factory=list)
    collapsed: bool = False
    failed_epoch: int | None = None
    message: str = ""

    CSV_FIELDS = ("epoch", "loss", "train_acc", "det_sigma", "sigma", "min_mean_dist")

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.CSV_FIELDS)
            for r in self.records:
                w.writerow([r.epoch] + [repr(float(getattr(r, f))) for f in self.CSV_FIELDS[1:]])


def head_arrays(head: LdaParams) -> dict[str, np.ndarray]:
    return {"prior_logits": head.prior_logits, "means": head.means, "cov": head.cov.values}


def head_grad_dict(grads) -> dict[str, np.ndarray]:
    return {"prior_logits": grads.prior_logits, "means": grads.means, "cov": grads.cov}


def min_mean_distance(head: LdaParams) -> float:
    """Smallest pairwise Mahalanobis distance between class means."""
    c = head.num_classes
    if c < 2:
        return float("nan")
    i, j = np.triu_indices(c, 1)
    u = whiten(head.means[i], head.means[j], head.cov.cholesky_factor())
    return float(np.sqrt(np.min(np.sum(u * u, axis=-1))))


def epoch_order(n: int, seed: int, epoch: int, shuffle: bool = True) -> np.ndarray:
    if not shuffle:
        return np.arange(n)
    return np.random.default_rng([seed, epoch]).permutation(n)


def embed(enc: Encoder | None, x: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    if enc is None:
        return x
    parts = [encoder_forward(enc, x[i:i + batch_size])[0] for i in range(0, x.shape[0], batch_size)]
    return np.concatenate(parts) if parts else np.zeros((0, enc.latent_dim))


def accuracy(head: LdaParams, enc: Encoder | None, data: Dataset, batch_size: int = 1024) -> float:
    z = embed(enc, data.x, batch_size)
    pred = np.argmax(discriminants(head, z), axis=-1)
    return float(np.mean(pred == data.y))


def init_head(num_classes: int, dim: int, seed, kind: str = "spherical") -> LdaParams:
    """Uniform priors, means ~ N(0, 36 / (2d)) per coordinate, unit covariance."""
    if num_classes < 2 or dim < 1:
        raise ValueError("need C >= 2 and d >= 1")
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, 6.0 / math.sqrt(2.0 * dim), size=(num_classes, dim))
    return LdaParams(np.zeros(num_classes), means, CovarianceParam.identity(kind, dim))


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------


def _record(trace: TrainTrace, epoch: int, loss: float, head: LdaParams, enc, data, cfg) -> None:
    # near-singular heads overflow harmlessly to inf here
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        trace.records.append(EpochRecord(
            epoch=epoch,
            loss=loss,
            train_acc=accuracy(head, enc, data, cfg.eval_batch_size),
            det_sigma=head.cov.det(),
            sigma=head.cov.sigma(),
            min_mean_dist=min_mean_distance(head),
        ))


def _run(data: Dataset, enc: Encoder | None, head: LdaParams, cfg: TrainConfig):
    n = len(data)
    if n == 0:
        raise EmptyDataset("training set is empty")
    expected = enc.input_dim if enc is not None else head.latent_dim
    if data.dim != expected:
        raise DimensionMismatch(f"data dim {data.dim} vs model input dim {expected}")
    if enc is not None and enc.latent_dim != head.latent_dim:
        raise DimensionMismatch(f"encoder output dim {enc.latent_dim} vs head dim {head.latent_dim}")

    params = head_arrays(head)
    if enc is not None:
        params.update(enc.arrays())
    opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    trace = TrainTrace()

    for epoch in range(cfg.epochs):
        order = epoch_order(n, cfg.seed, epoch, cfg.shuffle)
        total = 0.0
        try:
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                xb, yb = data.x[idx], data.y[idx]
                if enc is None:
                    res = batch_loss(head, xb, yb, cfg.objective)
                    grads = head_grad_dict(res.grad_params)
                else:
                    z, cache = encoder_forward(enc, xb)
                    res = batch_loss(head, z, yb, cfg.objective)
                    grads = head_grad_dict(res.grad_params)
                    grads.update(encoder_backward(enc, cache, res.grad_embeddings).as_dict())
                opt.step(grads)
                if enc is not None:
                    enc.version += 1
                total += res.value * len(idx)
        except NonFiniteLoss as exc:
            exc.epoch = epoch
            trace.collapsed = True
            trace.failed_epoch = epoch
            trace.message = str(exc)
            log.warning("run stopped at epoch %d: %s", epoch, exc)
            break
        _record(trace, epoch, total / n, head, enc, data, cfg)
    return trace


def fit_classical(data: Dataset, init: LdaParams, cfg: TrainConfig):
    """Fit the head directly on raw inputs. Returns ``(params, trace)``."""
    head = init.copy()
    trace = _run(data, None, head, cfg)
    return head, trace


def fit_deep(data: Dataset, enc: Encoder, head: LdaParams, cfg: TrainConfig):
    """Jointly train encoder and head. Returns ``(encoder, head, trace)``.

    A non-finite loss ends the run early; ``trace.collapsed`` is set and the
    parameters are returned as they were when the failing batch was hit.
    """
    enc, head = enc.copy(), head.copy()
    trace = _run(data, enc, head, cfg)
    return enc, head, trace


def fit_softmax(data: Dataset, net: Encoder, cfg: TrainConfig):
    """Cross-entropy training of a network whose outputs are class logits."""
    net = net.copy()
    n = len(data)
    if n == 0:
        raise EmptyDataset("training set is empty")
    opt = Adam(net.arrays(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    losses = []
    for epoch in range(cfg.epochs):
        order = epoch_order(n, cfg.seed, epoch, cfg.shuffle)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logits, cache = encoder_forward(net, data.x[idx])
            value, g = softmax_cross_entropy(logits, data.y[idx])
            opt.step(encoder_backward(net, cache, g).as_dict())
            net.version += 1
            total += value * len(idx)
        losses.append(total / n)
    return net, losses
