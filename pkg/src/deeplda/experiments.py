"""Synthetic data and end-to-end experiment runners.

Each runner returns an :class:`ExperimentResult` with per-seed metrics,
aggregates (mean and 2 * std over seeds) and named pass/fail checks. When an
output directory is given, traces, parameters and latent scatter plots are
written there as well.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from .analysis import calibration_report
from .dataset import Dataset
from .lda_head import (
    CovarianceParam,
    LdaParams,
    closed_form_mle,
    make_params,
    posterior,
    sample,
    discriminants,
)
from .losses import CROSS_ENTROPY, DNLL, NLL, Objective
from .math_core import cholesky, softmax
from .svg import scatter_svg
from .train import (
    Encoder,
    Layer,
    TrainConfig,
    embed,
    fit_classical,
    fit_deep,
    fit_softmax,
    init_head,
)

DEFAULT_SEEDS = (0, 1, 2)
LAMBDA_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)
HIDDEN = 32

# Synthetic-task head init: means start near the origin, where a freshly
# initialised encoder puts every embedding.
SYNTH_MEAN_STD = 0.1
CLASSICAL_LR = 3e-3
BAYES_ORACLE_N = 50_000


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


@dataclass
class SyntheticSpec:
    num_classes: int = 3
    input_dim: int = 2
    priors: list = field(default_factory=lambda: [1 / 3, 1 / 3, 1 / 3])
    means: list = field(default_factory=lambda: [[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]])
    cov: list = field(default_factory=lambda: [[1.0, 0.3], [0.3, 1.0]])
    n_train: int = 20_000
    n_test: int = 4_000
    seed: int = 0

    def __post_init__(self):
        pri = np.asarray(self.priors, dtype=float)
        if pri.shape != (self.num_classes,) or np.any(pri < 0) or abs(pri.sum() - 1.0) > 1e-9:
            raise ValueError("priors must be a probability vector over the classes")
        if np.asarray(self.means, dtype=float).shape != (self.num_classes, self.input_dim):
            raise ValueError("means must have shape (num_classes, input_dim)")
        cholesky(np.asarray(self.cov, dtype=float))
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("n_train and n_test must be positive")

    @classmethod
    def default(cls, **kw) -> "SyntheticSpec":
        return cls(**kw)

    @classmethod
    def overlapping(cls, **kw) -> "SyntheticSpec":
        """Default spec with means pulled in by 0.35 (Bayes accuracy about 0.81)."""
        base = cls()
        return cls(means=(np.asarray(base.means) * 0.35).tolist(), **kw)

    def truth(self) -> LdaParams:
        return make_params(self.priors, self.means, self.cov, "full")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticSpec":
        return cls(**doc)


def gen_synthetic(spec: SyntheticSpec) -> tuple[Dataset, Dataset]:
    """Train/test sets from independent streams of ``spec.seed``."""
    truth = spec.truth()
    train = sample(truth, spec.n_train, [spec.seed, 0])
    test = sample(truth, spec.n_test, [spec.seed, 1])
    return train, test


def synthetic_head_init(num_classes: int, dim: int, seed, kind: str = "full", std: float = SYNTH_MEAN_STD) -> LdaParams:
    rng = np.random.default_rng(seed)
    return LdaParams(np.zeros(num_classes), rng.normal(0.0, std, size=(num_classes, dim)),
                     CovarianceParam.identity(kind, dim))


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass
class ExperimentResult:
    experiment: str
    config: dict
    per_seed: list
    aggregate: dict
    checks: dict
    artifacts: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def aggregate(records: list[dict]) -> dict:
    """Mean and 2 * sample std over seeds for every numeric, non-flag metric."""
    out = {}
    if not records:
        return out
    for key in records[0]:
        if key in ("seed", "lambda"):
            continue
        vals = [r[key] for r in records]
        if any(isinstance(v, (bool, np.bool_)) or not isinstance(v, (int, float, np.number)) for v in vals):
            continue
        arr = np.asarray(vals, dtype=float)
        sd = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
        out[key] = {"mean": float(np.mean(arr)), "two_std": 2.0 * sd}
    return out


class _Artifacts:
    def __init__(self, out):
        self.root = Path(out) if out is not None else None
        self.paths: list[str] = []
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    def text(self, name: str, content: str) -> None:
        if self.root is None:
            return
        (self.root / name).write_text(content)
        self.paths.append(name)

    def call(self, name: str, writer) -> None:
        if self.root is None:
            return
        writer(self.root / name)
        self.paths.append(name)


# ---------------------------------------------------------------------------
# Metrics helpers
# ---------------------------------------------------------------------------


def greedy_match(learned: np.ndarray, target: np.ndarray) -> np.ndarray:
    """``perm[c]`` = learned index matched to target class ``c``, closest pairs first."""
    dist = np.linalg.norm(target[:, None, :] - learned[None, :, :], axis=-1)
    perm = -np.ones(target.shape[0], dtype=int)
    used = set()
    for flat in np.argsort(dist, axis=None, kind="stable"):
        c, k = np.unravel_index(flat, dist.shape)
        if perm[c] < 0 and k not in used:
            perm[c] = k
            used.add(k)
    return perm


def recovery_errors(learned: LdaParams, target: LdaParams) -> dict:
    perm = greedy_match(learned.means, target.means)
    mean_err = np.linalg.norm(learned.means[perm] - target.means, axis=1)
    return {
        "mean_err": float(mean_err.mean()),
        "mean_err_max": float(mean_err.max()),
        "cov_err": float(np.linalg.norm(learned.cov.matrix() - target.cov.matrix())),
        "prior_err": float(np.abs(learned.priors()[perm] - target.priors()).max()),
    }


def cloud_offsets(z: np.ndarray, y: np.ndarray, means: np.ndarray) -> np.ndarray:
    """Distance from each learned mean to its class centroid, in units of the cloud's RMS radius."""
    out = np.full(means.shape[0], np.inf)
    for c in range(means.shape[0]):
        zc = z[y == c]
        if zc.shape[0] < 2:
            continue
        centroid = zc.mean(axis=0)
        radius = math.sqrt(float(np.mean(np.sum((zc - centroid) ** 2, axis=1))))
        out[c] = np.linalg.norm(means[c] - centroid) / radius if radius > 0 else np.inf
    return out


def head_ece(head: LdaParams, enc: Encoder | None, data: Dataset, num_bins: int = 10):
    post = posterior(head, embed(enc, data.x))
    return calibration_report(post.max(axis=1), post.argmax(axis=1) == data.y, num_bins)


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------


def run_classical_consistency(seeds=DEFAULT_SEEDS, spec: SyntheticSpec | None = None, epochs: int = 100,
                              out=None) -> ExperimentResult:
    """Fit NLL and CE heads on raw inputs and compare parameter recovery."""
    spec = spec or SyntheticSpec.default()
    art = _Artifacts(out)
    records = []
    for seed in seeds:
        train, _ = gen_synthetic(replace(spec, seed=seed))
        truth = spec.truth()
        oracle = closed_form_mle(train.x, train.y, spec.num_classes)
        init = synthetic_head_init(spec.num_classes, spec.input_dim, [seed, 11])
        rec = {"seed": seed}
        fitted = {}
        for obj in (NLL, CROSS_ENTROPY):
            cfg = TrainConfig(objective=obj, epochs=epochs, learning_rate=CLASSICAL_LR, seed=seed)
            head, trace = fit_classical(train, init, cfg)
            fitted[obj.kind] = head
            err = recovery_errors(head, truth)
            for k, v in err.items():
                rec[f"{obj.kind}_{k}"] = v
            rec[f"{obj.kind}_train_acc"] = trace.records[-1].train_acc
            rec[f"{obj.kind}_det_sigma"] = head.cov.det()
            art.call(f"classical_{obj.kind}_seed{seed}_trace.csv", trace.to_csv)
            art.text(f"classical_{obj.kind}_seed{seed}_params.json", head.to_json())
        rec["nll_vs_oracle_mean"] = float(np.linalg.norm(fitted["nll"].means - oracle.means, axis=1).max())
        rec["nll_vs_oracle_cov"] = float(np.linalg.norm(fitted["nll"].cov.matrix() - oracle.cov.matrix()))
        rec["oracle_mean_err_max"] = recovery_errors(oracle, truth)["mean_err_max"]
        records.append(rec)

    checks = {
        "nll_means_within_0.1": all(r["nll_mean_err_max"] < 0.1 for r in records),
        "nll_cov_within_0.1": all(r["nll_cov_err"] < 0.1 for r in records),
        "nll_matches_closed_form_0.05": all(
            r["nll_vs_oracle_mean"] < 0.05 and r["nll_vs_oracle_cov"] < 0.05 for r in records
        ),
        "ce_train_acc_0.99": all(r["ce_train_acc"] >= 0.99 for r in records),
        "ce_error_exceeds_5x_nll": all(r["ce_mean_err"] > 5.0 * r["nll_mean_err"] for r in records),
        "ce_det_below_nll_det": all(r["ce_det_sigma"] < r["nll_det_sigma"] for r in records),
    }
    config = {"spec": spec.to_dict(), "seeds": list(seeds), "epochs": epochs, "learning_rate": CLASSICAL_LR,
              "init_mean_std": SYNTH_MEAN_STD}
    res = ExperimentResult("classical_consistency", config, records, aggregate(records), checks, list(art.paths))
    art.text("result.json", res.to_json())
    return res


def train_deep_once(train: Dataset, test: Dataset, objective: Objective, seed: int, kind: str = "full",
                    epochs: int = 100, batch_size: int = 256, head_init: str = "narrow",
                    latent_dim: int = 2, hidden: int = HIDDEN):
    """One encoder + LDA head run; returns ``(metrics, encoder, head, trace)``."""
    c = int(max(train.y.max(), test.y.max())) + 1
    enc = Encoder.init([train.dim, hidden, latent_dim], [seed, 10])
    if head_init == "narrow":
        head = synthetic_head_init(c, latent_dim, [seed, 11], kind)
    else:
        head = init_head(c, latent_dim, [seed, 11], kind)
    cfg = TrainConfig(objective=objective, epochs=epochs, batch_size=batch_size, seed=seed)
    enc, head, trace = fit_deep(train, enc, head, cfg)

    z_train = embed(enc, train.x)
    z_test = embed(enc, test.x)
    pred_test = np.argmax(discriminants(head, z_test), axis=-1)
    offsets = cloud_offsets(z_train, train.y, head.means)
    metrics = {
        "seed": seed,
        "train_acc": float(np.mean(np.argmax(discriminants(head, z_train), axis=-1) == train.y)),
        "test_acc": float(np.mean(pred_test == test.y)),
        "det_sigma": head.cov.det(),
        "sigma": head.cov.sigma(),
        "min_mean_dist": trace.records[-1].min_mean_dist if trace.records else float("nan"),
        "ece": head_ece(head, enc, test).ece,
        "max_cloud_offset": float(np.max(offsets)),
        "means_in_clouds": bool(np.all(offsets <= 3.0)),
        "collapsed": trace.collapsed,
        "epochs_completed": len(trace.records),
        "min_trace_sigma": float(trace.column("sigma").min()) if trace.records else float("nan"),
        # epochs in the last 50 where det(Sigma) went up instead of down
        "det_upticks_last50": int(np.sum(np.diff(trace.column("det_sigma")[-51:]) > 0)),
    }
    if objective.kind == "dnll":
        own = discriminants(head, z_train)[np.arange(len(train)), train.y]
        metrics["stationarity_median"] = float(np.median(objective.lam * np.exp(own)))
    return metrics, enc, head, trace


def _write_deep_artifacts(art: _Artifacts, tag: str, enc, head, trace, test: Dataset) -> None:
    art.call(f"{tag}_trace.csv", trace.to_csv)
    art.text(f"{tag}_params.json", json.dumps({"head": head.to_dict(), "encoder": enc.to_dict()}, indent=2))
    art.text(f"{tag}_latent.svg", scatter_svg(embed(enc, test.x), test.y, head.means, title=tag))


def run_deep_comparison(objective: Objective, seeds=DEFAULT_SEEDS, spec: SyntheticSpec | None = None,
                        epochs: int = 100, kind: str = "full", out=None) -> ExperimentResult:
    """Deep LDA on the synthetic task under NLL, CE or DNLL."""
    spec = spec or SyntheticSpec.default()
    art = _Artifacts(out)
    records = []
    for seed in seeds:
        train, test = gen_synthetic(replace(spec, seed=seed))
        metrics, enc, head, trace = train_deep_once(train, test, objective, seed, kind, epochs)
        records.append(metrics)
        _write_deep_artifacts(art, f"deep_{objective.kind}_seed{seed}", enc, head, trace, test)

    n = len(records)
    if objective.kind == "nll":
        hits = sum(r["test_acc"] <= 0.85 and r["det_sigma"] < 1e-6 for r in records)
        checks = {"nll_collapse_majority": hits >= math.ceil(2 * n / 3)}
    elif objective.kind == "ce":
        checks = {
            "ce_test_acc_0.98": all(r["test_acc"] >= 0.98 for r in records),
            "ce_some_mean_outside_cloud": all(not r["means_in_clouds"] for r in records),
        }
    else:
        checks = {
            "dnll_test_acc_0.98": all(r["test_acc"] >= 0.98 for r in records),
            "dnll_means_in_clouds": all(r["means_in_clouds"] for r in records),
        }
    config = {"objective": objective.kind, "lambda": objective.lam, "spec": spec.to_dict(), "seeds": list(seeds),
              "epochs": epochs, "covariance": kind, "hidden": HIDDEN, "init_mean_std": SYNTH_MEAN_STD}
    res = ExperimentResult(f"deep_{objective.kind}", config, records, aggregate(records), checks, list(art.paths))
    art.text("result.json", res.to_json())
    return res


def run_lambda_sweep(lambdas=LAMBDA_GRID, seeds=DEFAULT_SEEDS, spec: SyntheticSpec | None = None,
                     epochs: int = 100, out=None) -> ExperimentResult:
    """DNLL with a spherical head across a grid of lambda values."""
    lambdas = sorted(float(l) for l in lambdas)
    if len(lambdas) < 3 or lambdas[-1] / lambdas[0] < 100:
        raise ValueError("need >= 3 lambda values spanning >= 2 orders of magnitude")
    spec = spec or SyntheticSpec.default()
    art = _Artifacts(out)
    records = []
    per_lambda = {}
    for lam in lambdas:
        rows = []
        for seed in seeds:
            train, test = gen_synthetic(replace(spec, seed=seed))
            metrics, enc, head, trace = train_deep_once(train, test, DNLL(lam), seed, "spherical", epochs,
                                                        head_init="wide")
            metrics["lambda"] = lam
            rows.append(metrics)
            art.call(f"sweep_lambda{lam:g}_seed{seed}_trace.csv", trace.to_csv)
        records.extend(rows)
        per_lambda[f"{lam:g}"] = aggregate(rows)

    mean_sigma = [per_lambda[f"{l:g}"]["sigma"]["mean"] for l in lambdas]
    mean_acc = [per_lambda[f"{l:g}"]["test_acc"]["mean"] for l in lambdas]
    mean_ece = [per_lambda[f"{l:g}"]["ece"]["mean"] for l in lambdas]
    rho = float(spearmanr(lambdas, mean_sigma)[0])
    agg = {
        "per_lambda": per_lambda,
        "spearman_lambda_sigma": rho,
        "accuracy_range": float(max(mean_acc) - min(mean_acc)),
        "ece_range": float(max(mean_ece) - min(mean_ece)),
        # median lam * exp(delta_y) over training points; the gradient identity drives it toward 1
        "stationarity_in_band": {
            f"{l:g}": all(0.1 <= r["stationarity_median"] <= 10.0 for r in records if r["lambda"] == l)
            for l in lambdas
        },
    }
    checks = {
        "spearman_0.9": rho >= 0.9,
        "accuracy_range_2pt": agg["accuracy_range"] <= 0.02,
        "ece_range_3pt": agg["ece_range"] <= 0.03,
    }
    config = {"lambdas": lambdas, "seeds": list(seeds), "spec": spec.to_dict(), "epochs": epochs,
              "covariance": "spherical"}
    res = ExperimentResult("lambda_sweep", config, records, agg, checks, list(art.paths))
    art.text("result.json", res.to_json())
    return res


def softmax_network(enc: Encoder, num_classes: int, seed) -> Encoder:
    """The given encoder followed by an affine map to class logits."""
    rng = np.random.default_rng(seed)
    d = enc.latent_dim
    bound = 1.0 / math.sqrt(d)
    affine = Layer(rng.uniform(-bound, bound, (num_classes, d)), rng.uniform(-bound, bound, num_classes), "identity")
    layers = [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in enc.layers]
    return Encoder(layers + [affine])


def bayes_oracle_ece(spec: SyntheticSpec, n: int = BAYES_ORACLE_N, seed=0) -> float:
    """ECE of the ground-truth posterior on fresh samples; calibrated up to sampling noise."""
    truth = spec.truth()
    data = sample(truth, n, [seed, 99])
    post = posterior(truth, data.x)
    return calibration_report(post.max(axis=1), post.argmax(axis=1) == data.y).ece


def run_calibration_comparison(seeds=DEFAULT_SEEDS, spec: SyntheticSpec | None = None, epochs: int = 100,
                               lam: float = 0.01, data: tuple[Dataset, Dataset] | None = None,
                               out=None) -> ExperimentResult:
    """ECE of a DNLL-trained LDA head vs an affine softmax head on overlapping classes."""
    spec = spec or SyntheticSpec.overlapping()
    art = _Artifacts(out)
    records = []
    for seed in seeds:
        train, test = data if data is not None else gen_synthetic(replace(spec, seed=seed))
        c = int(max(train.y.max(), test.y.max())) + 1
        metrics, enc, head, trace = train_deep_once(train, test, DNLL(lam), seed, "spherical", epochs,
                                                    head_init="wide")
        lda_report = head_ece(head, enc, test)

        net = softmax_network(Encoder.init([train.dim, HIDDEN, 2], [seed, 10]), c, [seed, 12])
        net, _ = fit_softmax(train, net, TrainConfig(objective=CROSS_ENTROPY, epochs=epochs, seed=seed))
        probs = softmax(embed(net, test.x))
        sm_report = calibration_report(probs.max(axis=1), probs.argmax(axis=1) == test.y)

        records.append({
            "seed": seed,
            "dnll_ece": lda_report.ece,
            "dnll_acc": lda_report.overall_accuracy,
            "dnll_mean_conf": lda_report.mean_confidence,
            "softmax_ece": sm_report.ece,
            "softmax_acc": sm_report.overall_accuracy,
            "softmax_mean_conf": sm_report.mean_confidence,
            "sigma": head.cov.sigma(),
        })
        art.text(f"calib_dnll_seed{seed}.json", lda_report.to_json())
        art.call(f"calib_dnll_seed{seed}_reliability.csv", lda_report.to_csv)
        art.text(f"calib_softmax_seed{seed}.json", sm_report.to_json())
        art.call(f"calib_softmax_seed{seed}_reliability.csv", sm_report.to_csv)

    agg = aggregate(records)
    oracle = bayes_oracle_ece(spec, seed=seeds[0] if seeds else 0) if data is None else float("nan")
    agg["bayes_oracle_ece"] = oracle
    checks = {"dnll_ece_below_softmax": agg["dnll_ece"]["mean"] < agg["softmax_ece"]["mean"]}
    if data is None:
        checks["bayes_oracle_ece_0.02"] = oracle < 0.02
    config = {"spec": spec.to_dict(), "seeds": list(seeds), "epochs": epochs, "lambda": lam,
              "covariance": "spherical", "bayes_oracle_n": BAYES_ORACLE_N}
    res = ExperimentResult("calibration", config, records, agg, checks, list(art.paths))
    art.text("result.json", res.to_json())
    return res
