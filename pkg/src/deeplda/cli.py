"""Command-line entry point: ``deeplda <command> ...``.

Every command that takes ``--out`` writes a ``manifest.json`` there recording
the command, its configuration, the seed and the artifacts produced. Outputs
contain no timestamps or absolute paths, so reruns are byte-identical.

Exit codes: 0 success, 2 a check failed, 3 a training run was cut short by
covariance collapse.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .analysis import overlap_bound_check
from .dataset import Dataset
from .lda_head import LdaParams, closed_form_mle, discriminants
from .losses import Objective
from .gradcheck import run_grad_check
from .svg import scatter_svg
from .train import Encoder, TrainConfig, embed, fit_classical, fit_deep, init_head

EXIT_OK, EXIT_CHECK_FAILED, EXIT_COLLAPSE = 0, 2, 3


def _dump(obj) -> str:
    return json.dumps(ex._jsonable(obj), indent=2, sort_keys=True) + "\n"


def _write_manifest(out: Path, command: str, config: dict, seed, artifacts: list[str], status: int) -> None:
    manifest = {"command": command, "config": config, "seed": seed, "artifacts": sorted(artifacts),
                "exit_code": status}
    (out / "manifest.json").write_text(_dump(manifest))


def _load_spec(data_dir: Path):
    path = data_dir / "spec.json"
    return ex.SyntheticSpec.from_dict(json.loads(path.read_text())) if path.exists() else None


def _load_data(data_dir: Path) -> tuple[Dataset, Dataset]:
    return Dataset.from_csv(data_dir / "train.csv"), Dataset.from_csv(data_dir / "test.csv")


def _num_classes(*sets: Dataset) -> int:
    return int(max(int(d.y.max()) for d in sets)) + 1


def _config(args, drop=("func", "out", "command")) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in drop}


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    if args.spec:
        spec = ex.SyntheticSpec.from_dict(json.loads(Path(args.spec).read_text()))
    else:
        spec = ex.SyntheticSpec.overlapping() if args.preset == "overlapping" else ex.SyntheticSpec.default()
    if args.seed is not None:
        spec.seed = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, test = ex.gen_synthetic(spec)
    train.to_csv(out / "train.csv")
    test.to_csv(out / "test.csv")
    (out / "spec.json").write_text(_dump(spec.to_dict()))
    _write_manifest(out, "gen-data", {"spec": spec.to_dict()}, spec.seed, ["train.csv", "test.csv", "spec.json"], 0)
    return EXIT_OK


def cmd_fit_classical(args) -> int:
    data_dir, out = Path(args.data), Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, test = _load_data(data_dir)
    c = _num_classes(train, test)
    init = ex.synthetic_head_init(c, train.dim, [args.seed, 11], args.covariance)
    cfg = TrainConfig(objective=Objective.parse(args.objective), epochs=args.epochs, batch_size=args.batch,
                      learning_rate=args.lr, seed=args.seed)
    head, trace = fit_classical(train, init, cfg)

    metrics = {
        "train_acc": float(np.mean(np.argmax(discriminants(head, train.x), axis=-1) == train.y)),
        "test_acc": float(np.mean(np.argmax(discriminants(head, test.x), axis=-1) == test.y)),
        "det_sigma": head.cov.det(),
        "collapsed": trace.collapsed,
    }
    oracle = closed_form_mle(train.x, train.y, c, args.covariance)
    metrics["vs_closed_form_mean"] = float(np.linalg.norm(head.means - oracle.means, axis=1).max())
    metrics["vs_closed_form_cov"] = float(np.linalg.norm(head.cov.matrix() - oracle.cov.matrix()))
    spec = _load_spec(data_dir)
    if spec is not None:
        metrics.update(ex.recovery_errors(head, spec.truth()))

    trace.to_csv(out / "trace.csv")
    (out / "params.json").write_text(head.to_json() + "\n")
    (out / "metrics.json").write_text(_dump(metrics))
    status = EXIT_COLLAPSE if trace.collapsed else EXIT_OK
    _write_manifest(out, "fit-classical", {**_config(args), "train": cfg.to_dict()}, args.seed,
                    ["trace.csv", "params.json", "metrics.json"], status)
    return status


def cmd_fit_deep(args) -> int:
    data_dir, out = Path(args.data), Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, test = _load_data(data_dir)
    c = _num_classes(train, test)
    objective = Objective.parse(args.objective, args.lam)
    enc = Encoder.init([train.dim, args.hidden, args.latent_dim], [args.seed, 10])
    if args.head_init == "narrow":
        head = ex.synthetic_head_init(c, args.latent_dim, [args.seed, 11], args.covariance)
    else:
        head = init_head(c, args.latent_dim, [args.seed, 11], args.covariance)
    cfg = TrainConfig(objective=objective, epochs=args.epochs, batch_size=args.batch, learning_rate=args.lr,
                      seed=args.seed)
    enc, head, trace = fit_deep(train, enc, head, cfg)

    z_test = embed(enc, test.x)
    offsets = ex.cloud_offsets(embed(enc, train.x), train.y, head.means)
    metrics = {
        "train_acc": trace.records[-1].train_acc if trace.records else float("nan"),
        "test_acc": float(np.mean(np.argmax(discriminants(head, z_test), axis=-1) == test.y)),
        "det_sigma": head.cov.det(),
        "sigma": head.cov.sigma(),
        "ece": ex.head_ece(head, enc, test).ece,
        "max_cloud_offset": float(np.max(offsets)),
        "collapsed": trace.collapsed,
        "failed_epoch": trace.failed_epoch,
        "epochs_completed": len(trace.records),
    }
    trace.to_csv(out / "trace.csv")
    (out / "params.json").write_text(_dump({"head": head.to_dict(), "encoder": enc.to_dict()}))
    (out / "metrics.json").write_text(_dump(metrics))
    (out / "latent.svg").write_text(scatter_svg(z_test, test.y, head.means, title=f"{objective} seed {args.seed}"))
    status = EXIT_COLLAPSE if trace.collapsed else EXIT_OK
    _write_manifest(out, "fit-deep", {**_config(args), "train": cfg.to_dict()}, args.seed,
                    ["trace.csv", "params.json", "metrics.json", "latent.svg"], status)
    return status


def _seed_list(n: int) -> list[int]:
    if n < 1:
        raise SystemExit("--seeds must be >= 1")
    return list(range(n))


def _finish_experiment(res: ex.ExperimentResult, out: Path, command: str, args) -> int:
    status = EXIT_OK if res.passed else EXIT_CHECK_FAILED
    _write_manifest(out, command, _config(args), _seed_list(args.seeds), res.artifacts + ["result.json"], status)
    print(json.dumps({"experiment": res.experiment, "checks": res.checks}, indent=2, sort_keys=True))
    return status


def cmd_sweep_lambda(args) -> int:
    grid = [float(v) for v in args.grid.split(",") if v.strip()]
    out = Path(args.out)
    spec = ex.SyntheticSpec.from_dict(json.loads(Path(args.spec).read_text())) if args.spec else None
    res = ex.run_lambda_sweep(grid, _seed_list(args.seeds), spec, args.epochs, out)
    return _finish_experiment(res, out, "sweep-lambda", args)


def cmd_calibrate(args) -> int:
    out = Path(args.out)
    data = spec = None
    if args.data:
        data = _load_data(Path(args.data))
        spec = _load_spec(Path(args.data))
    res = ex.run_calibration_comparison(_seed_list(args.seeds), spec, args.epochs, args.lam, data, out)
    return _finish_experiment(res, out, "calibrate", args)


def cmd_analyze_mixture(args) -> int:
    model = LdaParams.from_json(Path(args.params).read_text())
    data = LdaParams.from_json(Path(args.against).read_text()) if args.against else model
    report = overlap_bound_check(data, model, args.mc_samples, args.seed)
    text = _dump(report.__dict__)
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "overlap.json").write_text(text)
        _write_manifest(out, "analyze-mixture", _config(args), args.seed, ["overlap.json"],
                        EXIT_OK if report.bound_satisfied else EXIT_CHECK_FAILED)
    return EXIT_OK if report.bound_satisfied else EXIT_CHECK_FAILED


def cmd_grad_check(args) -> int:
    report = run_grad_check(args.trials, args.seed)
    text = _dump(report.to_dict())
    sys.stdout.write(text)
    status = EXIT_OK if report.passed else EXIT_CHECK_FAILED
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "gradcheck.json").write_text(text)
        _write_manifest(out, "grad-check", _config(args), args.seed, ["gradcheck.json"], status)
    return status


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deeplda", description="Deep LDA training and analysis tools.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="sample a synthetic train/test split")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--spec", help="JSON file with SyntheticSpec fields")
    src.add_argument("--preset", choices=("default", "overlapping"), default="default")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("fit-classical", help="fit an LDA head directly on the inputs")
    s.add_argument("--objective", choices=("nll", "ce"), required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--batch", type=int, default=256)
    s.add_argument("--lr", type=float, default=ex.CLASSICAL_LR)
    s.add_argument("--covariance", choices=("spherical", "diagonal", "full"), default="full")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_classical)

    s = sub.add_parser("fit-deep", help="train an encoder with an LDA head")
    s.add_argument("--objective", choices=("nll", "ce", "dnll"), required=True)
    s.add_argument("--lambda", dest="lam", type=float, default=0.01)
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--batch", type=int, default=256)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--hidden", type=int, default=ex.HIDDEN)
    s.add_argument("--latent-dim", type=int, default=2)
    s.add_argument("--covariance", choices=("spherical", "diagonal", "full"), default="full")
    s.add_argument("--head-init", choices=("narrow", "wide"), default="narrow",
                   help="means ~ N(0, 0.1^2) (narrow) or N(0, 36/(2d)) (wide)")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_deep)

    s = sub.add_parser("sweep-lambda", help="DNLL spherical-head sweep over lambda")
    s.add_argument("--grid", default="1e-4,1e-3,1e-2,1e-1,1")
    s.add_argument("--seeds", type=int, default=3)
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--spec")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep_lambda)

    s = sub.add_parser("calibrate", help="ECE of DNLL vs softmax heads")
    s.add_argument("--data", help="directory from gen-data; default samples the overlapping preset per seed")
    s.add_argument("--seeds", type=int, default=3)
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--lambda", dest="lam", type=float, default=0.01)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("analyze-mixture", help="overlap bound report for LdaParams JSON")
    s.add_argument("--params", required=True)
    s.add_argument("--against")
    s.add_argument("--mc-samples", type=int, default=200_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_analyze_mixture)

    s = sub.add_parser("grad-check", help="finite-difference gradient suite")
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    args.__dict__.pop("verbose")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
