import json

import numpy as np
import pytest

from deeplda.cli import main
from deeplda.lda_head import make_params


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--preset", "default", "--seed", "0", "--out", str(out)]) == 0
    return out


def test_gen_data(data_dir):
    header = (data_dir / "train.csv").read_text().splitlines()[0]
    assert header == "x1,x2,y"
    manifest = json.loads((data_dir / "manifest.json").read_text())
    assert manifest["command"] == "gen-data" and "train.csv" in manifest["artifacts"]


def test_gen_data_from_spec(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"num_classes": 2, "input_dim": 1, "priors": [0.5, 0.5], "means": [[0.0], [3.0]],
                                "cov": [[1.0]], "n_train": 50, "n_test": 10, "seed": 3}))
    assert main(["gen-data", "--spec", str(spec), "--out", str(tmp_path / "d")]) == 0
    assert len((tmp_path / "d" / "test.csv").read_text().splitlines()) == 11


def test_fit_classical(data_dir, tmp_path):
    assert main(["fit-classical", "--objective", "nll", "--data", str(data_dir), "--epochs", "2",
                 "--out", str(tmp_path)]) == 0
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert {"mean_err", "cov_err", "vs_closed_form_mean"} <= set(metrics)


def test_fit_deep(data_dir, tmp_path):
    assert main(["fit-deep", "--objective", "dnll", "--lambda", "0.01", "--epochs", "1", "--batch", "512",
                 "--data", str(data_dir), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "latent.svg").read_text().startswith("<svg")
    assert len((tmp_path / "trace.csv").read_text().splitlines()) == 2


def test_fit_deep_collapse_exit_code(data_dir, tmp_path, monkeypatch):
    import deeplda.cli as cli

    real = cli.fit_deep

    def collapsing(*args, **kw):
        enc, head, trace = real(*args, **kw)
        trace.collapsed, trace.failed_epoch = True, len(trace.records)
        return enc, head, trace

    monkeypatch.setattr(cli, "fit_deep", collapsing)
    code = main(["fit-deep", "--objective", "nll", "--epochs", "1", "--batch", "1024",
                 "--data", str(data_dir), "--out", str(tmp_path)])
    assert code == 3
    assert json.loads((tmp_path / "manifest.json").read_text())["exit_code"] == 3


def test_analyze_mixture(tmp_path, capsys):
    p = make_params([0.5, 0.5], [[0.0, 0.0], [3.0, 0.0]], np.eye(2))
    q = make_params([0.5, 0.5], [[0.2, 0.0], [3.0, 0.5]], 1.3 * np.eye(2))
    (tmp_path / "p.json").write_text(p.to_json())
    (tmp_path / "q.json").write_text(q.to_json())
    code = main(["analyze-mixture", "--params", str(tmp_path / "p.json"), "--against", str(tmp_path / "q.json"),
                 "--mc-samples", "20000", "--seed", "1"])
    report = json.loads(capsys.readouterr().out)
    assert code == 0 and report["bound_satisfied"]


def test_grad_check_small(tmp_path, capsys):
    assert main(["grad-check", "--trials", "2", "--seed", "3", "--out", str(tmp_path)]) == 0
    assert json.loads(capsys.readouterr().out)["passed"]


def test_bad_args():
    with pytest.raises(SystemExit):
        main(["fit-deep", "--objective", "mse", "--data", "x", "--out", "y"])
