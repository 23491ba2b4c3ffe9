import time

import numpy as np
import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, d, jitter=0.5):
    a = rng.normal(size=(d, d))
    return a @ a.T + jitter * np.eye(d)


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


# Full-protocol experiment runs, shared by the experiment and acceptance tests.


@pytest.fixture(scope="session")
def classical_run(tmp_path_factory):
    from deeplda.experiments import run_classical_consistency
    return timed(run_classical_consistency, out=tmp_path_factory.mktemp("classical"))


@pytest.fixture(scope="session")
def deep_runs(tmp_path_factory):
    from deeplda.experiments import run_deep_comparison
    from deeplda.losses import CROSS_ENTROPY, DNLL, NLL
    out = {}
    for obj in (NLL, CROSS_ENTROPY, DNLL(0.01)):
        out[obj.kind] = timed(run_deep_comparison, obj, out=tmp_path_factory.mktemp(f"deep_{obj.kind}"))
    return out


@pytest.fixture(scope="session")
def sweep_run(tmp_path_factory):
    from deeplda.experiments import run_lambda_sweep
    return timed(run_lambda_sweep, out=tmp_path_factory.mktemp("sweep"))


@pytest.fixture(scope="session")
def calibration_run(tmp_path_factory):
    from deeplda.experiments import run_calibration_comparison
    return timed(run_calibration_comparison, out=tmp_path_factory.mktemp("calibration"))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
