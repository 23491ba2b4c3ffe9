import json
import math

import numpy as np
import pytest

from deeplda.analysis import (
    CalibrationReport,
    QuadratureGrid,
    calibration_report,
    cross_overlap_closed_form,
    information_potential,
    information_potential_pairwise,
    kl_marginalization_check,
    kl_mc_estimate,
    linf_bound,
    mc_cross_overlap,
    mc_information_potential,
    mc_mean_model_density,
    overlap_bound_check,
)
from deeplda.errors import ConfidenceOutOfRange, DimensionMismatch, EmptyDataset, GridTooCoarse, LengthMismatch
from deeplda.gradcheck import random_head
from deeplda.lda_head import CovarianceParam, LdaParams, make_params, mixture_density, sample


def test_information_potential_examples():
    one = make_params([1.0], [[0.0]], [[1.0]])
    assert information_potential(one) == pytest.approx(1 / (2 * math.sqrt(math.pi)), rel=1e-12)
    merged = make_params([0.3, 0.7], [[0.0], [0.0]], [[1.0]])
    assert information_potential(merged) == pytest.approx(information_potential(one), rel=1e-12)


def test_information_potential_two_paths(rng):
    for _ in range(30):
        p = random_head(rng, int(rng.integers(1, 6)), int(rng.integers(1, 4)), "full")
        assert information_potential(p) == pytest.approx(information_potential_pairwise(p), rel=1e-12)


def test_information_potential_mc(rng):
    p = random_head(rng, 3, 2, "full")
    est, se = mc_information_potential(p, 200_000, 1)
    assert abs(est - information_potential(p)) < 3 * se


def test_information_potential_scaling():
    # coincident means: halving sigma multiplies C by 2^d
    for d in (1, 2, 3):
        a = LdaParams(np.zeros(2), np.zeros((2, d)), CovarianceParam.spherical(1.0, d))
        b = LdaParams(np.zeros(2), np.zeros((2, d)), CovarianceParam.spherical(0.5, d))
        assert information_potential(b) / information_potential(a) == pytest.approx(2.0 ** d, rel=1e-12)


def test_information_potential_repulsion():
    vals = [information_potential(make_params([0.5, 0.5], [[0.0, 0.0], [r, 0.0]], np.eye(2)))
            for r in np.linspace(0, 6, 13)]
    assert np.all(np.diff(vals) < 0)


def test_cross_overlap(rng):
    p = random_head(rng, 3, 2, "full")
    q = random_head(rng, 2, 2, "diagonal")
    assert cross_overlap_closed_form(p, p) == pytest.approx(information_potential(p), rel=1e-12)
    assert cross_overlap_closed_form(p, q) == pytest.approx(cross_overlap_closed_form(q, p), rel=1e-12)
    a = make_params([1.0], [[0.0]], [[1.0]])
    b = make_params([1.0], [[10.0]], [[1.0]])
    ref = math.exp(-100 / 4) / math.sqrt(4 * math.pi)
    assert cross_overlap_closed_form(a, b) == pytest.approx(ref, rel=1e-10)
    assert 3e-12 < ref < 4e-12
    est, se = mc_cross_overlap(p, q, 200_000, 3)
    assert abs(est - cross_overlap_closed_form(p, q)) < 3 * se
    with pytest.raises(DimensionMismatch):
        cross_overlap_closed_form(p, random_head(rng, 2, 3, "full"))


def test_mc_mean_model_density():
    p = make_params([1.0], [[1.0, 2.0]], 0.25 * np.eye(2))
    est, se = mc_mean_model_density(np.array([[1.0, 2.0]]), p)
    assert est == pytest.approx(1 / (2 * np.pi * 0.25))
    z = sample(p, 1000, 0).x
    e1, s1 = mc_mean_model_density(z, p)
    e2, s2 = mc_mean_model_density(np.concatenate([z, z]), p)
    assert e2 == pytest.approx(e1, rel=1e-14)
    # ddof=1 makes the scaling exact only asymptotically
    assert s2 / s1 == pytest.approx(1 / math.sqrt(2), rel=1e-3)
    with pytest.raises(EmptyDataset):
        mc_mean_model_density(np.zeros((0, 2)), p)


def test_linf_bound(rng):
    assert linf_bound(make_params([1.0], [[0.0, 0.0]], np.eye(2))) == pytest.approx(1 / (2 * np.pi))
    single = make_params([1.0], [[1.0, -1.0]], [[2.0, 0.5], [0.5, 1.0]])
    assert mixture_density(single, single.means[0]) == pytest.approx(linf_bound(single), rel=1e-12)
    for _ in range(5):
        p = random_head(rng, 3, 2, "full")
        z = rng.normal(0, 3, (100_000, 2))
        assert mixture_density(p, z).max() <= linf_bound(p)


def test_kl_estimates():
    p = make_params([0.5, 0.5], [[0.0], [3.0]], [[1.0]])
    est, se = kl_mc_estimate(p, p, 10_000, 0)
    assert abs(est) <= 3 * se + 1e-15
    a = make_params([1.0], [[0.0]], [[1.0]])
    b = make_params([1.0], [[1.0]], [[1.0]])
    est, se = kl_mc_estimate(a, b, 200_000, 0)
    assert abs(est - 0.5) < 3 * se
    assert kl_mc_estimate(a, b, 2000, 9) == kl_mc_estimate(a, b, 2000, 9)
    with pytest.raises(ValueError):
        kl_mc_estimate(a, b, 10, 0)


def test_overlap_bound_identical_and_random(rng):
    p = random_head(rng, 3, 2, "full")
    r = overlap_bound_check(p, p, 20_000, 0)
    assert r.lhs == pytest.approx(0.0, abs=1e-15)
    assert r.bound_satisfied
    assert r.max_density_seen <= r.linf_bound
    doc = json.loads(r.to_json())
    assert set(doc) >= {"closed_form_C", "mc_estimate_cross", "mc_std_err", "linf_bound", "kl_estimate",
                        "bound_rhs", "bound_satisfied"}


def test_kl_marginalization_examples():
    p = make_params([0.4, 0.6], [[-1.0], [2.0]], [[0.7]])
    joint, marg = kl_marginalization_check(p, p)
    assert abs(joint) < 1e-8 and abs(marg) < 1e-8
    # swapping the class means keeps the marginal but changes the joint
    q = make_params([0.5, 0.5], [[-1.0], [1.0]], [[1.0]])
    qs = make_params([0.5, 0.5], [[1.0], [-1.0]], [[1.0]])
    joint, marg = kl_marginalization_check(q, qs)
    assert abs(marg) < 1e-8 and joint > 0.5
    with pytest.raises(GridTooCoarse):
        kl_marginalization_check(p, p, QuadratureGrid(-10, 10, 500))


def test_calibration_examples():
    assert calibration_report(np.ones(10), np.ones(10, bool)).ece == 0.0
    assert calibration_report(np.ones(10), np.arange(10) % 2 == 0).ece == pytest.approx(0.5)
    rep = calibration_report(np.full(10, 0.55), np.arange(10) < 9)
    assert sum(b.count > 0 for b in rep.bins) == 1
    assert rep.ece == pytest.approx(0.35)


def test_calibration_boundaries():
    rep = calibration_report(np.array([0.1, 0.2, 1.0, 0.0]), np.ones(4, bool))
    counts = [b.count for b in rep.bins]
    assert counts[1] == 1 and counts[2] == 1 and counts[9] == 1 and counts[0] == 1


def test_calibration_invariants(rng, tmp_path):
    conf = rng.uniform(0, 1, 5000)
    corr = rng.uniform(0, 1, 5000) < conf
    rep = calibration_report(conf, corr)
    assert sum(b.count for b in rep.bins) == 5000
    assert abs(rep.ece - rep.ece_from_bins()) < 1e-12
    assert 0 <= rep.ece <= 1
    rep.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "bin_low,bin_high,count,conf,acc,gap" and len(lines) == 11
    assert json.loads(rep.to_json())["n"] == 5000


def test_calibration_errors():
    with pytest.raises(LengthMismatch):
        calibration_report([0.5, 0.5], [True])
    with pytest.raises(ConfidenceOutOfRange):
        calibration_report([1.5], [True])
