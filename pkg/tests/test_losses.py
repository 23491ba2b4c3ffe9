import numpy as np
import pytest

from deeplda.errors import EmptyBatch, InvalidLabel, NegativeLambda, NonFiniteLoss
from deeplda.gradcheck import head_check, random_head
from deeplda.lda_head import CovarianceParam, LdaParams, discriminants, make_params, mixture_density
from deeplda.losses import (
    CROSS_ENTROPY,
    DNLL,
    NLL,
    Objective,
    batch_loss,
    cross_entropy,
    dnll,
    dnll_grad_wrt_discriminants,
    loss_from_discriminants,
    nll,
    softmax_cross_entropy,
)
from deeplda.math_core import LOG_2PI, softmax


def test_nll_examples():
    one = make_params([1.0], [[1.0, 2.0]], np.eye(2))
    assert nll(one, np.array([1.0, 2.0]), 0).value == pytest.approx(LOG_2PI)
    three = make_params([1 / 3] * 3, [[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]], np.eye(2))
    assert nll(three, np.array([3.0, 0.0]), 1).value == pytest.approx(np.log(3.0) + LOG_2PI)


def test_nll_is_negative_log_joint(rng):
    p = random_head(rng, 3, 2, "full")
    z = rng.normal(size=2)
    joint = p.priors()[2] * mixture_density(LdaParams([0.0], p.means[2:], p.cov), z)
    assert nll(p, z, 2).value == pytest.approx(-np.log(joint), rel=1e-12)


def test_cross_entropy_examples(rng):
    p = make_params([0.5, 0.5], [[-1.0, 0.0], [1.0, 0.0]], np.eye(2))
    assert cross_entropy(p, np.array([0.0, 3.0]), 1).value == pytest.approx(np.log(2.0))
    far = make_params([0.5, 0.5], [[0.0, 0.0], [40.0, 0.0]], np.eye(2))
    assert cross_entropy(far, np.zeros(2), 0).value < 1e-12


def test_ce_delta_gradient_and_shift_invariance(rng):
    h = 1e-6
    for _ in range(20):
        delta = rng.normal(size=4)
        y = np.array([int(rng.integers(4))])
        f = lambda d: float(loss_from_discriminants(d[None, :], y, CROSS_ENTROPY)[0])
        fd = np.array([(f(delta + h * e) - f(delta - h * e)) / (2 * h) for e in np.eye(4)])
        analytic = softmax(delta) - np.eye(4)[y[0]]
        np.testing.assert_allclose(fd, analytic, atol=1e-9)
        assert abs(f(delta + 3.7) - f(delta)) < 1e-12


def test_dnll_examples(rng):
    p = random_head(rng, 3, 2, "full")
    z = rng.normal(size=2)
    assert dnll(p, z, 1, 0.0).value == pytest.approx(-discriminants(p, z)[1], rel=1e-14)
    # delta = (0, 0, 0) needs pi_c = |Sigma|^{1/2} at z = mu_c for each c: use coincident means
    zero = LdaParams(np.zeros(3), np.zeros((3, 2)), CovarianceParam.spherical((1 / 3) ** 0.5, 2))
    np.testing.assert_allclose(discriminants(zero, np.zeros(2)), 0.0, atol=1e-15)
    assert dnll(zero, np.zeros(2), 1, 1.0).value == pytest.approx(3.0)


def test_dnll_decomposition(rng):
    for _ in range(20):
        p = random_head(rng, 4, 3, "full")
        z = rng.normal(size=3)
        y = int(rng.integers(4))
        lam = float(rng.uniform(0, 2))
        lhs = dnll(p, z, y, lam).value
        rhs = nll(p, z, y).value + lam * (2 * np.pi) ** 1.5 * mixture_density(p, z) - 1.5 * LOG_2PI
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


def test_dnll_zero_lambda_matches_nll_up_to_constant(rng):
    p = random_head(rng, 3, 2, "diagonal")
    z = rng.normal(size=(10, 2))
    y = rng.integers(0, 3, 10)
    a = batch_loss(p, z, y, DNLL(0.0))
    b = batch_loss(p, z, y, NLL)
    assert a.value == pytest.approx(b.value - LOG_2PI, rel=1e-14)
    np.testing.assert_allclose(a.grad_embeddings, b.grad_embeddings, rtol=1e-14)


def test_dnll_delta_gradient():
    np.testing.assert_array_equal(dnll_grad_wrt_discriminants(np.zeros(3), 1, 0.0), [0.0, -1.0, 0.0])
    np.testing.assert_array_equal(dnll_grad_wrt_discriminants(np.zeros(3), 1, 1.0), [1.0, 0.0, 1.0])
    rng = np.random.default_rng(0)
    h = 1e-6
    for _ in range(20):
        delta = rng.normal(size=3)
        obj = DNLL(0.05)
        f = lambda d: float(loss_from_discriminants(d[None, :], np.array([2]), obj)[0])
        fd = np.array([(f(delta + h * e) - f(delta - h * e)) / (2 * h) for e in np.eye(3)])
        np.testing.assert_allclose(dnll_grad_wrt_discriminants(delta, 2, 0.05), fd, atol=1e-8)


def test_errors(rng):
    p = random_head(rng, 3, 2, "full")
    with pytest.raises(InvalidLabel):
        nll(p, np.zeros(2), 3)
    with pytest.raises(NegativeLambda):
        DNLL(-0.1)
    with pytest.raises(NegativeLambda):
        dnll_grad_wrt_discriminants(np.zeros(3), 0, -1.0)
    with pytest.raises(EmptyBatch):
        batch_loss(p, np.zeros((0, 2)), np.zeros(0, dtype=int), NLL)
    tiny = LdaParams(np.zeros(2), [[0.0, 0.0], [1.0, 0.0]], CovarianceParam.spherical(1e-200, 2))
    with pytest.raises(NonFiniteLoss):
        batch_loss(tiny, np.zeros((1, 2)), np.array([0]), DNLL(0.01))


def test_batch_semantics(rng):
    p = random_head(rng, 3, 2, "full")
    z = rng.normal(size=2)
    single = dnll(p, z, 2, 0.1)
    one = batch_loss(p, z[None, :], np.array([2]), DNLL(0.1))
    assert one.value == single.value
    two = batch_loss(p, np.stack([z, z]), np.array([2, 2]), DNLL(0.1))
    assert two.value == pytest.approx(single.value, rel=1e-15)
    np.testing.assert_allclose(two.grad_params.means, single.grad_params.means, rtol=1e-14)


def test_empirical_penalty_tracks_mean_density(rng):
    p = random_head(rng, 3, 2, "full")
    z = rng.normal(size=(64, 2))
    y = rng.integers(0, 3, 64)
    lam = 0.3
    penalty = batch_loss(p, z, y, DNLL(lam)).value - batch_loss(p, z, y, DNLL(0.0)).value
    assert penalty == pytest.approx(lam * 2 * np.pi * np.mean(mixture_density(p, z)), rel=1e-10)


@pytest.mark.parametrize("kind", ["spherical", "diagonal", "full"])
@pytest.mark.parametrize("objective", [NLL, CROSS_ENTROPY, DNLL(0.01)], ids=str)
def test_gradients_match_finite_differences(kind, objective):
    rng = np.random.default_rng(hash((kind, objective.kind)) % 2**32)
    for _ in range(10):
        c, d = int(rng.integers(2, 6)), int(rng.integers(1, 5))
        p = random_head(rng, c, d, kind)
        z = rng.normal(size=(1, d))
        assert head_check(p, z, rng.integers(0, c, 1), objective) < 1e-6


def test_batch_gradient_spot_check(rng):
    p = random_head(rng, 4, 3, "full")
    z = rng.normal(size=(64, 3))
    y = rng.integers(0, 4, 64)
    assert head_check(p, z, y, DNLL(0.01)) < 1e-5


def test_objective_parse():
    assert Objective.parse("DNLL", 0.5) == DNLL(0.5)
    assert Objective.parse("ce") == CROSS_ENTROPY
    assert str(DNLL(0.01)) == "dnll(lambda=0.01)"
    with pytest.raises(ValueError):
        Objective.parse("mse")


def test_softmax_cross_entropy():
    v, g = softmax_cross_entropy(np.zeros((2, 4)), np.array([0, 3]))
    assert v == pytest.approx(np.log(4.0))
    np.testing.assert_allclose(g.sum(axis=1), 0.0, atol=1e-15)
