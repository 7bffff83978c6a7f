import numpy as np
import pytest

from imblimit.fit import SolverOptions, fit
from imblimit.dataset import LabeledDataset
from imblimit.limits import DiscreteDistribution, Gaussian
from imblimit.upsample import sample_fstar, smote, upsampling_equivalence_check
from imblimit.weights import make_weight


def test_fstar_gaussian_moments():
    g = Gaussian([0.0, 1.0], [[1.0, 0.3], [0.3, 2.0]])
    beta = np.array([0.5, -0.25])
    x = sample_fstar(g, beta, 200_000, seed=1)
    assert np.allclose(x.mean(0), g.mean + g.cov @ beta, atol=0.02)
    assert np.allclose(np.cov(x, rowvar=False), g.cov, atol=0.03)


def test_fstar_discrete_probabilities():
    d = DiscreteDistribution([[0.0], [1.0]], [0.5, 0.5])
    x = sample_fstar(d, [np.log(3)], 100_000, seed=2)
    assert x.mean() == pytest.approx(0.75, abs=0.01)


def test_fstar_sample_ess_guard():
    x = np.random.default_rng(0).normal(size=(1000, 1))
    assert sample_fstar(x, [0.5], 10, seed=0).shape == (10, 1)
    with pytest.raises(ValueError, match="effective sample size"):
        sample_fstar(x, [20.0], 10, seed=0)


def test_fstar_rejects_bad_m():
    with pytest.raises(ValueError):
        sample_fstar(Gaussian([0.0], [[1.0]]), [0.5], 0)


@pytest.mark.parametrize("pi1", [0.05, 0.2, 0.5])
def test_equivalence_quadrature_residual(pi1):
    chk = upsampling_equivalence_check(make_weight("logistic"), Gaussian([0.0], [[1.0]]), [0.5], pi1)
    assert chk.method == "quadrature"
    assert chk.beta_star[0] == pytest.approx(0.5)
    assert chk.foc_residual <= 1e-10


def test_equivalence_two_dims_and_sample_route():
    g = Gaussian([0.0, 0.0], [[1.0, 0.4], [0.4, 1.5]])
    q = upsampling_equivalence_check(make_weight("polyleft:2"), g, [0.6, -0.4], 0.3, nodes=30)
    assert q.foc_residual <= 1e-10
    x = np.random.default_rng(4).normal(size=(50_000, 1))
    s = upsampling_equivalence_check(make_weight("logistic"), x, [0.3], 0.2)
    assert s.method == "sample"
    # the law is the sample itself, so the residual is a solver residual, not noise
    assert s.foc_residual <= 1e-8


def test_equivalence_requires_subexponential():
    with pytest.raises(ValueError):
        upsampling_equivalence_check(make_weight("exp:0.5"), Gaussian([0.0], [[1.0]]), [0.5], 0.2)


def test_fit_on_fstar_bernoulli_tilt():
    F0 = DiscreteDistribution([[0.0], [1.0]], [0.5, 0.5])
    beta = np.log(3)
    rng = np.random.default_rng(5)
    maj = F0.atoms[rng.choice(2, 40_000)]
    mino = sample_fstar(F0, [beta], 10_000, seed=6)
    res = fit(make_weight("logistic"), LabeledDataset.from_classes(mino, maj), SolverOptions(check_surrounding=False))
    assert res.beta[0] == pytest.approx(beta, abs=0.06)


def test_smote_segments():
    x = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0]])
    out = smote(x, k=1, m=500, seed=0)
    assert out.shape == (500, 2)
    # each synthetic row lies on a segment from a row to its nearest neighbour
    nn = {0: [1, 2], 1: [0], 2: [0], 3: [1, 2]}
    for row in out:
        ok = False
        for i, js in nn.items():
            for j in js:
                d = x[j] - x[i]
                u = (row - x[i]) @ d / (d @ d)
                if -1e-12 <= u <= 1 + 1e-12 and np.allclose(x[i] + u * d, row):
                    ok = True
        assert ok


def test_smote_duplicates_and_validation():
    x = np.array([[1.0], [1.0], [1.0], [2.0]])
    out = smote(x, k=2, m=50, seed=1)
    assert np.all((out >= 1.0) & (out <= 2.0))
    with pytest.raises(ValueError):
        smote(x, k=4)
    with pytest.raises(ValueError):
        smote(x, k=0)
    assert smote(x, k=1, m=10, seed=3).tolist() == smote(x, k=1, m=10, seed=3).tolist()


def test_fstar_gaussian_mean_within_three_sigma():
    g = Gaussian([1.0], [[2.0]])
    m = 50_000
    x = sample_fstar(g, [0.3], m, seed=11)
    assert abs(x.mean() - (1.0 + 2.0 * 0.3)) <= 3 * np.sqrt(2.0 / m)
    # the sample variance of a Gaussian has standard error var * sqrt(2 / (m - 1))
    assert abs(x.var(ddof=1) - 2.0) <= 3 * 2.0 * np.sqrt(2.0 / (m - 1))


def test_alpha_hat_by_construction():
    from imblimit.limits import tilted_mean

    g = Gaussian([0.0, 0.5], [[1.0, 0.2], [0.2, 1.0]])
    chk = upsampling_equivalence_check(make_weight("logistic"), g, [0.4, 0.9], 0.2, nodes=20)
    psi = tilted_mean(g, chk.beta_star).log_normalizer
    assert chk.alpha_hat == pytest.approx(np.log(0.2 / 0.8) - psi, abs=1e-14)
