import warnings

import numpy as np
import pytest
from scipy.optimize import minimize

from imblimit.dataset import LabeledDataset
from imblimit.errors import DegenerateWeightError, SaturationError
from imblimit.fit import SolverOptions, ToySpec, WarmStart, alpha_drift, fit, fit_path
from imblimit.loss import Objective
from imblimit.weights import make_weight

from conftest import SHIPPED


def _data(seed=0, N=2000):
    rng = np.random.default_rng(seed)
    return LabeledDataset.from_classes(rng.normal([1.0, 0.5], 0.8, (40, 2)), rng.normal(size=(N, 2)))


@pytest.mark.parametrize("spec", SHIPPED)
def test_fit_matches_generic_optimizer(spec):
    w, ds = make_weight(spec), _data()
    res = fit(w, ds)
    assert res.converged
    obj = Objective(w, ds)
    ref = minimize(obj.value, np.r_[np.log(ds.n / ds.N), 0.0, 0.0],
                   jac=lambda t: obj.evaluate(t).gradient, method="BFGS", options={"gtol": 1e-10})
    assert np.allclose(res.theta, ref.x, atol=1e-5)
    assert res.value <= ref.fun + 1e-10 * max(1.0, abs(ref.fun))


def test_fit_first_order_condition():
    w, ds = make_weight("logistic"), _data(1)
    res = fit(w, ds, SolverOptions(tol=1e-10))
    g = Objective(w, ds).evaluate(res.theta).gradient
    assert np.max(np.abs(g)) <= 1e-10 * max(1.0, abs(res.value))
    assert res.grad_norm == pytest.approx(np.max(np.abs(g)))


def test_history_monotone():
    res = fit(make_weight("exp:0.5"), _data(2))
    h = np.array(res.history)
    assert np.all(np.diff(h) <= 8 * np.finfo(float).eps * np.abs(h[:-1]))


def test_warm_starts_agree():
    w, ds = make_weight("exp:0.9"), _data(3)
    z = fit(w, ds, SolverOptions(warm_start="zero"))
    g = fit(w, ds, SolverOptions(warm_start="gaussian"))
    assert z.warm_start_used is WarmStart.ZERO and g.warm_start_used is WarmStart.GAUSSIAN
    assert np.allclose(z.theta, g.theta, atol=1e-6)
    assert g.iterations <= z.iterations


def test_iteration_cap_reports_nonconvergence():
    res = fit(make_weight("logistic"), _data(4), SolverOptions(max_iter=1))
    assert not res.converged and res.iterations == 1


def test_surrounding_warning_on_separable_data():
    ds = LabeledDataset.from_classes([[5.0], [6.0]], np.linspace(-1, 1, 50)[:, None])
    with pytest.warns(RuntimeWarning, match="surround"):
        fit(make_weight("logistic"), ds, SolverOptions(max_iter=30))


def test_all_trials_saturated_raises(monkeypatch):
    import sys

    fitmod = sys.modules["imblimit.fit"]  # the package re-exports the function under the same name

    class OnlyStartFinite(Objective):
        def value(self, theta):
            start = np.r_[np.log(2 / 3), 0.0]
            return super().value(theta) if np.allclose(theta, start) else np.inf

    monkeypatch.setattr(fitmod, "Objective", OnlyStartFinite)
    ds = LabeledDataset.from_classes([[2.0], [1.0]], [[-1.0], [0.5], [0.0]])
    with pytest.raises(SaturationError, match="standardizing"):
        fit(make_weight("exp:0.5"), ds, SolverOptions(check_surrounding=False))


def test_unusable_init_falls_back():
    res = fit(make_weight("exp:0.5"), LabeledDataset.from_classes([[0.0], [1.0]], [[-1.0], [0.5], [2.0]]),
              SolverOptions(check_surrounding=False), init=[2000.0, 0.0])
    assert res.converged


def test_delta_rejected():
    with pytest.raises(DegenerateWeightError):
        fit(make_weight("delta:0"), _data())


def test_fit_path_shape_and_determinism():
    w = make_weight("logistic")
    a = fit_path(w, N_grid=(10, 100, 1000), reps=4, seed=5)
    b = fit_path(w, N_grid=(10, 100, 1000), reps=4, seed=5, workers=2)
    assert list(a.columns) == ["weight", "N", "valid", "invalid", "mean_alpha", "se_alpha", "mean_beta", "se_beta"]
    assert a.equals(b)
    assert (a["valid"] + a["invalid"] == 4).all()


def test_fit_path_multivariate_columns():
    toy = ToySpec(minority=[[0.0, 0.0], [1.0, 1.0]], majority_mean=[0.0, 0.0], majority_cov=np.eye(2))
    t = fit_path(make_weight("exp:0.5"), toy, N_grid=(100, 1000), reps=2, seed=0)
    assert {"mean_beta_0", "mean_beta_1"} <= set(t.columns)


def test_fit_path_rejects_bad_grid():
    with pytest.raises(ValueError):
        fit_path(make_weight("logistic"), N_grid=(100, 10), reps=1)


def test_alpha_drift_arithmetic():
    import pandas as pd

    t = pd.DataFrame({"N": [1000, 10000, 100000], "mean_alpha": [-7.0, -9.3, -11.6]})
    d = alpha_drift(t)
    assert np.allclose(d["per_decade"], [-2.3, -2.3])
    assert d["alpha_plus_logN_from"].iloc[0] == pytest.approx(-7.0 + np.log(1000))


def test_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(tol=0)
    with pytest.raises(ValueError):
        SolverOptions(armijo=0.7)
    with pytest.raises(ValueError):
        SolverOptions(warm_start="magic")


@pytest.mark.parametrize("spec", SHIPPED)
def test_foc_balance_and_mean_match(spec):
    from imblimit.loss import foc_sums

    w, ds = make_weight(spec), _data(6)
    res = fit(w, ds)
    s = foc_sums(w, ds, res.alpha, res.beta)
    assert s["minority_mass"] == pytest.approx(s["majority_mass"], rel=1e-6)
    lhs = s["minority_moment"] / s["minority_mass"]
    rhs = s["majority_moment"] / s["majority_mass"]
    assert np.max(np.abs(lhs - rhs)) <= 1e-5


@pytest.mark.parametrize("spec", ["logistic", "exp:0.5", "polyleft:1"])
def test_restarts_reach_the_same_minimizer(spec):
    w, ds = make_weight(spec), _data(7)
    ref = fit(w, ds).theta
    rng = np.random.default_rng(70)
    for _ in range(10):
        init = np.r_[rng.uniform(-6, 0), rng.uniform(-1, 1, 2)]
        assert np.max(np.abs(fit(w, ds, init=init).theta - ref)) <= 1e-5
