"""Acceptance gate: one test (or group) per criterion, each recorded through the
``criterion`` fixture so the run ends with a PASS/FAIL line per criterion."""

import time

import cvxpy as cp
import numpy as np
import pytest
import scipy.linalg
from scipy.optimize import brentq

from imblimit.errors import InfeasibleTargetError
from imblimit.dataset import LabeledDataset, generate_gaussian_mixture, gaussian_spec
from imblimit.experiments import (
    ExperimentConfig,
    delta_study,
    run_convergence,
    run_pauc_study,
    run_protocol_study,
)
from imblimit.fit import SolverOptions, fit
from imblimit.limits import (
    DiscreteDistribution,
    Gaussian,
    joint_tilt,
    kl_project,
    renyi_identity_check,
    solve_limit,
    solve_limit_gaussian,
    tilted_mean,
)
from imblimit.loss import Objective
from imblimit.upsample import sample_fstar, upsampling_equivalence_check
from imblimit.weights import EXP_GUARD, make_weight

from conftest import SHIPPED

TOY_MIN = np.array([[0.0], [1.0]])
N01 = Gaussian([0.0], [[1.0]])


# -- 1 and 2: replicated fits on the toy -------------------------------------------------

TABLE_TARGETS = {"logistic": (0.50, 0.01), "exp:0.5": (0.80, 0.01), "polyleft:1": (0.54, 0.02)}


@pytest.fixture(scope="module")
def convergence():
    cfg = ExperimentConfig.for_experiment("convergence", weights=tuple(TABLE_TARGETS),
                                          N_grid=(10, 100, 1000, 10_000, 100_000), reps=200, seed=0)
    t0 = time.perf_counter()
    rep = run_convergence(cfg)
    return rep, time.perf_counter() - t0


@pytest.mark.slow
@pytest.mark.parametrize("weight", list(TABLE_TARGETS))
def test_c1_mean_slope_at_largest_N(convergence, criterion, weight):
    rep, _ = convergence
    t = rep.table
    row = t[(t["weight"] == weight) & (t["N"] == 100_000)].iloc[0]
    target, tol = TABLE_TARGETS[weight]
    ok = abs(row["mean_beta"] - target) <= tol
    criterion(1, ok, f"{weight}: mean beta {row['mean_beta']:.4f} vs {target} +- {tol} "
                     f"({int(row['valid'])} valid of 200)")
    assert ok


@pytest.mark.slow
def test_c1_runtime(convergence, criterion):
    _, seconds = convergence
    ok = seconds <= 600
    criterion(1, ok, f"runtime {seconds:.1f}s (limit 600s)")
    assert ok


@pytest.mark.slow
@pytest.mark.parametrize("weight", list(TABLE_TARGETS))
def test_c2_alpha_drift(convergence, criterion, weight):
    rep, _ = convergence
    d = rep.drift[rep.drift["weight"] == weight]["per_decade"].to_numpy()
    err = np.abs(d + np.log(10.0))
    ok = len(d) == 2 and bool(np.all(err <= 0.05))
    criterion(2, ok, f"{weight}: per-decade drift {np.round(d, 4).tolist()} vs -2.3026 +- 0.05")
    assert ok


# -- 3: limit solver ----------------------------------------------------------------------


def test_c3_lambda0_analytic(criterion):
    b = solve_limit(0.0, N01, TOY_MIN).beta_star[0]
    ok = abs(b - 0.5) <= 1e-10
    criterion(3, ok, f"lambda=0 beta* {b!r} vs 0.5")
    assert ok


def test_c3_lambda_half_bisection(criterion):
    t = brentq(lambda t: t - 1.0 / (1.0 + np.exp(t)), 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    b = solve_limit(0.5, N01, TOY_MIN).beta_star[0]
    ok = abs(b - 2.0 * t) <= 1e-8
    criterion(3, ok, f"lambda=0.5 beta* {b:.12f} vs bisection {2 * t:.12f}")
    assert ok


def test_c3_gaussian_closed_form(criterion):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        d = int(rng.integers(1, 5))
        a0, a1 = rng.normal(size=(d, d)), rng.normal(size=(d, d))
        s0, s1 = a0 @ a0.T + d * np.eye(d), a1 @ a1.T + d * np.eye(d)
        mu0, mu1 = rng.normal(size=d), rng.normal(size=d)
        lam = float(rng.uniform(0, 1))
        b = solve_limit_gaussian(lam, mu0, s0, mu1, s1)
        ref = scipy.linalg.solve(lam * s1 + (1 - lam) * s0, mu1 - mu0, assume_a="pos")
        worst = max(worst, float(np.max(np.abs(b - ref)) / max(1.0, np.max(np.abs(ref)))))
        # the two tilted Gaussian means coincide at the solution
        g0 = tilted_mean(Gaussian(mu0, s0), (1 - lam) * b).mean
        g1 = tilted_mean(Gaussian(mu1, s1), -lam * b).mean
        worst = max(worst, float(np.max(np.abs(g0 - g1)) / max(1.0, np.max(np.abs(g0)))))
    ok = worst <= 1e-12
    criterion(3, ok, f"Gaussian closed form vs linear solve, worst {worst:.2e}")
    assert ok


# -- 4: pAUC orderings on the mixture -----------------------------------------------------


@pytest.fixture(scope="module")
def pauc_study():
    cfg = ExperimentConfig.for_experiment("pauc", N_grid=(1000, 10_000, 50_000), reps=20, seed=0)
    t0 = time.perf_counter()
    st = run_pauc_study(cfg)
    return st, time.perf_counter() - t0


def _band(st, N, orient):
    bm = st.band_means
    sub = bm[(bm["N"] == N) & (bm["orientation"] == orient)].set_index("classifier")["mean_pauc"]
    return {k: float(v) for k, v in sub.items()}


@pytest.mark.slow
def test_c4_sensitivity_ordering(pauc_study, criterion):
    st, _ = pauc_study
    m = _band(st, 10_000, "sens")
    ok = m["exp:0.9"] > m["exp:0.5"] > m["exp:0.1"]
    pw = st.verdicts["pointwise"]["10000"]["sens"]
    held = [b for b, v in pw.items() if v]
    criterion(4, ok, f"sensitivity band N=1e4: 0.9 {m['exp:0.9']:.4f}, 0.5 {m['exp:0.5']:.4f}, "
                     f"0.1 {m['exp:0.1']:.4f}; pointwise order holds at tp1 in {held}")
    assert ok


@pytest.mark.slow
def test_c4_specificity_ordering(pauc_study, criterion):
    st, _ = pauc_study
    m = _band(st, 10_000, "spec")
    ok = m["exp:0.1"] > m["exp:0.5"] > m["exp:0.9"]
    criterion(4, ok, f"specificity band N=1e4: 0.1 {m['exp:0.1']:.4f}, 0.5 {m['exp:0.5']:.4f}, "
                     f"0.9 {m['exp:0.9']:.4f}")
    assert ok


@pytest.mark.slow
@pytest.mark.parametrize("orient", ["sens", "spec"])
def test_c4_logistic_gap_shrinks(pauc_study, criterion, orient):
    st, _ = pauc_study
    a, b = _band(st, 1000, orient), _band(st, 50_000, orient)
    g0, g1 = abs(a["logistic"] - a["exp:0.1"]), abs(b["logistic"] - b["exp:0.1"])
    ok = g1 < g0
    criterion(4, ok, f"{orient} |logistic - 0.1| gap: N=1e3 {g0:.4f}, N=5e4 {g1:.4f}")
    assert ok


@pytest.mark.slow
def test_c4_runtime(pauc_study, criterion):
    _, seconds = pauc_study
    ok = seconds <= 1200
    criterion(4, ok, f"runtime {seconds:.1f}s (limit 1200s)")
    assert ok


# -- 5 and 6: derivatives and convexity of the empirical loss -----------------------------


def _loss_data(seed):
    rng = np.random.default_rng(seed)
    return LabeledDataset.from_classes(rng.normal([0.8, -0.3], 0.7, (15, 2)), rng.normal(size=(300, 2)))


def _random_point(rng):
    return np.r_[rng.uniform(-6.0, 1.0), rng.uniform(-1.5, 1.5, 2)]


@pytest.mark.parametrize("spec", SHIPPED)
def test_c5_derivatives_vs_differences(criterion, spec):
    w, ds = make_weight(spec), _loss_data(5)
    obj = Objective(w, ds)
    rng = np.random.default_rng(55)
    worst_g = worst_h = 0.0
    for _ in range(20):
        th = _random_point(rng)
        ev = obj.evaluate(th)
        h = 1e-5 * max(1.0, float(np.max(np.abs(th))))
        E = np.eye(len(th)) * h
        num_g = np.array([(obj.value(th + e) - obj.value(th - e)) / (2 * h) for e in E])
        num_h = np.array([(obj.evaluate(th + e).gradient - obj.evaluate(th - e).gradient) / (2 * h) for e in E])
        worst_g = max(worst_g, np.linalg.norm(num_g - ev.gradient) / max(np.linalg.norm(ev.gradient), 1e-300))
        worst_h = max(worst_h, np.linalg.norm(num_h - ev.hessian) / max(np.linalg.norm(ev.hessian), 1e-300))
    ok = worst_g <= 1e-5 and worst_h <= 1e-5
    criterion(5, ok, f"{spec}: relative error gradient {worst_g:.1e}, Hessian {worst_h:.1e}")
    assert ok


@pytest.mark.parametrize("spec", SHIPPED)
def test_c6_hessian_psd(criterion, spec):
    w = make_weight(spec)
    rng = np.random.default_rng(66)
    toy = LabeledDataset.from_classes(TOY_MIN, generate_gaussian_mixture(gaussian_spec([0.0], [[1.0]]), 1000, 6))
    obj = Objective(w, toy)
    bad, worst, taken = 0, np.inf, 0
    while taken < 100:
        th = np.r_[rng.uniform(-8.0, 2.0), rng.uniform(-3.0, 3.0)]
        u = np.r_[obj.zmin @ th, obj.zmaj @ th]
        if np.any(w.exponent(u) > EXP_GUARD):
            continue
        taken += 1
        H = obj.evaluate(th).hessian
        ratio = float(np.linalg.eigvalsh(H).min() / np.trace(H))
        worst = min(worst, ratio)
        bad += ratio < -1e-10
    ok = bad == 0
    criterion(6, ok, f"{spec}: {bad}/100 points with min-eig/trace < -1e-10 (worst {worst:.2e})")
    assert ok


# -- 7, 8, 9: discrete oracles ------------------------------------------------------------


def _simplex_kl(F0, t):
    g = cp.Variable(len(F0.probs), nonneg=True)
    prob = cp.Problem(cp.Minimize(cp.sum(cp.rel_entr(g, F0.probs))), [cp.sum(g) == 1, F0.atoms.T @ g == t])
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    return prob.value


def test_c7_kl_projection(criterion):
    rng = np.random.default_rng(77)
    worst, count = 0.0, 0
    while count < 10:
        k, d = int(rng.integers(3, 6)), int(rng.integers(1, 3))
        if k <= d:
            continue
        F0 = DiscreteDistribution(rng.normal(size=(k, d)), rng.dirichlet(np.ones(k)))
        t = rng.dirichlet(np.ones(k)) @ F0.atoms
        div = kl_project(F0, t)[2]
        worst = max(worst, abs(div - _simplex_kl(F0, t)))
        count += 1
    ok = worst <= 1e-6
    criterion(7, ok, f"10 instances, worst |divergence - brute force| {worst:.1e}")
    assert ok


def _two_simplex(lam, F0, F1):
    g0 = cp.Variable(len(F0.probs), nonneg=True)
    g1 = cp.Variable(len(F1.probs), nonneg=True)
    obj = lam * cp.sum(cp.rel_entr(g0, F0.probs)) + (1 - lam) * cp.sum(cp.rel_entr(g1, F1.probs))
    cons = [cp.sum(g0) == 1, cp.sum(g1) == 1, F0.atoms.T @ g0 == F1.atoms.T @ g1]
    prob = cp.Problem(cp.Minimize(obj), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    return prob.value


def test_c8_joint_tilt(criterion):
    rng = np.random.default_rng(88)
    worst = balance = 0.0
    done = 0
    while done < 5:
        F0 = DiscreteDistribution(rng.normal(size=(4, 2)), rng.dirichlet(np.ones(4)))
        F1 = DiscreteDistribution(rng.normal(0.4, 1.0, (4, 2)), rng.dirichlet(np.ones(4)))
        lam = float(rng.uniform(0.1, 0.9))
        try:
            jt = joint_tilt(lam, F0, F1)
        except InfeasibleTargetError:
            continue  # hulls do not overlap, no feasible pair exists
        done += 1
        worst = max(worst, abs(jt.objective - _two_simplex(lam, F0, F1)))
        b0, b1 = (1 - lam) * jt.beta_star, -lam * jt.beta_star
        # the two parametrized tilts cancel up to the rounding of their products
        balance = max(balance, float(np.max(np.abs(lam * b0 + (1 - lam) * b1)) / max(1.0, np.max(np.abs(b0)))))
    ok = worst <= 1e-5 and balance <= 4 * np.finfo(float).eps
    criterion(8, ok, f"5 instances, worst objective gap {worst:.1e}, tilt balance {balance:.1e}")
    assert ok


def test_c9_renyi_identity(criterion):
    rng = np.random.default_rng(99)
    worst = 0.0
    atoms = np.arange(4.0)[:, None]
    for _ in range(20):
        f0 = DiscreteDistribution(atoms, rng.dirichlet(np.ones(4)))
        f1 = DiscreteDistribution(atoms, rng.dirichlet(np.ones(4)))
        lhs, rhs = renyi_identity_check(float(rng.uniform(0.05, 0.95)), float(rng.uniform(0.05, 0.95)), f0, f1)
        worst = max(worst, abs(lhs - rhs))
    ok = worst <= 1e-8
    criterion(9, ok, f"20 instances, worst |lhs - rhs| {worst:.1e}")
    assert ok


# -- 10: upsampling -----------------------------------------------------------------------


def test_c10_fit_on_upsampled_data(criterion):
    beta_star = solve_limit(0.0, N01, TOY_MIN).beta_star
    n_total, pi1 = 1_000_000, 0.2
    s1, s0 = np.random.SeedSequence(10).spawn(2)
    mino = sample_fstar(N01, beta_star, int(pi1 * n_total), seed=s1)
    maj = generate_gaussian_mixture(gaussian_spec([0.0], [[1.0]]), n_total - len(mino), s0)
    res = fit(make_weight("logistic"), LabeledDataset.from_classes(mino, maj), SolverOptions(check_surrounding=False))
    err = abs(res.beta[0] - beta_star[0])
    ok = res.converged and err <= 0.02
    criterion(10, ok, f"logistic on F* upsample: beta {res.beta[0]:.4f} vs beta* {beta_star[0]:.4f}")
    assert ok


def test_c10_foc_residual(criterion):
    chk = upsampling_equivalence_check(make_weight("logistic"), N01, [0.5], 0.2)
    ok = chk.method == "quadrature" and chk.foc_residual <= 1e-6
    criterion(10, ok, f"first-order residual at (alpha_hat, beta*) {chk.foc_residual:.1e} ({chk.method})")
    assert ok


# -- 11: delta weight ---------------------------------------------------------------------


def test_c11_delta_degeneracy(criterion):
    rep = delta_study(0.0, TOY_MIN, 10_000, seed=np.random.SeedSequence(11))
    zero = np.abs(rep.argmin_beta) < 1e-12
    ok = rep.min_loss == rep.n and rep.zero_slope_min and bool(np.all(rep.argmin_alpha[zero] <= rep.u0))
    criterion(11, ok, f"N=1e4: grid minimum {rep.min_loss:g} vs n={rep.n}; every alpha <= u0 at beta=0 "
                      f"minimal: {rep.zero_slope_min}")
    assert ok


# -- 12: threshold protocol ---------------------------------------------------------------


@pytest.mark.slow
def test_c12_threshold_protocol(criterion):
    cfg = ExperimentConfig.for_experiment("protocol", reps=50, seed=0)
    _, summary = run_protocol_study(cfg)
    s = summary.set_index("weight")
    tpr = s["test_tpr_mean"]
    ok_tpr = bool(tpr.between(0.97, 1.0).all())
    ok_tnr = s.loc["exp:0.9", "test_tnr_mean"] >= s.loc["exp:0.1", "test_tnr_mean"]
    criterion(12, ok_tpr, f"mean test TPR by weight {tpr.round(4).to_dict()} within [0.97, 1]")
    criterion(12, ok_tnr, f"mean test TNR 0.9 {s.loc['exp:0.9', 'test_tnr_mean']:.4f} >= "
                          f"0.1 {s.loc['exp:0.1', 'test_tnr_mean']:.4f}")
    assert ok_tpr and ok_tnr
