import json

import numpy as np
import pandas as pd
import pytest

from imblimit.dataset import LabeledDataset, generate_gaussian_mixture
from imblimit.experiments import (
    MIXTURE_MAJORITY,
    MIXTURE_MINORITY,
    ExperimentConfig,
    atomic_write,
    counting_loss_grid,
    delta_study,
    parse_key_values,
    run_convergence,
    run_delta_degeneracy,
    run_pauc_study,
    run_protocol_study,
    run_threshold_protocol,
)
from imblimit.loss import delta_loss


def test_config_defaults_and_overrides():
    c = ExperimentConfig.for_experiment("convergence", reps=3, N_grid="10,100")
    assert c.reps == 3 and c.N_grid == (10, 100)
    assert c.weights == ("logistic", "exp:0.5", "polyleft:1")


@pytest.mark.parametrize("kw", [dict(reps=0), dict(N_grid=(100, 10)), dict(weights=("exp:2",)),
                                dict(target_tpr=0.0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ExperimentConfig.for_experiment("protocol", **kw)


def test_config_unknown_experiment():
    with pytest.raises(ValueError, match="unknown experiment"):
        ExperimentConfig.for_experiment("nope")


def test_key_value_parsing(tmp_path):
    assert parse_key_values("reps = 3 # note\n\nseed=4\n") == {"reps": "3", "seed": "4"}
    with pytest.raises(ValueError, match="duplicate"):
        parse_key_values("reps=1\nreps=2\n")
    with pytest.raises(ValueError, match="unknown"):
        parse_key_values("colour=red\n")
    p = tmp_path / "c.cfg"
    p.write_text("experiment = delta\nu0 = 0.5\nN_grid = 5, 50\n")
    c = ExperimentConfig.from_file(p, seed=9)
    assert (c.experiment, c.u0, c.N_grid, c.seed) == ("delta", 0.5, (5, 50), 9)


def test_atomic_write_replaces(tmp_path):
    p = tmp_path / "sub" / "f.txt"
    atomic_write(p, "one")
    atomic_write(p, "two")
    assert p.read_text() == "two"
    assert [q.name for q in p.parent.iterdir()] == ["f.txt"]


def test_counting_grid_matches_brute_force():
    rng = np.random.default_rng(0)
    x, X = np.array([0.0, 1.0]), rng.normal(size=60)
    alphas, betas = np.linspace(-2, 1, 31), np.linspace(-1, 1, 21)
    # u0 off the alpha grid, so ties are not decided by one-ulp rounding
    u0 = 0.317
    grid = counting_loss_grid(u0, x, X, alphas, betas)
    for i, b in enumerate(betas):
        for j, a in enumerate(alphas):
            assert grid[i, j] == pytest.approx(delta_loss(u0, a + b * x, a + b * X))


def test_delta_small_N_nonzero_slope_wins():
    rep = delta_study(0.0, [[0.0], [1.0]], 5, seed=np.random.SeedSequence(0).spawn(2)[0])
    assert rep.min_loss < rep.n
    assert rep.nonzero_beats_zero
    assert rep.loss_above == pytest.approx(5.0)


def test_run_convergence_writes_outputs(tmp_path):
    cfg = ExperimentConfig.for_experiment("convergence", weights=("logistic",), N_grid=(100, 1000), reps=3,
                                          output=str(tmp_path))
    rep = run_convergence(cfg)
    assert rep.table["N"].tolist() == [100, 1000, "inf"]
    assert rep.beta_star["logistic"] == pytest.approx([0.5])
    doc = json.loads((tmp_path / "convergence.json").read_text())
    assert doc["config"]["reps"] == 3 and "version" in doc
    assert pd.read_csv(tmp_path / "convergence.csv").shape[0] == 3


def test_pauc_study_small():
    cfg = ExperimentConfig.for_experiment("pauc", N_grid=(200, 2000), reps=2, n_minority=100, test_size=2000)
    st = run_pauc_study(cfg)
    assert set(st.band_means["classifier"]) == {"logistic", "exp:0.1", "exp:0.5", "exp:0.9"}
    assert st.band_means["mean_pauc"].between(0.5, 1.0).all()
    assert set(st.verdicts) == {"ordering", "pointwise", "gap"}
    assert set(st.verdicts["gap"]) == {"sens", "spec"}


def test_protocol_single_split():
    a, b, c, d = np.random.SeedSequence(3).spawn(4)
    train = LabeledDataset.from_classes(generate_gaussian_mixture(MIXTURE_MINORITY, 200, a),
                                        generate_gaussian_mixture(MIXTURE_MAJORITY, 2000, b))
    test = LabeledDataset.from_classes(generate_gaussian_mixture(MIXTURE_MINORITY, 2000, c),
                                       generate_gaussian_mixture(MIXTURE_MAJORITY, 2000, d))
    t = run_threshold_protocol(train, test, ["logistic", "exp:0.5"], 0.9)
    assert (t["train_tpr"] >= 0.9).all()
    assert t["converged"].all()


def test_protocol_study_shape():
    cfg = ExperimentConfig.for_experiment("protocol", N_grid=(1000,), reps=2, n_minority=100, test_size=500)
    table, summary = run_protocol_study(cfg)
    assert len(table) == 8
    assert list(summary.columns) == ["weight", "test_tpr_mean", "test_tpr_std", "test_tnr_mean", "test_tnr_std"]


def test_delta_requires_1d():
    cfg = ExperimentConfig.for_experiment("delta", minority="inline:0:1,1:0")
    with pytest.raises(ValueError, match="one-dimensional"):
        run_delta_degeneracy(cfg)


def test_experiments_are_pure_functions_of_config(tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / str(k)
        cfg = ExperimentConfig.for_experiment("convergence", weights=("exp:0.5",), N_grid=(10, 100), reps=3,
                                              seed=4, output=str(d))
        run_convergence(cfg)
        outs.append(((d / "convergence.csv").read_bytes(), json.loads((d / "convergence.json").read_text())))
    assert outs[0][0] == outs[1][0]
    a, b = outs[0][1], outs[1][1]
    a["config"].pop("output"), b["config"].pop("output")
    assert a == b
