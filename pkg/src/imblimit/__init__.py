"""Weight-function linear classifiers for heavily imbalanced binary data.

Fitting of the empirical loss, direct solvers for the infinite-imbalance
slope limit, tilting and projection utilities, and ROC / partial AUC tools.
"""

__version__ = "0.1.0"

from .weights import WeightFunction, WeightKind, make_weight, validate_conditions, classify_tail  # noqa: E402
from .dataset import LabeledDataset, load_csv, generate_gaussian_mixture, split, check_surrounding  # noqa: E402
from .loss import loss_value, loss_grad_hess  # noqa: E402
from .fit import SolverOptions, FitResult, fit, fit_path, ToySpec  # noqa: E402
from .limits import (  # noqa: E402
    Gaussian,
    DiscreteDistribution,
    tilted_mean,
    solve_limit,
    solve_limit_gaussian,
    solve_limit_gaussian_mixed,
    kl_project,
    joint_tilt,
    renyi_identity_check,
)
from .metrics import roc, auc, pauc, bootstrap_pauc, calibrate_threshold  # noqa: E402
from .upsample import sample_fstar, upsampling_equivalence_check, smote  # noqa: E402
