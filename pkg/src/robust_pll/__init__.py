"""Partial-label learning with explicit evidential uncertainty.

The package trains a non-negative evidence network against iteratively
disambiguated candidate-label weights and ships the surrounding tooling:
instance-dependent candidate-noise generation, entropy-gap statistics
against out-of-distribution data, and sign-gradient perturbation sweeps.

Hot per-batch kernels run through a compiled extension when available
(`robust_pll.kernel_backend()` reports which implementation is active).
"""

from ._kernels import BACKEND as _KERNEL_BACKEND
from ._kernels import HAVE_COMPILED
from .core import (
    LabelWeights,
    LossBreakdown,
    TrainConfig,
    TrainResult,
    anneal,
    decompose_opinion,
    empirical_risk,
    init_label_weights,
    kl_regularizer,
    proden_baseline_update,
    squared_loss,
    train,
    update_weights_ce,
    update_weights_mse,
)
from .data import (
    NoiseConfig,
    PartialDataset,
    generate_candidates,
    minmax_normalize,
    read_idx,
    read_pll_file,
    write_pll_file,
)
from .evaluate import (
    AttackConfig,
    Ensemble,
    OodReport,
    accuracy,
    attack_sweep,
    cdf_area,
    ks_statistic,
    mmd_rbf,
    normalized_entropy,
    ood_report,
    pgd_attack,
)
from .nn import MlpModel, adam_step, backward, forward, init_adam, init_mlp, load_model, save_model
from .subjective import (
    DirichletParams,
    MultinomialOpinion,
    dirichlet_mean,
    dirichlet_var,
    evidence_to_dirichlet,
    opinion_from_evidence,
    project,
)

__version__ = "0.1.0"


def kernel_backend():
    """Name of the active kernel backend ("compiled" or "numpy")."""
    return _KERNEL_BACKEND
