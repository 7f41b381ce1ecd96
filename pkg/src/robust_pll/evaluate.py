"""Evaluation batteries: test accuracy, entropy-gap statistics between
in-distribution and out-of-distribution predictions, and sign-gradient
input perturbation sweeps."""

from dataclasses import dataclass

import numpy as np

from . import _kernels as kern
from . import core, nn
from .errors import DomainError


@dataclass
class Ensemble:
    """Prediction-averaging ensemble; members must agree on dimensions."""

    members: list

    def __post_init__(self):
        if not self.members:
            raise DomainError("ensemble needs at least one member")
        dims = {(m.input_dim, m.output_dim) for m in self.members}
        if len(dims) > 1:
            raise DomainError(f"ensemble members disagree on dimensions: {dims}")

    @property
    def input_dim(self):
        return self.members[0].input_dim

    @property
    def output_dim(self):
        return self.members[0].output_dim


def predict_probabilities(predictor, features):
    """Class probabilities for a single model or an ensemble (averaged
    member probabilities)."""
    if isinstance(predictor, Ensemble):
        probs = [core.predict_probabilities(m, features) for m in predictor.members]
        return np.mean(probs, axis=0)
    return core.predict_probabilities(predictor, features)


def accuracy(predictor, features, labels):
    """Fraction of argmax predictions matching labels; argmax ties break
    to the lowest class index."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != len(features):
        raise DomainError("labels must match the number of instances")
    probs = predict_probabilities(predictor, features)
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def normalized_entropy(probs):
    """Shannon entropy scaled by log(k) so the range is [0, 1]; zero for
    one-hot rows, one for uniform rows."""
    arr = np.asarray(probs, dtype=np.float64)
    single = arr.ndim == 1
    rows = arr[None, :] if single else arr
    k = rows.shape[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(rows > 0.0, rows * np.log(rows), 0.0)
    ent = -terms.sum(axis=1) / np.log(k)
    return float(ent[0]) if single else ent


def entropy_samples(predictor, features):
    return normalized_entropy(predict_probabilities(predictor, features))


def _check_entropy_sample(values, name):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DomainError(f"{name} entropy sample must be a non-empty 1-D array")
    if np.any(arr < -1e-9) or np.any(arr > 1.0 + 1e-9):
        raise DomainError(f"{name} entropies must lie in [0, 1]")
    return np.clip(arr, 0.0, 1.0)


def _ecdf(sample, grid):
    return np.searchsorted(np.sort(sample), grid, side="right") / sample.size


def ecdf_breakpoints(test, ood):
    """(entropy, F_test, F_ood) triples at the merged breakpoints, for
    external plotting."""
    test = _check_entropy_sample(test, "test")
    ood = _check_entropy_sample(ood, "ood")
    grid = np.unique(np.concatenate([test, ood]))
    return np.column_stack([grid, _ecdf(test, grid), _ecdf(ood, grid)])


def cdf_area(test, ood):
    """Signed area between the two empirical CDFs over [0, 1], computed
    exactly from the step functions.  Positive when the test entropies
    are stochastically smaller than the OOD entropies."""
    test = _check_entropy_sample(test, "test")
    ood = _check_entropy_sample(ood, "ood")
    grid = np.unique(np.concatenate([test, ood]))
    diff = _ecdf(test, grid) - _ecdf(ood, grid)
    # Both CDFs are 0 before the first breakpoint; each diff value holds
    # from its breakpoint to the next (the last one up to entropy 1).
    widths = np.diff(np.append(grid, 1.0))
    return float((diff * widths).sum())


def ks_statistic(test, ood):
    """Sup-norm distance between the empirical CDFs, signed by the
    direction of F_test - F_ood where the supremum is attained;
    magnitude ties resolve to the positive sign."""
    test = _check_entropy_sample(test, "test")
    ood = _check_entropy_sample(ood, "ood")
    grid = np.unique(np.concatenate([test, ood]))
    diff = _ecdf(test, grid) - _ecdf(ood, grid)
    d_plus = diff.max()
    d_minus = (-diff).max()
    return float(d_plus if d_plus >= d_minus else -d_minus)


def mmd_rbf(test, ood, max_samples=2000, seed=0, bandwidth=None):
    """Biased (V-statistic) maximum mean discrepancy between the entropy
    samples under an RBF kernel.

    By default the bandwidth is the median pairwise absolute difference
    over the pooled sample (1.0 if that median is zero); samples larger
    than `max_samples` are subsampled with the given seed to bound the
    quadratic kernel cost.  The sign is positive when the test sample's
    mean entropy is the smaller one.
    """
    test = _check_entropy_sample(test, "test")
    ood = _check_entropy_sample(ood, "ood")
    if test.size < 2 or ood.size < 2:
        raise DomainError("mmd needs at least 2 entropies per sample")
    rng = np.random.default_rng(seed)
    if test.size > max_samples:
        test = test[rng.choice(test.size, max_samples, replace=False)]
    if ood.size > max_samples:
        ood = ood[rng.choice(ood.size, max_samples, replace=False)]

    if bandwidth is None:
        pooled = np.concatenate([test, ood])
        dists = np.abs(pooled[:, None] - pooled[None, :])
        bandwidth = float(np.median(dists[np.triu_indices(pooled.size, k=1)]))
        if bandwidth <= 0.0:
            bandwidth = 1.0

    def kmean(a, b):
        return np.exp(-((a[:, None] - b[None, :]) ** 2) / (2.0 * bandwidth**2)).mean()

    mmd_sq = kmean(test, test) + kmean(ood, ood) - 2.0 * kmean(test, ood)
    magnitude = float(np.sqrt(max(mmd_sq, 0.0)))
    sign = -1.0 if test.mean() > ood.mean() else 1.0
    return sign * magnitude


@dataclass(frozen=True)
class OodReport:
    cdf_area: float
    ks_stat: float
    mmd: float


def ood_report(entropy_test, entropy_ood, max_samples=2000, seed=0):
    return OodReport(
        cdf_area(entropy_test, entropy_ood),
        ks_statistic(entropy_test, entropy_ood),
        mmd_rbf(entropy_test, entropy_ood, max_samples=max_samples, seed=seed),
    )


@dataclass
class AttackConfig:
    epsilon: float
    steps: int = 10
    step_size: float | None = None

    def __post_init__(self):
        if self.epsilon < 0.0:
            raise DomainError("epsilon must be non-negative")
        if self.steps < 1:
            raise DomainError("steps must be >= 1")
        if self.step_size is None:
            self.step_size = self.epsilon / 10.0
        if self.step_size * self.steps < self.epsilon - 1e-12:
            raise DomainError("step_size * steps must reach epsilon")


def _onehot(labels, k):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, k))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _model_input_grad(model, x, onehot):
    """Input gradient of the model's own training-style loss against the
    one-hot targets: squared-error form for evidence heads, cross-entropy
    for softmax heads."""
    out, cache = nn.forward_cached(model, x)
    if model.output_activation == "relu":
        _, _, g = kern.sq_loss_value_grad(out, onehot)
        return nn.backward_from_cache(model, cache, g).inputs
    dz = out - onehot
    return nn._backprop_linear(model, cache, dz).inputs


def _attack_input_grad(predictor, x, onehot):
    if isinstance(predictor, Ensemble):
        grads = [_model_input_grad(m, x, onehot) for m in predictor.members]
        return np.mean(grads, axis=0)
    return _model_input_grad(predictor, x, onehot)


def pgd_attack(predictor, features, labels, config):
    """Iterated sign-gradient ascent on the prediction loss, projected
    onto the L-inf epsilon ball around the inputs intersected with the
    unit box.  Inputs must already lie in [0, 1]."""
    if labels is None:
        raise DomainError("attack needs true labels")
    x0 = np.ascontiguousarray(features, dtype=np.float64)
    if np.any(x0 < -1e-9) or np.any(x0 > 1.0 + 1e-9):
        raise DomainError("features must be normalized to [0, 1] before attacking")
    x = x0.copy()
    if config.epsilon == 0.0:
        return x
    onehot = _onehot(labels, predictor.output_dim)
    lo = np.clip(x0 - config.epsilon, 0.0, 1.0)
    hi = np.clip(x0 + config.epsilon, 0.0, 1.0)
    for _ in range(config.steps):
        grad = _attack_input_grad(predictor, x, onehot)
        x = np.clip(x + config.step_size * np.sign(grad), lo, hi)
    # lo/hi are rounded, so the measured perturbation can exceed epsilon
    # by an ulp; walk such entries toward the original until the bound
    # holds exactly in float.
    diff = x - x0
    while True:
        out = np.abs(diff) > config.epsilon
        if not out.any():
            break
        x[out] = np.nextafter(x[out], x0[out])
        diff = x - x0
    return x


def attack_sweep(predictor, features, labels, eps_list, steps=10):
    """Accuracy after the attack for each epsilon; the 0.0 entry is the
    clean accuracy by construction."""
    results = []
    for eps in eps_list:
        if eps == 0.0:
            acc = accuracy(predictor, features, labels)
        else:
            adv = pgd_attack(predictor, features, labels, AttackConfig(epsilon=eps, steps=steps))
            acc = accuracy(predictor, adv, labels)
        results.append((float(eps), acc))
    return results
