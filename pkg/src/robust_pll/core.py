"""Candidate-label disambiguation training.

The trainer interleaves fitting a non-negative evidence model against the
current label weights (expected squared distance to a Dirichlet draw plus
an annealed KL penalty on non-candidate evidence) with a closed-form
update of the weights from the model's probability outputs.  A softmax
baseline trained with weighted cross-entropy is included for comparisons.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kern
from . import nn
from .errors import DataError, DomainError, TrainingError
from .subjective import MultinomialOpinion

UPDATE_RULES = ("mse", "ce", "proden")

DEFAULT_HIDDEN = (300, 300, 300)


def candidate_mask(candidates, k):
    """Boolean mask of length k from an index iterable or a mask."""
    arr = np.asarray(candidates)
    if arr.dtype == bool:
        if arr.shape != (k,):
            raise DomainError(f"candidate mask must have length {k}")
        mask = arr.copy()
    else:
        mask = np.zeros(k, dtype=bool)
        idx = np.asarray(sorted(set(int(c) for c in np.atleast_1d(arr))))
        if idx.size and (idx.min() < 0 or idx.max() >= k):
            raise DomainError(f"candidate index out of range for k={k}")
        mask[idx] = True
    if not mask.any():
        raise DomainError("candidate set must be non-empty")
    return mask


def _check_evidence(evidence):
    evidence = np.asarray(evidence, dtype=np.float64)
    if evidence.ndim != 1:
        raise DomainError("evidence must be a 1-D vector")
    if np.any(evidence < 0.0) or not np.all(np.isfinite(evidence)):
        raise DomainError("evidence must be non-negative and finite")
    return evidence


def _check_simplex(weights, tol=1e-9):
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(weights < -tol) or abs(weights.sum() - 1.0) > tol:
        raise DomainError(f"weights must lie on the probability simplex, got {weights}")
    return weights


@dataclass
class LabelWeights:
    """Row-stochastic n-by-k matrix supported on the candidate sets."""

    matrix: np.ndarray

    def validate(self, candidates, tol=1e-9):
        m = self.matrix
        if np.any(m < -tol) or np.any(m > 1.0 + tol):
            raise DomainError("label weights must lie in [0, 1]")
        if np.any(np.abs(m.sum(axis=1) - 1.0) > tol):
            raise DomainError("label weight rows must sum to 1")
        if np.any(m[~candidates.astype(bool)] != 0.0):
            raise DomainError("label weights must vanish outside the candidate sets")


@dataclass(frozen=True)
class LossBreakdown:
    err: float
    var: float
    kl: float
    total: float

    @classmethod
    def compose(cls, err, var, kl, anneal_coeff):
        return cls(float(err), float(var), float(kl),
                   float(err) + float(var) + float(anneal_coeff) * float(kl))


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 256
    learning_rate: float = 1e-3
    seed: int = 0
    update_rule: str = "mse"
    hidden_dims: tuple = DEFAULT_HIDDEN

    def validate(self):
        if self.epochs < 1:
            raise DomainError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise DomainError(f"batch size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0.0:
            raise DomainError("learning rate must be positive")
        if self.update_rule not in UPDATE_RULES:
            raise DomainError(f"update_rule must be one of {UPDATE_RULES}")


@dataclass
class EpochStats:
    epoch: int
    anneal_coeff: float
    mean_err: float
    mean_var: float
    mean_kl: float
    mean_weight_delta: float
    mean_prob_delta: float
    weight_agreement: float
    #: max over instances of ||dw||^2 - ||dp||^2 this epoch; <= 0 up to
    #: float rounding because the weight update is a metric projection.
    max_drift_excess: float = 0.0


@dataclass
class TrainResult:
    model: nn.MlpModel
    weights: LabelWeights
    trace: list
    clamp_events: int = 0


def init_label_weights(dataset):
    """Uniform weight over each instance's candidate set."""
    cand = dataset.candidates
    sizes = cand.sum(axis=1)
    empty = np.nonzero(sizes == 0)[0]
    if empty.size:
        raise DataError(f"instance {empty[0]} has an empty candidate set")
    return LabelWeights(cand / sizes[:, None])


def anneal(t, total_epochs):
    """Regularization schedule min(2t / T, 1): ramps linearly and
    saturates at the halfway epoch."""
    if total_epochs < 1 or not 1 <= t <= total_epochs:
        raise DomainError(f"need 1 <= t <= T, got t={t}, T={total_epochs}")
    return min(2.0 * t / total_epochs, 1.0)


def squared_loss(evidence, weights):
    """Expected squared distance between `weights` and a draw from
    Dirichlet(evidence + 1), split into fit (err) and variance terms."""
    evidence = _check_evidence(evidence)
    weights = _check_simplex(weights)
    if weights.shape != evidence.shape:
        raise DomainError("evidence and weights must have the same length")
    err, var = kern.sq_loss_terms(evidence[None, :].copy(), weights[None, :].copy())
    return LossBreakdown.compose(err[0], var[0], 0.0, 0.0)


def kl_regularizer(evidence, candidates):
    """KL divergence from Dirichlet(alpha~) to the uniform Dirichlet,
    where alpha~ is the evidence-plus-one vector with candidate entries
    reset to 1.  Zero exactly when no non-candidate evidence remains."""
    evidence = _check_evidence(evidence)
    mask = candidate_mask(candidates, evidence.size)
    kl = kern.kl_value(evidence[None, :].copy(), mask[None, :].astype(np.uint8))
    return float(kl[0])


def update_weights_mse(pbar, candidates):
    """Constrained minimizer of the squared loss over weights supported
    on the candidate set: candidate entries keep their probability plus
    an equal share of the non-candidate mass."""
    pbar = _check_simplex(np.asarray(pbar, dtype=np.float64))
    mask = candidate_mask(candidates, pbar.size)
    out, _ = kern.mse_weight_update(pbar[None, :].copy(), mask[None, :].astype(np.uint8))
    return out[0]


def update_weights_ce(evidence, candidates):
    """Minimizer of the expected cross-entropy: all weight on the
    candidate with the most evidence (ties to the lowest class index)."""
    evidence = _check_evidence(evidence)
    mask = candidate_mask(candidates, evidence.size)
    masked = np.where(mask, evidence + 1.0, -np.inf)
    out = np.zeros_like(evidence)
    out[int(np.argmax(masked))] = 1.0
    return out


def decompose_opinion(evidence, candidates):
    """Opinion whose projection equals the squared-loss weight update:
    candidate belief is evidence over total strength, the prior is
    uniform over candidates, and all non-candidate mass (plus the +1
    pseudo-counts) becomes uncertainty."""
    evidence = _check_evidence(evidence)
    mask = candidate_mask(candidates, evidence.size)
    strength = evidence.sum() + evidence.size
    belief = np.where(mask, evidence / strength, 0.0)
    prior = mask / mask.sum()
    return MultinomialOpinion(belief, prior, 1.0 - belief.sum())


def proden_baseline_update(softmax_probs, candidates):
    """Baseline rule: restrict the probabilities to the candidate set and
    renormalize; uniform over candidates if no candidate mass remains."""
    probs = _check_simplex(np.asarray(softmax_probs, dtype=np.float64))
    mask = candidate_mask(candidates, probs.size)
    restricted = np.where(mask, probs, 0.0)
    total = restricted.sum()
    if total <= 0.0:
        return mask / mask.sum()
    return restricted / total


def model_evidence(model, features, chunk=8192):
    """Full forward pass in bounded-memory chunks."""
    outs = [nn.forward(model, features[i : i + chunk]) for i in range(0, len(features), chunk)]
    return np.concatenate(outs, axis=0)


def predict_probabilities(model, features, chunk=8192):
    """Class probabilities: Dirichlet mean of evidence + 1 for the ReLU
    head, the softmax output itself otherwise."""
    out = model_evidence(model, features, chunk)
    if model.output_activation == "softmax":
        return out
    alpha = out + 1.0
    return alpha / alpha.sum(axis=1, keepdims=True)


def empirical_risk(model, dataset, weights, anneal_coeff):
    """Mean squared loss plus anneal_coeff times the mean KL penalty over
    the whole dataset."""
    if not 0.0 <= anneal_coeff <= 1.0:
        raise DomainError(f"annealing coefficient must lie in [0, 1], got {anneal_coeff}")
    w = weights.matrix if isinstance(weights, LabelWeights) else np.asarray(weights)
    evidence = model_evidence(model, dataset.features)
    err, var = kern.sq_loss_terms(evidence, np.ascontiguousarray(w))
    kl = kern.kl_value(evidence, dataset.candidates.astype(np.uint8))
    breakdown = LossBreakdown.compose(err.mean(), var.mean(), kl.mean(), anneal_coeff)
    if not np.isfinite(breakdown.total):
        raise TrainingError("non-finite empirical risk")
    return breakdown


def _batch_gradients(model, cache, out, w_batch, m_batch, anneal_coeff, rule):
    """Loss sums and parameter gradients for one mini-batch."""
    b = out.shape[0]
    if rule == "proden":
        logp = np.log(np.clip(out, 1e-300, None))
        loss_rows = -(w_batch * logp).sum(axis=1)
        dz = (out - w_batch) / b
        return loss_rows.sum(), 0.0, 0.0, nn._backprop_linear(model, cache, dz)
    if rule == "mse":
        err, var, g_fit = kern.sq_loss_value_grad(out, w_batch)
        fit_sum, var_sum = err.sum(), var.sum()
    else:
        ce, g_fit = kern.ce_loss_value_grad(out, w_batch)
        fit_sum, var_sum = ce.sum(), 0.0
    kl, g_kl = kern.kl_value_grad(out, m_batch)
    loss_grad = (g_fit + anneal_coeff * g_kl) / b
    grads = nn.backward_from_cache(model, cache, loss_grad)
    return fit_sum, var_sum, kl.sum(), grads


def _updated_weights(pbar, mask_u8, rule):
    if rule == "mse":
        return kern.mse_weight_update(pbar, mask_u8)
    if rule == "ce":
        masked = np.where(mask_u8.astype(bool), pbar, -np.inf)
        out = np.zeros_like(pbar)
        out[np.arange(len(pbar)), np.argmax(masked, axis=1)] = 1.0
        return out, 0
    restricted = np.where(mask_u8.astype(bool), pbar, 0.0)
    totals = restricted.sum(axis=1, keepdims=True)
    sizes = mask_u8.sum(axis=1, keepdims=True)
    uniform = mask_u8 / sizes
    with np.errstate(invalid="ignore"):
        out = np.where(totals > 0.0, restricted / np.where(totals > 0, totals, 1.0), uniform)
    return out, 0


def train(dataset, config):
    """Run the full training loop.

    Per epoch: set the annealing coefficient, take one pass of mini-batch
    gradient steps on the risk, then recompute probability outputs on the
    whole dataset and apply the closed-form label-weight update.  The
    returned trace carries per-epoch risk components, weight/probability
    drift, and the agreement between model argmax and weight argmax.
    """
    config.validate()
    n, k = dataset.n, dataset.k
    rng = np.random.default_rng(config.seed)
    rule = config.update_rule
    output_activation = "softmax" if rule == "proden" else "relu"
    model = nn.init_mlp(
        [dataset.d, *config.hidden_dims, k], rng=rng, output_activation=output_activation
    )
    adam = nn.init_adam(model, config.learning_rate)

    features = np.ascontiguousarray(dataset.features, dtype=np.float64)
    mask_u8 = np.ascontiguousarray(dataset.candidates.astype(np.uint8))
    weights = init_label_weights(dataset).matrix

    # The uniform initialization is exactly the constrained update of the
    # uniform probability vector, so drift bounds hold from epoch 1.
    prev_pbar = np.full((n, k), 1.0 / k)

    trace = []
    clamp_events = 0
    for t in range(1, config.epochs + 1):
        coeff = anneal(t, config.epochs)
        perm = rng.permutation(n)
        sums = np.zeros(3)
        for bi, start in enumerate(range(0, n, config.batch_size)):
            idx = perm[start : start + config.batch_size]
            xb = features[idx]
            wb = np.ascontiguousarray(weights[idx])
            mb = np.ascontiguousarray(mask_u8[idx])
            out, cache = nn.forward_cached(model, xb)
            fit, var, kl, grads = _batch_gradients(model, cache, out, wb, mb, coeff, rule)
            if not np.isfinite(fit + var + kl):
                raise TrainingError(f"non-finite risk at epoch {t}, batch {bi}")
            sums += (fit, var, kl)
            nn.adam_step(adam, model, grads, context=f"epoch {t}, batch {bi}")

        if rule == "proden":
            pbar = model_evidence(model, features)
        else:
            ev = model_evidence(model, features)
            alpha = ev + 1.0
            pbar = alpha / alpha.sum(axis=1, keepdims=True)
        pbar = np.ascontiguousarray(pbar)
        new_weights, n_clamped = _updated_weights(pbar, mask_u8, rule)
        clamp_events += n_clamped

        dw = ((new_weights - weights) ** 2).sum(axis=1)
        dp = ((pbar - prev_pbar) ** 2).sum(axis=1)
        agreement = float(np.mean(np.argmax(pbar, axis=1) == np.argmax(new_weights, axis=1)))
        trace.append(
            EpochStats(
                epoch=t,
                anneal_coeff=coeff,
                mean_err=float(sums[0] / n),
                mean_var=float(sums[1] / n),
                mean_kl=float(sums[2] / n),
                mean_weight_delta=float(dw.mean()),
                mean_prob_delta=float(dp.mean()),
                weight_agreement=agreement,
                max_drift_excess=float((dw - dp).max()),
            )
        )
        weights = new_weights
        prev_pbar = pbar

    result_weights = LabelWeights(weights)
    result_weights.validate(dataset.candidates)
    return TrainResult(model, result_weights, trace, clamp_events)


TRACE_COLUMNS = (
    "epoch",
    "anneal_coeff",
    "mean_err",
    "mean_var",
    "mean_kl",
    "mean_weight_delta",
    "mean_prob_delta",
    "weight_agreement",
)


def write_trace(trace, path):
    """One tab-separated record per epoch."""
    with open(path, "w") as fh:
        fh.write("\t".join(TRACE_COLUMNS) + "\n")
        for row in trace:
            fields = [repr(float(getattr(row, c))) if c != "epoch" else str(row.epoch)
                      for c in TRACE_COLUMNS]
            fh.write("\t".join(fields) + "\n")
