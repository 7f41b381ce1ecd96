"""Vectorized numpy/scipy implementation of the evidential kernels.

This backend is the import-time fallback when the compiled extension is
unavailable; both backends expose the same functions and must agree to
tight tolerances (see tests).  All functions take C-contiguous float64
arrays of shape (n, k); candidate masks are uint8/bool of the same shape
with 1 marking a candidate class.
"""

import numpy as np
from scipy import special

BACKEND = "numpy"


def digamma(x):
    return special.digamma(np.asarray(x, dtype=np.float64))


def trigamma(x):
    return special.polygamma(1, np.asarray(x, dtype=np.float64))


def log_gamma(x):
    return special.gammaln(np.asarray(x, dtype=np.float64))


def sq_loss_terms(evidence, weights):
    """Per-row error and variance components of the expected squared
    distance between `weights` and a Dirichlet(evidence + 1) draw."""
    alpha = evidence + 1.0
    strength = alpha.sum(axis=1, keepdims=True)
    pbar = alpha / strength
    err = ((weights - pbar) ** 2).sum(axis=1)
    var = (pbar * (1.0 - pbar)).sum(axis=1) / (1.0 + strength[:, 0])
    return err, var


def sq_loss_value_grad(evidence, weights):
    """`sq_loss_terms` plus the gradient of (err + var) w.r.t. evidence."""
    alpha = evidence + 1.0
    strength = alpha.sum(axis=1, keepdims=True)
    pbar = alpha / strength
    err = ((weights - pbar) ** 2).sum(axis=1)
    vsum = (pbar * (1.0 - pbar)).sum(axis=1)
    var = vsum / (1.0 + strength[:, 0])

    # d(err+var)/d pbar_j, then through pbar_j = alpha_j / strength.
    g = -2.0 * (weights - pbar) + (1.0 - 2.0 * pbar) / (1.0 + strength)
    grad = (g - (g * pbar).sum(axis=1, keepdims=True)) / strength
    grad -= (vsum / (1.0 + strength[:, 0]) ** 2)[:, None]
    return err, var, grad


def kl_value(evidence, cand_mask):
    """Per-row KL divergence from Dirichlet(alpha~) to the uniform
    Dirichlet, where alpha~ keeps non-candidate evidence and resets
    candidate entries to 1."""
    mask = cand_mask.astype(bool)
    alpha_t = np.where(mask, 1.0, evidence + 1.0)
    s0 = alpha_t.sum(axis=1)
    k = evidence.shape[1]
    kl = special.gammaln(s0) - special.gammaln(float(k))
    kl -= special.gammaln(alpha_t).sum(axis=1)
    kl += ((alpha_t - 1.0) * (special.digamma(alpha_t) - special.digamma(s0)[:, None])).sum(axis=1)
    return kl


def kl_value_grad(evidence, cand_mask):
    """`kl_value` plus its gradient w.r.t. evidence (zero on candidates)."""
    mask = cand_mask.astype(bool)
    alpha_t = np.where(mask, 1.0, evidence + 1.0)
    s0 = alpha_t.sum(axis=1)
    k = evidence.shape[1]
    kl = special.gammaln(s0) - special.gammaln(float(k))
    kl -= special.gammaln(alpha_t).sum(axis=1)
    kl += ((alpha_t - 1.0) * (special.digamma(alpha_t) - special.digamma(s0)[:, None])).sum(axis=1)

    grad = (alpha_t - 1.0) * special.polygamma(1, alpha_t)
    grad -= ((s0 - k) * special.polygamma(1, s0))[:, None]
    grad[mask] = 0.0
    return kl, grad


def ce_loss_value_grad(evidence, weights):
    """Per-row expected cross-entropy under Dirichlet(evidence + 1) and
    its gradient w.r.t. evidence."""
    alpha = evidence + 1.0
    strength = alpha.sum(axis=1)
    coeff = special.digamma(strength)[:, None] - special.digamma(alpha)
    loss = (weights * coeff).sum(axis=1)
    grad = (weights.sum(axis=1) * special.polygamma(1, strength))[:, None]
    grad = grad - weights * special.polygamma(1, alpha)
    return loss, grad


def mse_weight_update(pbar, cand_mask):
    """Row-wise constrained minimizer of the squared loss: keep candidate
    probabilities and spread the non-candidate mass uniformly over the
    candidates.  Negative entries (impossible for rows on the simplex, but
    guarded anyway) are clamped to zero and the row renormalized; returns
    the updated matrix and the number of clamped rows."""
    mask = cand_mask.astype(bool)
    sizes = mask.sum(axis=1)
    cand_mass = np.where(mask, pbar, 0.0).sum(axis=1)
    share = (1.0 - cand_mass) / sizes
    out = np.where(mask, pbar + share[:, None], 0.0)

    neg = out < 0.0
    n_clamped = 0
    if neg.any():
        rows = np.unique(np.nonzero(neg)[0])
        n_clamped = len(rows)
        out[neg] = 0.0
        row_sum = out[rows].sum(axis=1)
        for r, s in zip(rows, row_sum):
            if s > 0.0:
                out[r] /= s
            else:
                out[r] = mask[r] / sizes[r]
    return out, n_clamped
