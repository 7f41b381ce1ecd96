"""Multinomial opinions and their Dirichlet correspondence.

An opinion splits a prediction into per-class belief mass, an explicit
uncertainty mass, and a prior over classes.  Non-negative evidence maps
to an opinion (and, adding one per class, to Dirichlet parameters) such
that the opinion's projection and the Dirichlet mean coincide.

All types are immutable values and all operations are pure.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

#: Absolute tolerance for the simplex/additivity invariants; every
#: formula here is a short rational expression in float64.
TOL = 1e-12


def _as_vector(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DomainError(f"{name} must be a non-empty 1-D vector")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class MultinomialOpinion:
    """Belief vector, prior vector, and uncertainty mass, with the
    additivity constraint uncertainty + sum(belief) = 1."""

    belief: np.ndarray
    prior: np.ndarray
    uncertainty: float

    def __post_init__(self):
        b = _as_vector(self.belief, "belief")
        a = _as_vector(self.prior, "prior")
        u = float(self.uncertainty)
        object.__setattr__(self, "belief", b)
        object.__setattr__(self, "prior", a)
        object.__setattr__(self, "uncertainty", u)
        if b.shape != a.shape:
            raise DomainError("belief and prior must have the same length")
        if np.any(b < -TOL) or np.any(a < -TOL) or u < -TOL:
            raise DomainError("belief, prior and uncertainty must be non-negative")
        if abs(a.sum() - 1.0) > TOL:
            raise DomainError(f"prior must sum to 1, got {a.sum()!r}")
        if abs(u + b.sum() - 1.0) > TOL:
            raise DomainError(
                f"additivity violated: uncertainty + belief mass = {u + b.sum()!r}"
            )

    @property
    def num_classes(self):
        return self.belief.size


@dataclass(frozen=True)
class DirichletParams:
    """Dirichlet concentration vector; evidence plus one per class, so
    every component is at least 1."""

    alpha: np.ndarray

    def __post_init__(self):
        a = _as_vector(self.alpha, "alpha")
        object.__setattr__(self, "alpha", a)
        if np.any(a < 1.0 - TOL):
            raise DomainError(f"alpha components must be >= 1, got {a}")

    @property
    def strength(self):
        return float(self.alpha.sum())


def project(opinion):
    """Probability vector induced by an opinion: belief plus the prior
    scaled by the uncertainty mass.  A vacuous opinion (uncertainty 1)
    projects onto its prior."""
    return opinion.belief + opinion.prior * opinion.uncertainty


def uniform_prior(k):
    if k < 2:
        raise DomainError(f"need at least 2 classes, got {k}")
    return np.full(k, 1.0 / k)


def evidence_to_dirichlet(evidence):
    evidence = _as_vector(evidence, "evidence")
    if np.any(evidence < 0.0):
        raise DomainError("evidence must be non-negative")
    return DirichletParams(evidence + 1.0)


def dirichlet_mean(params):
    return params.alpha / params.strength


def dirichlet_var(params):
    """Componentwise variance: mean_j * (1 - mean_j) / (1 + strength)."""
    mean = dirichlet_mean(params)
    return mean * (1.0 - mean) / (1.0 + params.strength)


def opinion_from_evidence(evidence, prior=None):
    """Opinion with belief = evidence / (k + total evidence) and the
    remaining mass as uncertainty.  Zero evidence yields the vacuous
    opinion; scaling evidence up strictly reduces uncertainty."""
    evidence = _as_vector(evidence, "evidence")
    if np.any(evidence < 0.0):
        raise DomainError("evidence must be non-negative")
    k = evidence.size
    prior = uniform_prior(k) if prior is None else _as_vector(prior, "prior")
    denom = k + evidence.sum()
    belief = evidence / denom
    uncertainty = k / denom
    return MultinomialOpinion(belief, prior, uncertainty)
