"""Dirichlet/Beta evidence algebra and the expected cross-entropy (EDL) loss.

Every function accepts a single parameter vector of length K or a stack of
them with the class axis last; results keep the leading shape. Concentration
parameters are plain float64 arrays (``alpha``) rather than a wrapper type.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .special import DomainError, digamma, log_gamma, trigamma

__all__ = [
    "DomainError",
    "Belief",
    "check_alpha",
    "log_beta_function",
    "dirichlet_log_pdf",
    "evidence_to_dirichlet",
    "dirichlet_to_belief",
    "belief_to_dirichlet",
    "model_uncertainty",
    "expected_probability",
    "entropy_bits",
    "data_uncertainty",
    "edl_loss",
    "edl_loss_grad",
    "kl_to_uniform",
    "kl_to_uniform_grad",
]

SIMPLEX_TOL = 1e-9


class Belief(NamedTuple):
    """Subjective-logic opinion: per-class belief masses plus uncertainty mass."""

    belief: np.ndarray
    uncertainty: np.ndarray | float


def _scalarize(value: np.ndarray):
    return float(value) if np.ndim(value) == 0 else value


def check_alpha(alpha) -> np.ndarray:
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim == 0 or a.shape[-1] < 2:
        raise DomainError("alpha needs at least two classes on the last axis")
    if not np.all(np.isfinite(a)) or np.any(a <= 0.0):
        raise DomainError("alpha entries must be finite and > 0")
    return a


def _check_onehot(y, shape) -> np.ndarray:
    t = np.asarray(y, dtype=np.float64)
    if t.shape != shape:
        raise DomainError(f"target shape {t.shape} does not match alpha shape {shape}")
    if not np.all((t == 0.0) | (t == 1.0)) or not np.all(t.sum(axis=-1) == 1.0):
        raise DomainError("target must be one-hot along the class axis")
    return t


def log_beta_function(alpha):
    """ln B(alpha) = sum ln Gamma(alpha_i) - ln Gamma(sum alpha_i)."""
    a = check_alpha(alpha)
    value = np.sum(log_gamma(a), axis=-1) - log_gamma(a.sum(axis=-1))
    return _scalarize(value)


def dirichlet_log_pdf(alpha, point):
    """Log density of Dir(alpha) at a point of the probability simplex."""
    a = check_alpha(alpha)
    p = np.asarray(point, dtype=np.float64)
    if p.shape != a.shape:
        raise DomainError("point and alpha must have the same shape")
    if np.any(p < 0.0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > SIMPLEX_TOL):
        raise DomainError("point is not on the probability simplex")
    on_face = p == 0.0
    if np.any(on_face & (a < 1.0)):
        raise DomainError("density is unbounded on this face of the simplex")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(a == 1.0, 0.0, (a - 1.0) * np.log(p))
    value = terms.sum(axis=-1) - log_beta_function(a)
    return _scalarize(value)


def evidence_to_dirichlet(evidence) -> np.ndarray:
    e = np.asarray(evidence, dtype=np.float64)
    if not np.all(np.isfinite(e)) or np.any(e < 0.0):
        raise DomainError("evidence must be finite and nonnegative")
    return e + 1.0


def dirichlet_to_belief(alpha) -> Belief:
    a = check_alpha(alpha)
    strength = a.sum(axis=-1, keepdims=True)
    belief = (a - 1.0) / strength
    uncertainty = a.shape[-1] / strength[..., 0]
    return Belief(belief, _scalarize(uncertainty))


def belief_to_dirichlet(opinion: Belief) -> np.ndarray:
    """Inverse of :func:`dirichlet_to_belief`; needs uncertainty > 0."""
    b = np.asarray(opinion.belief, dtype=np.float64)
    u = np.asarray(opinion.uncertainty, dtype=np.float64)
    if np.any(u <= 0.0):
        raise DomainError("uncertainty 0 means infinite evidence")
    if np.any(b < 0.0) or np.any(np.abs(b.sum(axis=-1) + u - 1.0) > 1e-12):
        raise DomainError("belief masses and uncertainty must sum to 1")
    strength = b.shape[-1] / u
    return np.asarray(strength)[..., None] * b + 1.0


def model_uncertainty(alpha):
    """K / S: the uncertainty mass, 1 with no evidence and falling towards 0."""
    a = check_alpha(alpha)
    return _scalarize(a.shape[-1] / a.sum(axis=-1))


def expected_probability(alpha) -> np.ndarray:
    a = check_alpha(alpha)
    return a / a.sum(axis=-1, keepdims=True)


def entropy_bits(p):
    """Shannon entropy in bits along the last axis, with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, -p * np.log2(p), 0.0)
    return _scalarize(terms.sum(axis=-1))


def data_uncertainty(alpha):
    """Entropy (bits) of the Dirichlet mean."""
    return entropy_bits(expected_probability(alpha))


def edl_loss(alpha, y):
    """Expected cross-entropy E_{p~Dir(alpha)}[-sum_j y_j ln p_j].

    Closed form: sum_j y_j (psi(S) - psi(alpha_j)).
    """
    a = check_alpha(alpha)
    t = _check_onehot(y, a.shape)
    s = a.sum(axis=-1)
    value = t.sum(axis=-1) * digamma(s) - np.sum(t * digamma(a), axis=-1)
    return _scalarize(value)


def edl_loss_grad(alpha, y) -> np.ndarray:
    """d edl_loss / d alpha_k = (sum_j y_j) psi'(S) - y_k psi'(alpha_k)."""
    a = check_alpha(alpha)
    t = _check_onehot(y, a.shape)
    s = a.sum(axis=-1, keepdims=True)
    return t.sum(axis=-1, keepdims=True) * trigamma(s) - t * trigamma(a)


def kl_to_uniform(alpha):
    """KL(Dir(alpha) || Dir(1, ..., 1))."""
    a = check_alpha(alpha)
    k = a.shape[-1]
    s = a.sum(axis=-1)
    value = (
        log_gamma(s)
        - np.sum(log_gamma(a), axis=-1)
        - log_gamma(float(k))
        + np.sum((a - 1.0) * (digamma(a) - np.asarray(digamma(s))[..., None]), axis=-1)
    )
    return _scalarize(value)


def kl_to_uniform_grad(alpha) -> np.ndarray:
    a = check_alpha(alpha)
    s = a.sum(axis=-1, keepdims=True)
    return (a - 1.0) * trigamma(a) - (s - a.shape[-1]) * trigamma(s)
