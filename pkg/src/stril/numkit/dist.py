"""Gaussian and categorical helpers used by the sequence model and the indicators."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from . import tensor as tn
from .tensor import Tensor, as_tensor

SIGMA_FLOOR = 1e-6
NLL_PROB_FLOOR = 1e-12


def positive_scale(raw) -> Tensor:
    """softplus(raw) + 1e-6, the map from unconstrained outputs to std devs."""
    return tn.softplus(raw) + SIGMA_FLOOR


def _check_sigma(*sigmas) -> None:
    for s in sigmas:
        data = s.data if isinstance(s, Tensor) else np.asarray(s)
        if np.any(data <= 0):
            raise ValueError("standard deviations must be strictly positive")


def kl_diag_gaussian(mu_q, sigma_q, mu_p, sigma_p) -> Tensor:
    """KL(N(mu_q, diag sigma_q^2) || N(mu_p, diag sigma_p^2)), summed over the last axis.

    Inputs may carry a leading batch axis, in which case one value per row is
    returned.
    """
    mu_q, sigma_q, mu_p, sigma_p = map(as_tensor, (mu_q, sigma_q, mu_p, sigma_p))
    _check_sigma(sigma_q, sigma_p)
    if not (mu_q.shape == sigma_q.shape == mu_p.shape == sigma_p.shape):
        raise ValueError("all Gaussian parameters must share one shape")
    var_ratio = tn.square(sigma_q / sigma_p)
    mean_term = tn.square((mu_q - mu_p) / sigma_p)
    per_dim = 0.5 * (var_ratio + mean_term - 1.0) - tn.log(sigma_q / sigma_p)
    return tn.tsum(per_dim, axis=-1)


class CategoricalStats(NamedTuple):
    probs: np.ndarray
    nll: Tensor | None
    entropy: Tensor


def categorical_stats(logits, target=None) -> CategoricalStats:
    """Softmax probabilities, optional negative log-likelihood, and entropy.

    Works row-wise when ``logits`` has a leading batch axis; ``target`` then
    holds one action index per row.
    """
    logits = as_tensor(logits)
    n = logits.shape[-1]
    logp = tn.log_softmax(logits, axis=-1)
    probs = np.exp(logp.data)
    # exp(logp) is 0 only on underflow, where p*logp -> 0 is the right limit
    p_t = tn.exp(logp)
    entropy = -tn.tsum(p_t * logp, axis=-1)
    nll = None
    if target is not None:
        idx = np.asarray(target, dtype=np.int64)
        if np.any(idx < 0) or np.any(idx >= n):
            raise IndexError(f"target index out of range for {n} categories")
        nll = -tn.clip_min(tn.pick(logp, idx), math.log(NLL_PROB_FLOOR))
    return CategoricalStats(probs, nll, entropy)


def gaussian_reparam(mu, sigma, rng: np.random.Generator | None = None, noise=None) -> tuple[Tensor, np.ndarray]:
    """Differentiable sample ``mu + sigma * eps`` with ``eps ~ N(0, I)``.

    Pass ``noise`` to reuse a pre-drawn ``eps`` (used to fix randomness across
    finite-difference evaluations and batched inference).
    """
    mu, sigma = as_tensor(mu), as_tensor(sigma)
    _check_sigma(sigma)
    if noise is None:
        if rng is None:
            raise ValueError("either rng or noise is required")
        noise = rng.standard_normal(mu.shape)
    noise = np.asarray(noise, dtype=np.float64)
    return mu + sigma * noise, noise
