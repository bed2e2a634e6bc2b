"""Zero-inflated negative binomial likelihood and Gaussian KL divergences.

The NB pmf with mean ``mu`` and inverse dispersion ``theta`` is written with
the two stable log ratios

    log(theta / (theta + mu)) = -log1p(mu / theta)
    log(mu / (theta + mu))    = -log1p(theta / mu)

so neither ratio loses precision when ``mu`` and ``theta`` differ by many
orders of magnitude.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from ..errors import ValidationError
from ..numkit import tensor as T
from ..numkit.rng import RngStream


@dataclass(frozen=True)
class ZinbParams:
    """Per-gene ZINB parameters: mean ``mu``, inverse dispersion ``theta``, zero-inflation ``pi``."""

    mu: np.ndarray
    theta: np.ndarray
    pi: np.ndarray


def zinb_log_pmf_t(y, mu, theta, log_pi, log1m_pi) -> T.Tensor:
    """Elementwise ZINB log-pmf on tensors.

    ``log_pi``/``log1m_pi`` are log(pi) and log(1 - pi); passing them
    separately lets callers form both from a logit without cancellation.
    """
    y = np.asarray(y, dtype=np.float64)
    mu, theta = T.as_tensor(mu), T.as_tensor(theta)
    log_theta_ratio = -T.log1p(mu / theta)
    log_mu_ratio = -T.log1p(theta / mu)
    nb_zero = theta * log_theta_ratio
    zero_case = T.logaddexp(log_pi, log1m_pi + nb_zero)
    nb = (
        T.lgamma(theta + y)
        - T.lgamma(theta)
        - special.gammaln(y + 1.0)
        + nb_zero
        + T.where(y > 0, log_mu_ratio * y, 0.0)
    )
    return T.where(y == 0, zero_case, log1m_pi + nb)


def zinb_log_pmf(y, mu, theta, pi) -> np.ndarray:
    """Elementwise ZINB log-pmf for arrays (broadcasting)."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0):
        raise ValidationError("ZINB counts must be non-negative")
    pi = np.asarray(pi, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = zinb_log_pmf_t(y, mu, theta, np.log(pi), np.log1p(-pi)).data
    return out


def zinb_log_prob(params: ZinbParams, s) -> float:
    """Total ZINB log-likelihood of count vector ``s`` (summed over genes)."""
    return float(np.sum(zinb_log_pmf(s, params.mu, params.theta, params.pi)))


def nb_log_pmf(y, mu, theta) -> np.ndarray:
    """Plain NB log-pmf via the gamma-function form (no zero inflation)."""
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    return (
        special.gammaln(y + theta) - special.gammaln(theta) - special.gammaln(y + 1.0)
        - theta * np.log1p(mu / theta) - y * np.log1p(theta / mu)
    )


def _check_var(*vs):
    for v in vs:
        if np.any(np.asarray(v) <= 0):
            raise ValidationError("variances must be strictly positive")


def kl_gaussian(mu1, var1, mu2, var2) -> float:
    """KL(N(mu1, diag var1) || N(mu2, diag var2)), summed over all dimensions.

    Arguments broadcast against each other; scalars give the 1-D case.
    """
    mu1, var1, mu2, var2 = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (mu1, var1, mu2, var2)))
    _check_var(var1, var2)
    return float(0.5 * np.sum(np.log(var2) - np.log(var1) - 1.0 + var1 / var2 + (mu2 - mu1) ** 2 / var2))


def kl_lognormal(mu1, var1, mu2, var2) -> float:
    """KL between log-normals; equal to the KL of the underlying Gaussians."""
    return kl_gaussian(mu1, var1, mu2, var2)


def kl_gaussian_t(mu1, var1, mu2, var2, axis=-1) -> T.Tensor:
    """Per-row diagonal Gaussian KL on tensors, summed over ``axis``."""
    mu1, var1, mu2, var2 = (T.as_tensor(a) for a in (mu1, var1, mu2, var2))
    diff = mu2 - mu1
    terms = T.log(var2) - T.log(var1) - 1.0 + var1 / var2 + diff * diff / var2
    return T.tsum(terms, axis=axis) * 0.5


def sample_zinb_chain(rho, library, theta, tau, rng: RngStream) -> np.ndarray:
    """Draw counts through Gamma -> Poisson -> Bernoulli.

    ``w ~ Gamma(shape=theta, rate=theta/rho)`` has mean ``rho``;
    ``v ~ Poisson(library * w)`` is then NB with mean ``library * rho`` and
    inverse dispersion ``theta``; ``b ~ Bernoulli(tau)`` zeroes the count.
    """
    rho = np.asarray(rho, dtype=np.float64)
    theta = np.broadcast_to(np.asarray(theta, dtype=np.float64), rho.shape)
    w = rng.gamma(theta, rho / theta)
    v = rng.poisson(np.asarray(library, dtype=np.float64) * w)
    b = rng.bernoulli(np.broadcast_to(tau, rho.shape))
    return np.where(b, 0, v).astype(np.int64)
