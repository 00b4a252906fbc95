"""Generalized Poisson (GP) distribution kernel.

Two parameterizations are supported:

* natural ``GP(eta, mu)`` with pmf ``eta (eta + mu x)^(x-1) exp(-(eta + mu x)) / x!``
* mean/dispersion ``(lam, theta)`` with ``eta = lam (1 - mu)``, ``mu = theta / (1 + theta)``,
  so that ``E[Y] = lam`` and ``V[Y] = lam (1 + theta)^2``.

Only the overdispersed branch ``0 <= mu < 1`` is implemented. The module also
carries the negative binomial helpers used to compare tails against a
variance-matched NB.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import DomainError, NonTermination

MAX_GENERATIONS = 10**6


@dataclass(frozen=True)
class GPParamsNatural:
    eta: float
    mu: float

    def __post_init__(self):
        if not (self.eta >= 0 and math.isfinite(self.eta)):
            raise DomainError(f"eta must be finite and >= 0, got {self.eta}")
        if not (0.0 <= self.mu < 1.0):
            raise DomainError(f"mu must lie in [0, 1), got {self.mu}")


@dataclass(frozen=True)
class GPParamsMeanDisp:
    lam: float
    theta: float

    def __post_init__(self):
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise DomainError(f"lam must be finite and >= 0, got {self.lam}")
        if not (self.theta >= 0 and math.isfinite(self.theta)):
            raise DomainError(f"theta must be finite and >= 0, got {self.theta}")


@dataclass(frozen=True)
class NBParams:
    r: float
    p: float

    def __post_init__(self):
        if not self.r > 0:
            raise DomainError(f"r must be > 0, got {self.r}")
        if not (0.0 <= self.p <= 1.0):
            raise DomainError(f"p must lie in [0, 1], got {self.p}")


def to_natural(p: GPParamsMeanDisp) -> GPParamsNatural:
    mu = p.theta / (1.0 + p.theta)
    return GPParamsNatural(eta=p.lam * (1.0 - mu), mu=mu)


def to_mean_disp(p: GPParamsNatural) -> GPParamsMeanDisp:
    return GPParamsMeanDisp(lam=p.eta / (1.0 - p.mu), theta=p.mu / (1.0 - p.mu))


def gp_logpmf(x, eta, mu):
    """Vectorized GP log-pmf in the natural parameterization.

    Returns ``-inf`` where the mass is zero (``eta == 0`` and ``x > 0``).
    """
    x = np.asarray(x, dtype=float)
    eta = np.asarray(eta, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if np.any(x < 0):
        raise DomainError("x must be non-negative")
    x, eta, mu = np.broadcast_arrays(x, eta, mu)
    out = np.empty(x.shape)
    zero = x == 0
    out[zero] = -eta[zero]
    pos = ~zero
    xp, ep, mp = x[pos], eta[pos], mu[pos]
    rate = ep + mp * xp
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.log(ep) + (xp - 1.0) * np.log(rate) - rate - gammaln(xp + 1.0)
    val[ep == 0] = -np.inf
    out[pos] = val
    return out if out.ndim else float(out)


def gp_log_pmf(x, p: GPParamsNatural):
    """Log-pmf of ``GP(p.eta, p.mu)`` at the count(s) ``x``."""
    return gp_logpmf(x, p.eta, p.mu)


def gp_logpmf_mean_disp(x, lam, theta):
    """GP log-pmf with mean ``lam`` and dispersion ``theta`` (broadcasting)."""
    theta = np.asarray(theta, dtype=float)
    mu = theta / (1.0 + theta)
    return gp_logpmf(x, np.asarray(lam, dtype=float) * (1.0 - mu), mu)


def gp_moments(p: GPParamsMeanDisp) -> tuple[float, float]:
    return p.lam, p.lam * (1.0 + p.theta) ** 2


def gp_sample_array(lam, theta, rng: np.random.Generator):
    """Draw one GP count per element of ``broadcast(lam, theta)``.

    Each draw is the total progeny of a Galton-Watson process started from
    ``Poisson(eta)`` ancestors whose offspring are ``Poisson(mu)``; this
    total is exactly ``GP(eta, mu)`` distributed.
    """
    lam, theta = np.broadcast_arrays(np.asarray(lam, dtype=float), np.asarray(theta, dtype=float))
    if np.any(lam < 0) or np.any(theta < 0):
        raise DomainError("lam and theta must be non-negative")
    mu = theta / (1.0 + theta)
    eta = lam * (1.0 - mu)
    current = np.asarray(rng.poisson(eta), dtype=np.int64).reshape(eta.shape)
    total = current.copy()
    active = np.flatnonzero(current > 0)
    generations = 0
    while active.size:
        generations += 1
        if generations > MAX_GENERATIONS:
            raise NonTermination("branching sampler exceeded the generation cap")
        offspring = rng.poisson(mu.flat[active] * current.flat[active])
        current.flat[active] = offspring
        total.flat[active] += offspring
        active = active[offspring > 0]
    return total


def gp_sample(p: GPParamsMeanDisp, rng: np.random.Generator, size=None):
    """Exact GP draw(s); a scalar ``int`` when ``size`` is None."""
    shape = () if size is None else size
    out = gp_sample_array(np.full(shape, p.lam), p.theta, rng)
    return int(out[()]) if size is None else out


def gp_sample_inversion(p: GPParamsMeanDisp, rng: np.random.Generator, size=None):
    """Reference sampler by sequential CDF inversion over the log-pmf.

    Slower than :func:`gp_sample`; kept as an independent check.
    """
    nat = to_natural(p)
    u = rng.random(() if size is None else size)
    umax = float(np.max(u))
    xs, cdf = [], []
    acc, x = 0.0, 0
    while acc < umax and acc < 1.0 - 1e-15:
        acc += math.exp(gp_log_pmf(x, nat))
        xs.append(x)
        cdf.append(acc)
        x += 1
        if x > 10**7:
            raise NonTermination("CDF inversion did not reach the requested quantile")
    idx = np.searchsorted(np.asarray(cdf), u, side="right")
    idx = np.minimum(idx, len(xs) - 1)
    out = np.asarray(xs)[idx]
    return int(out) if size is None else out


def nb_logpmf(x, r, p):
    """Log-pmf of ``NB(r, p)``: ``Gamma(x+r)/(x! Gamma(r)) p^x (1-p)^r``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (gammaln(x + r) - gammaln(x + 1.0) - gammaln(r)
               + np.where(x > 0, x * np.log(p), 0.0) + r * np.log1p(-p))
    return out if np.ndim(out) else float(out)


def nb_matched(p: GPParamsMeanDisp) -> NBParams:
    """NB with the same mean and variance as the GP ``p``."""
    alpha = nb_alpha_matching(p)
    return NBParams(r=alpha, p=p.lam / (p.lam + alpha))


def kurtosis_gp(p: GPParamsMeanDisp) -> float:
    """Excess kurtosis of the GP with mean ``lam`` and dispersion ``theta``."""
    if p.lam <= 0:
        raise DomainError("kurtosis is undefined for lam = 0")
    return 1.0 / p.lam + (15.0 * p.theta**2 + 10.0 * p.theta) / p.lam


def nb_alpha_matching(p: GPParamsMeanDisp) -> float:
    """NB dispersion ``alpha`` giving ``NB(alpha, lam/(lam+alpha))`` the GP's variance."""
    if p.lam <= 0:
        raise DomainError("lam must be > 0")
    if p.theta <= 0:
        raise DomainError("theta = 0 has Poisson variance; no finite alpha matches it")
    return p.lam / (p.theta**2 + 2.0 * p.theta)


def kurtosis_nb(lam: float, alpha: float) -> float:
    """Excess kurtosis of ``NB(alpha, lam/(lam+alpha))``."""
    if lam <= 0 or alpha <= 0:
        raise DomainError("lam and alpha must be > 0")
    return 1.0 / lam + 6.0 / alpha - 1.0 / (lam + alpha)


def kurtosis_gap(p: GPParamsMeanDisp) -> float:
    """GP minus variance-matched NB kurtosis; zero at ``theta = 0``."""
    if p.lam <= 0:
        raise DomainError("lam must be > 0")
    t = p.theta
    return (9.0 * t**4 + 16.0 * t**3 + 6.0 * t**2) / (p.lam * (t + 1.0) ** 2)
