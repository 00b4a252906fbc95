"""PMF, NBMF and GPMF: likelihoods, multiplicative updates and fitters.

All three fitters are majorization-minimization schemes, so every sweep
leaves the model's own negative log-likelihood non-increasing. GPMF carries a
dispersion ``theta_i`` per row (or one shared ``theta``) and alternates
W -> H -> theta updates, recomputing ``S = W H^T`` between sub-steps.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
from scipy.special import gammaln

from . import _kernels
from .errors import NonFiniteLikelihood, NumericalUnderflow
from .factor_core import ConvergenceSpec, FactorPair, as_count_matrix, converged

S_FLOOR = 1e-10
THETA_FLOOR = 1e-8
# keeps factors strictly positive when a row/column of Y is all zero
FACTOR_FLOOR = 1e-300
DENOM_FLOOR = 1e-300

ROWWISE = "rowwise"
SHARED = "shared"


@dataclass
class DispersionParams:
    mode: Literal["rowwise", "shared"]
    values: np.ndarray

    def __post_init__(self):
        if self.mode not in (ROWWISE, SHARED):
            raise ValueError(f"unknown dispersion mode {self.mode!r}")
        self.values = np.atleast_1d(np.asarray(self.values, dtype=float)).copy()
        if self.mode == SHARED and self.values.size != 1:
            raise ValueError("shared dispersion holds exactly one value")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("dispersion values must be finite and >= 0")

    @classmethod
    def rowwise(cls, values) -> "DispersionParams":
        return cls(ROWWISE, values)

    @classmethod
    def shared(cls, value: float) -> "DispersionParams":
        return cls(SHARED, [value])

    def column(self, I: int) -> np.ndarray:
        """theta broadcast as an (I, 1) column."""
        if self.mode == SHARED:
            return np.full((I, 1), self.values[0])
        if self.values.size != I:
            raise ValueError(f"expected {I} row dispersions, got {self.values.size}")
        return self.values[:, None]


@dataclass(frozen=True)
class NbmfConfig:
    alpha: float = 5.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")


@dataclass
class FitReport:
    model: str
    factors: FactorPair
    nll_trace: list[float]
    iterations: int
    converged_flag: bool
    nll_initial: float
    dispersion: DispersionParams | None = None
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def final_nll(self) -> float:
        return self.nll_trace[-1] if self.nll_trace else self.nll_initial


# ---------------------------------------------------------------------------
# likelihoods


def _recon(W, H):
    return np.maximum(W @ H.T, S_FLOOR)


def _check_finite(value: float, what: str) -> float:
    if not np.isfinite(value):
        raise NonFiniteLikelihood(f"{what} negative log-likelihood is {value}")
    return float(value)


def _log_factorial_sum(Y) -> float:
    return float(gammaln(Y + 1.0).sum())


def _nll_gpmf_terms(Y, S, theta_col):
    log1p_t = np.log1p(theta_col)
    scaled = (S + theta_col * Y) / (1.0 + theta_col)
    # for y == 0 the two log terms cancel exactly since S + theta*0 == S
    log_eta = np.log(S) - log1p_t
    log_scaled = np.log(S + theta_col * Y) - log1p_t
    return -log_eta - (Y - 1.0) * log_scaled + scaled


def _nll_gpmf(Y, S, theta_col, log_fact):
    return _nll_gpmf_terms(Y, S, theta_col).sum() + log_fact


def _nll_pmf(Y, S, log_fact):
    return (S - Y * np.log(S)).sum() + log_fact


def _nll_nbmf(Y, S, alpha, log_fact):
    # (y + alpha) log(s + alpha) - alpha log(alpha), split so that the
    # factor-dependent part does not drown in O(alpha) terms
    terms = (-Y * np.log(S) + (Y + alpha) * np.log1p(S / alpha) + Y * np.log(alpha)
             - gammaln(Y + alpha) + gammaln(alpha))
    return terms.sum() + log_fact


def nll_gpmf(Y, f: FactorPair, d: DispersionParams) -> float:
    """GPMF negative log-likelihood, including the ``log y!`` constant."""
    Y = as_count_matrix(Y).astype(float)
    S = _recon(f.W, f.H)
    return _check_finite(_nll_gpmf(Y, S, d.column(Y.shape[0]), _log_factorial_sum(Y)), "GPMF")


def nll_pmf(Y, f: FactorPair) -> float:
    Y = as_count_matrix(Y).astype(float)
    return _check_finite(_nll_pmf(Y, _recon(f.W, f.H), _log_factorial_sum(Y)), "PMF")


def nll_nbmf(Y, f: FactorPair, c: NbmfConfig) -> float:
    """NB negative log-likelihood with ``y ~ NB(alpha, s / (s + alpha))``."""
    Y = as_count_matrix(Y).astype(float)
    return _check_finite(
        _nll_nbmf(Y, _recon(f.W, f.H), c.alpha, _log_factorial_sum(Y)), "NBMF"
    )


def grad_gpmf(Y, f: FactorPair, d: DispersionParams):
    """Analytic gradient of :func:`nll_gpmf` w.r.t. ``W``, ``H`` and the theta values."""
    Y = as_count_matrix(Y).astype(float)
    S = f.W @ f.H.T
    th = d.column(Y.shape[0])
    D = S + th * Y
    dS = -1.0 / S - (Y - 1.0) / D + 1.0 / (1.0 + th)
    dth = Y / (1.0 + th) - (Y - 1.0) * Y / D + (Y - S) / (1.0 + th) ** 2
    row_dth = dth.sum(axis=1)
    g_theta = np.array([row_dth.sum()]) if d.mode == SHARED else row_dth
    return dS @ f.H, dS.T @ f.W, g_theta


# ---------------------------------------------------------------------------
# update kernels (arrays in, arrays out)


def _gpmf_weights(Y, S, theta_col):
    # y (s + theta) / ((s + theta y) s); zero wherever y == 0
    return Y * (S + theta_col) / ((S + theta_col * Y) * S)


def _guard(den):
    if np.any(den < DENOM_FLOOR):
        raise NumericalUnderflow("multiplicative-update denominator below 1e-300")
    return den


def _w_step_gpmf(Y, W, H, theta_col):
    S = _recon(W, H)
    num = _gpmf_weights(Y, S, theta_col) @ H
    den = _guard(H.sum(axis=0)[None, :] / (1.0 + theta_col))
    return np.maximum(W * num / den, FACTOR_FLOOR)


def _h_step_gpmf(Y, W, H, theta_col):
    S = _recon(W, H)
    num = _gpmf_weights(Y, S, theta_col).T @ W
    den = _guard((W / (1.0 + theta_col)).sum(axis=0)[None, :])
    return np.maximum(H * num / den, FACTOR_FLOOR)


def theta_quadratic_root(alpha, beta, gamma):
    """Non-negative root of ``alpha t^2 + beta t - gamma = 0`` for ``alpha > 0``, ``gamma >= 0``.

    Uses the cancellation-free form ``2 gamma / (beta + sqrt(disc))`` when ``beta > 0``.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    sq = np.sqrt(beta * beta + 4.0 * alpha * gamma)
    with np.errstate(divide="ignore", invalid="ignore"):
        pos = 2.0 * gamma / (beta + sq)
        neg = (sq - beta) / (2.0 * alpha)
    root = np.where(beta > 0, pos, neg)
    root = np.where((beta > 0) & (gamma == 0), 0.0, root)
    return root if root.ndim else float(root)


def _theta_stats(Y, S, theta_col, axis):
    D = S + theta_col * Y
    ym1 = np.maximum(Y - 1.0, 0.0)
    eta1 = S / D
    n_pos = (Y > 0).sum(axis=axis)
    alpha = n_pos + (ym1 * eta1).sum(axis=axis)
    gamma = (ym1 * (1.0 - eta1)).sum(axis=axis)
    beta = (Y - S).sum(axis=axis) - gamma + alpha
    return alpha, beta, gamma


def theta_statistics(Y, f: FactorPair, d: DispersionParams):
    """Per-row (or pooled, for shared mode) quadratic coefficients ``(alpha, beta, gamma)``."""
    Y = as_count_matrix(Y).astype(float)
    S = _recon(f.W, f.H)
    axis = None if d.mode == SHARED else 1
    return _theta_stats(Y, S, d.column(Y.shape[0]), axis)


def _theta_step(Y, S, theta, mode):
    """New theta vector (length I, or 1 when shared)."""
    if mode == SHARED:
        a, b, g = _theta_stats(Y, S, theta[0], None)
        if a <= 0:
            return theta.copy()
        return np.array([max(theta_quadratic_root(a, b, g), THETA_FLOOR)])
    a, b, g = _theta_stats(Y, S, theta[:, None], 1)
    new = theta.copy()
    ok = a > 0  # all-zero rows carry no dispersion information: frozen
    new[ok] = np.maximum(theta_quadratic_root(a[ok], b[ok], g[ok]), THETA_FLOOR)
    return new


def update_w_gpmf(Y, f: FactorPair, d: DispersionParams) -> np.ndarray:
    Y = as_count_matrix(Y).astype(float)
    return _w_step_gpmf(Y, f.W, f.H, d.column(Y.shape[0]))


def update_h_gpmf(Y, f: FactorPair, d: DispersionParams) -> np.ndarray:
    Y = as_count_matrix(Y).astype(float)
    return _h_step_gpmf(Y, f.W, f.H, d.column(Y.shape[0]))


def update_theta_rowwise(Y, f: FactorPair, d: DispersionParams) -> DispersionParams:
    Y = as_count_matrix(Y).astype(float)
    theta = d.column(Y.shape[0])[:, 0].copy()
    return DispersionParams.rowwise(_theta_step(Y, _recon(f.W, f.H), theta, ROWWISE))


def update_shared_gpmf(Y, f: FactorPair, theta: float):
    """One shared-theta sweep: returns ``(W, H, theta)``."""
    Y = as_count_matrix(Y).astype(float)
    th = np.array([float(theta)])
    W = _w_step_gpmf(Y, f.W, f.H, th[0])
    H = _h_step_gpmf(Y, W, f.H, th[0])
    new = _theta_step(Y, _recon(W, H), th, SHARED)
    return W, H, float(new[0])


def update_pmf(Y, f: FactorPair):
    """Lee-Seung KL sweep: returns ``(W, H)``."""
    Y = as_count_matrix(Y).astype(float)
    W = _w_step_pmf(Y, f.W, f.H)
    return W, _h_step_pmf(Y, W, f.H)


def update_nbmf(Y, f: FactorPair, c: NbmfConfig):
    Y = as_count_matrix(Y).astype(float)
    W = _w_step_nbmf(Y, f.W, f.H, c.alpha)
    return W, _h_step_nbmf(Y, W, f.H, c.alpha)


def _w_step_pmf(Y, W, H):
    S = _recon(W, H)
    den = _guard(H.sum(axis=0)[None, :])
    return np.maximum(W * ((Y / S) @ H) / den, FACTOR_FLOOR)


def _h_step_pmf(Y, W, H):
    S = _recon(W, H)
    den = _guard(W.sum(axis=0)[None, :])
    return np.maximum(H * ((Y / S).T @ W) / den, FACTOR_FLOOR)


def _w_step_nbmf(Y, W, H, alpha):
    S = _recon(W, H)
    den = _guard(((Y + alpha) / (S + alpha)) @ H)
    return np.maximum(W * ((Y / S) @ H) / den, FACTOR_FLOOR)


def _h_step_nbmf(Y, W, H, alpha):
    S = _recon(W, H)
    den = _guard(((Y + alpha) / (S + alpha)).T @ W)
    return np.maximum(H * ((Y / S).T @ W) / den, FACTOR_FLOOR)


# ---------------------------------------------------------------------------
# fitters


def _iterate(sweep: Callable[[], tuple[bool, float]], nll0: float, offset: float,
             spec: ConvergenceSpec):
    trace: list[float] = []
    prev = nll0
    done = False
    for _ in range(spec.max_iterations):
        ok, core = sweep()
        if not ok:
            raise NumericalUnderflow("multiplicative-update denominator below 1e-300")
        cur = core + offset
        if not np.isfinite(cur):
            raise NonFiniteLikelihood(f"negative log-likelihood became {cur} at sweep {len(trace) + 1}")
        trace.append(float(cur))
        # log-likelihood is -nll; the criterion only sees magnitudes
        if converged(-prev, -cur, spec):
            done = True
            break
        prev = cur
    return trace, done


def _start(Y, init: FactorPair):
    Y = np.ascontiguousarray(as_count_matrix(Y), dtype=float)
    W = np.ascontiguousarray(init.W, dtype=float).copy()
    H = np.ascontiguousarray(init.H, dtype=float).copy()
    if W.shape[0] != Y.shape[0] or H.shape[0] != Y.shape[1]:
        raise ValueError(f"factor shapes {W.shape}, {H.shape} do not match data {Y.shape}")
    if np.any(W <= 0) or np.any(H <= 0):
        raise ValueError("initial factors must be strictly positive")
    return Y, W, H


def fit_gpmf(Y, init: FactorPair, d0: DispersionParams | None = None,
             spec: ConvergenceSpec = ConvergenceSpec()) -> FitReport:
    """Maximum-likelihood GPMF by alternating W, H and theta updates.

    ``d0`` defaults to row-wise dispersions initialized at 1; its ``mode``
    selects row-wise or shared theta.
    """
    t0 = time.perf_counter()
    Y, W, H = _start(Y, init)
    I = Y.shape[0]
    if d0 is None:
        d0 = DispersionParams.rowwise(np.ones(I))
    shared = d0.mode == SHARED
    theta = np.ascontiguousarray(d0.column(I)[:, 0], dtype=float).copy()
    log_fact = _log_factorial_sum(Y)
    nll0 = _check_finite(_nll_gpmf(Y, _recon(W, H), theta[:, None], log_fact), "GPMF")

    trace, done = _iterate(
        lambda: _kernels.gpmf_sweep(Y, W, H, theta, shared),
        nll0, log_fact, spec)
    values = theta[:1] if shared else theta
    return FitReport("gpmf", FactorPair(W, H), trace, len(trace), done, nll0,
                     dispersion=DispersionParams(d0.mode, values),
                     wall_time=time.perf_counter() - t0)


def fit_pmf(Y, init: FactorPair, spec: ConvergenceSpec = ConvergenceSpec()) -> FitReport:
    """Poisson NMF with Lee-Seung KL multiplicative updates."""
    t0 = time.perf_counter()
    Y, W, H = _start(Y, init)
    log_fact = _log_factorial_sum(Y)
    nll0 = _check_finite(_nll_pmf(Y, _recon(W, H), log_fact), "PMF")
    trace, done = _iterate(lambda: _kernels.pmf_sweep(Y, W, H),
                           nll0, log_fact, spec)
    return FitReport("pmf", FactorPair(W, H), trace, len(trace), done, nll0,
                     wall_time=time.perf_counter() - t0)


def fit_nbmf(Y, init: FactorPair, c: NbmfConfig = NbmfConfig(),
             spec: ConvergenceSpec = ConvergenceSpec()) -> FitReport:
    """NB NMF with fixed ``alpha``; MM updates from a tangent bound on ``log(s + alpha)``."""
    t0 = time.perf_counter()
    Y, W, H = _start(Y, init)
    S0 = _recon(W, H)
    nll0 = _check_finite(_nll_nbmf(Y, S0, c.alpha, _log_factorial_sum(Y)), "NBMF")
    # everything except -y log s + (y + alpha) log1p(s / alpha) is factor-free
    offset = nll0 - float((-Y * np.log(S0) + (Y + c.alpha) * np.log1p(S0 / c.alpha)).sum())
    trace, done = _iterate(lambda: _kernels.nbmf_sweep(Y, W, H, c.alpha),
                           nll0, offset, spec)
    return FitReport("nbmf", FactorPair(W, H), trace, len(trace), done, nll0,
                     wall_time=time.perf_counter() - t0, extra={"alpha": c.alpha})
