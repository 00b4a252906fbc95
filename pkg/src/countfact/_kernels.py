"""Fused per-sweep loops for the fitters.

Each kernel performs one full sweep in place (W, then H with the new W, then
theta for GPMF) and returns ``(ok, nll)`` where ``nll`` omits every term that
does not depend on the factors or theta, and ``ok`` is False on a
denominator underflow. Rank-K contractions go through ``np.dot`` (BLAS);
elementwise work is fused into single passes. They mirror the array-level
updates in ``models`` and are checked against them in the test suite.
"""
import math

import numpy as np
from numba import njit

S_FLOOR = 1e-10
THETA_FLOOR = 1e-8
FACTOR_FLOOR = 1e-300
DENOM_FLOOR = 1e-300


@njit(cache=True)
def _recon(W, H):
    S = np.dot(W, H.T)
    I, J = S.shape
    for i in range(I):
        for j in range(J):
            if S[i, j] < S_FLOOR:
                S[i, j] = S_FLOOR
    return S


@njit(cache=True)
def _quad_root(a, b, g):
    sq = math.sqrt(b * b + 4.0 * a * g)
    if b > 0:
        if g == 0.0:
            return 0.0
        return 2.0 * g / (b + sq)
    return (sq - b) / (2.0 * a)


@njit(cache=True)
def _scale(F, num, den):
    # F <- max(F * num / den, floor); den broadcast over rows when 1-D
    n, K = F.shape
    for a in range(n):
        for k in range(K):
            v = F[a, k] * num[a, k] / den[a, k]
            F[a, k] = v if v > FACTOR_FLOOR else FACTOR_FLOOR


@njit(cache=True)
def _gpmf_ratio(Y, S, theta):
    I, J = Y.shape
    R = np.zeros((I, J))
    for i in range(I):
        th = theta[i]
        for j in range(J):
            y = Y[i, j]
            if y > 0:
                s = S[i, j]
                R[i, j] = y * (s + th) / ((s + th * y) * s)
    return R


@njit(cache=True)
def gpmf_sweep(Y, W, H, theta, shared):
    """One GPMF sweep; ``theta`` has length I (all equal when ``shared``)."""
    I, J = Y.shape
    K = W.shape[1]

    S = _recon(W, H)
    num = np.dot(_gpmf_ratio(Y, S, theta), H)
    hsum = H.sum(axis=0)
    den = np.empty((I, K))
    for i in range(I):
        for k in range(K):
            den[i, k] = hsum[k] / (1.0 + theta[i])
            if den[i, k] < DENOM_FLOOR:
                return False, np.nan
    _scale(W, num, den)

    S = _recon(W, H)
    num = np.dot(_gpmf_ratio(Y, S, theta).T, W)
    wden = np.zeros(K)
    for i in range(I):
        c = 1.0 / (1.0 + theta[i])
        for k in range(K):
            wden[k] += W[i, k] * c
    denH = np.empty((J, K))
    for k in range(K):
        if wden[k] < DENOM_FLOOR:
            return False, np.nan
        denH[:, k] = wden[k]
    _scale(H, num, denH)

    S = _recon(W, H)
    a_row = np.zeros(I)
    g_row = np.zeros(I)
    b_row = np.zeros(I)
    for i in range(I):
        th = theta[i]
        a_part = 0.0
        g_part = 0.0
        n_pos = 0.0
        diff = 0.0
        for j in range(J):
            y = Y[i, j]
            s = S[i, j]
            diff += y - s
            if y > 0:
                n_pos += 1.0
                if y > 1:
                    e1 = s / (s + th * y)
                    a_part += (y - 1.0) * e1
                    g_part += (y - 1.0) * (1.0 - e1)
        a_row[i] = n_pos + a_part
        g_row[i] = g_part
        b_row[i] = diff - g_part + a_row[i]
    if shared:
        a = a_row.sum()
        if a > 0:
            t = _quad_root(a, b_row.sum(), g_row.sum())
            if t < THETA_FLOOR:
                t = THETA_FLOOR
            theta[:] = t
    else:
        for i in range(I):
            if a_row[i] > 0:
                t = _quad_root(a_row[i], b_row[i], g_row[i])
                theta[i] = t if t > THETA_FLOOR else THETA_FLOOR

    nll = 0.0
    for i in range(I):
        th = theta[i]
        ssum = 0.0
        ysum = 0.0
        for j in range(J):
            y = Y[i, j]
            s = S[i, j]
            ssum += s
            ysum += y
            if y > 0:
                nll -= math.log(s) + (y - 1.0) * math.log(s + th * y)
        nll += ysum * math.log1p(th) + (ssum + th * ysum) / (1.0 + th)
    return True, nll


@njit(cache=True)
def _ratio(Y, S):
    I, J = Y.shape
    R = np.zeros((I, J))
    for i in range(I):
        for j in range(J):
            if Y[i, j] > 0:
                R[i, j] = Y[i, j] / S[i, j]
    return R


@njit(cache=True)
def pmf_sweep(Y, W, H):
    I, J = Y.shape
    K = W.shape[1]
    S = _recon(W, H)
    num = np.dot(_ratio(Y, S), H)
    hsum = H.sum(axis=0)
    den = np.empty((I, K))
    for k in range(K):
        if hsum[k] < DENOM_FLOOR:
            return False, np.nan
        den[:, k] = hsum[k]
    _scale(W, num, den)

    S = _recon(W, H)
    num = np.dot(_ratio(Y, S).T, W)
    wsum = W.sum(axis=0)
    den = np.empty((J, K))
    for k in range(K):
        if wsum[k] < DENOM_FLOOR:
            return False, np.nan
        den[:, k] = wsum[k]
    _scale(H, num, den)

    S = _recon(W, H)
    nll = 0.0
    for i in range(I):
        for j in range(J):
            y = Y[i, j]
            s = S[i, j]
            nll += s
            if y > 0:
                nll -= y * math.log(s)
    return True, nll


@njit(cache=True)
def _nb_ratios(Y, S, alpha):
    I, J = Y.shape
    R = np.zeros((I, J))
    Q = np.empty((I, J))
    for i in range(I):
        for j in range(J):
            y = Y[i, j]
            s = S[i, j]
            if y > 0:
                R[i, j] = y / s
            Q[i, j] = (y + alpha) / (s + alpha)
    return R, Q


@njit(cache=True)
def nbmf_sweep(Y, W, H, alpha):
    I, J = Y.shape
    S = _recon(W, H)
    R, Q = _nb_ratios(Y, S, alpha)
    den = np.dot(Q, H)
    if den.min() < DENOM_FLOOR:
        return False, np.nan
    _scale(W, np.dot(R, H), den)

    S = _recon(W, H)
    R, Q = _nb_ratios(Y, S, alpha)
    den = np.dot(Q.T, W)
    if den.min() < DENOM_FLOOR:
        return False, np.nan
    _scale(H, np.dot(R.T, W), den)

    S = _recon(W, H)
    nll = 0.0
    for i in range(I):
        for j in range(J):
            y = Y[i, j]
            s = S[i, j]
            # log(s + alpha) - log(alpha): stays O(s) even for huge alpha
            nll += (y + alpha) * math.log1p(s / alpha)
            if y > 0:
                nll -= y * math.log(s)
    return True, nll
