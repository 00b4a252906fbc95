"""Factorization substrate: containers, initializers, stopping rule, alignment."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DegenerateColumn, ShapeMismatch, SvdFailure

POSITIVITY_FLOOR = 1e-10


def as_count_matrix(Y) -> np.ndarray:
    """Validate ``Y`` as a 2-D array of non-negative integer counts."""
    arr = np.asarray(Y)
    if arr.ndim != 2 or min(arr.shape) < 1:
        raise ShapeMismatch(f"count matrix must be 2-D and non-empty, got shape {arr.shape}")
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)) or np.any(arr != np.round(arr)):
            raise ValueError("count matrix entries must be integers")
    elif arr.dtype.kind not in "iu":
        raise ValueError(f"count matrix has unsupported dtype {arr.dtype}")
    if np.any(arr < 0):
        raise ValueError("count matrix entries must be non-negative")
    return arr.astype(np.int64)


@dataclass
class FactorPair:
    """Basis ``W`` (I x K) and coefficients ``H`` (J x K); ``S = W @ H.T``."""

    W: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.H = np.asarray(self.H, dtype=float)
        if self.W.ndim != 2 or self.H.ndim != 2 or self.W.shape[1] != self.H.shape[1]:
            raise ShapeMismatch(f"incompatible factor shapes {self.W.shape} and {self.H.shape}")

    @property
    def K(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "FactorPair":
        return FactorPair(self.W.copy(), self.H.copy())


@dataclass(frozen=True)
class ConvergenceSpec:
    tolerance: float = 1e-6
    max_iterations: int = 10_000

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class AlignmentResult:
    permutation: np.ndarray
    normalized_pair: FactorPair


def reconstruct(f: FactorPair) -> np.ndarray:
    return f.W @ f.H.T


def init_nndsvd(Y, K: int) -> FactorPair:
    """NNDSVD start whose leading component uses absolute singular vectors.

    Components ``2..K`` follow the positive/negative-section rule of
    Boutsidis & Gallopoulos (2008). Zeros are lifted to ``POSITIVITY_FLOOR``.
    """
    Y = np.asarray(Y, dtype=float)
    if not np.any(Y > 0):
        raise ValueError("NNDSVD needs at least one positive entry")
    if K > min(Y.shape):
        raise ValueError(f"rank {K} exceeds min{Y.shape}")
    try:
        U, sv, Vt = np.linalg.svd(Y, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SvdFailure(str(exc)) from exc

    I, J = Y.shape
    W = np.zeros((I, K))
    H = np.zeros((J, K))
    W[:, 0] = np.sqrt(sv[0]) * np.abs(U[:, 0])
    H[:, 0] = np.sqrt(sv[0]) * np.abs(Vt[0, :])

    for k in range(1, K):
        u, v = U[:, k], Vt[k, :]
        up, un = np.maximum(u, 0), np.maximum(-u, 0)
        vp, vn = np.maximum(v, 0), np.maximum(-v, 0)
        nup, nvp = np.linalg.norm(up), np.linalg.norm(vp)
        nun, nvn = np.linalg.norm(un), np.linalg.norm(vn)
        if nup * nvp >= nun * nvn:
            a, b, sigma = up / nup if nup else up, vp / nvp if nvp else vp, nup * nvp
        else:
            a, b, sigma = un / nun if nun else un, vn / nvn if nvn else vn, nun * nvn
        scale = np.sqrt(sv[k] * sigma)
        W[:, k] = scale * a
        H[:, k] = scale * b

    np.maximum(W, POSITIVITY_FLOOR, out=W)
    np.maximum(H, POSITIVITY_FLOOR, out=H)
    return FactorPair(W, H)


def init_random(Y, K: int, rng: np.random.Generator) -> FactorPair:
    """Gamma(1, 1) factors rescaled so that ``mean(W @ H.T) == mean(Y)``."""
    Y = np.asarray(Y, dtype=float)
    I, J = Y.shape
    W = rng.gamma(1.0, 1.0, size=(I, K))
    H = rng.gamma(1.0, 1.0, size=(J, K))
    # mean(W H^T) = (sum_i W)·(sum_j H) / (I J) without forming S
    s_mean = float(W.sum(axis=0) @ H.sum(axis=0)) / (I * J)
    target = max(float(Y.mean()), POSITIVITY_FLOOR)
    root = np.sqrt(target / s_mean)
    W *= root
    H *= root
    np.maximum(W, POSITIVITY_FLOOR, out=W)
    np.maximum(H, POSITIVITY_FLOOR, out=H)
    return FactorPair(W, H)


def converged(ll_prev: float, ll_new: float, spec: ConvergenceSpec) -> bool:
    """Hybrid absolute/relative stopping rule on successive log-likelihoods."""
    return abs(ll_new - ll_prev) / (abs(ll_new) + 1.0) < spec.tolerance


def normalize_factors(f: FactorPair) -> FactorPair:
    """Scale H columns to unit Euclidean norm, absorbing the scale into W."""
    norms = np.linalg.norm(f.H, axis=0)
    if np.any(norms < 1e-12):
        raise DegenerateColumn(f"H column norm below 1e-12: {norms.min():.3g}")
    return FactorPair(f.W * norms, f.H / norms)


def align_factors(est: FactorPair, truth: FactorPair) -> AlignmentResult:
    """Remove scale and column-permutation indeterminacy from ``est``.

    ``permutation[k]`` is the column of ``est`` matched to column ``k`` of
    ``truth``; the match minimizes the total squared distance between
    unit-normalized H columns.
    """
    if est.K != truth.K:
        raise ShapeMismatch(f"rank mismatch: {est.K} vs {truth.K}")
    ne = normalize_factors(est)
    nt = normalize_factors(truth)
    # cost[a, b]: truth column a against estimated column b
    cost = ((nt.H[:, :, None] - ne.H[:, None, :]) ** 2).sum(axis=0)
    rows, cols = linear_sum_assignment(cost)
    perm = cols[np.argsort(rows)]
    return AlignmentResult(perm, FactorPair(ne.W[:, perm], ne.H[:, perm]))


def mse(est_matrix, truth_matrix) -> float:
    a = np.asarray(est_matrix, dtype=float)
    b = np.asarray(truth_matrix, dtype=float)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def read_matrix_csv(path, counts: bool = False) -> np.ndarray:
    """Read a headerless CSV matrix; ``counts=True`` validates non-negative integers."""
    rows = []
    with open(path, newline="") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise ValueError(f"{path}:{line_no}: {exc}") from exc
    if not rows:
        raise ValueError(f"{path}: empty matrix")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: ragged rows (widths {sorted(widths)})")
    arr = np.array(rows)
    return as_count_matrix(arr) if counts else arr


def write_matrix_csv(path, matrix) -> None:
    """Write a headerless CSV; integers verbatim, reals with 17 significant digits."""
    arr = np.atleast_2d(np.asarray(matrix))
    if arr.ndim == 2 and arr.shape[0] == 1 and np.ndim(matrix) == 1:
        arr = arr.T
    fmt = "%d" if arr.dtype.kind in "iu" else "%.17g"
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, arr, fmt=fmt, delimiter=",")
