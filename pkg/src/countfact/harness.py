"""Synthetic-data benchmark: generate GP counts from Gamma factors, fit every
model/initializer pair on the same data, and aggregate factor-recovery MSEs.

Seed lineage: every stream is ``SeedSequence(master_seed, spawn_key=(rep, purpose, sub))``.
Truth and count streams do not depend on the dispersion regime, so all
regimes of one replication share the same ``W0``/``H0`` and Poisson ancestors
(common random numbers).
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import CountfactError, ReportIncomplete
from .factor_core import (
    ConvergenceSpec,
    FactorPair,
    align_factors,
    init_nndsvd,
    init_random,
    mse,
    normalize_factors,
    reconstruct,
)
from .gpdist import gp_sample_array
from .models import DispersionParams, NbmfConfig, fit_gpmf, fit_nbmf, fit_pmf

HETEROGENEOUS_LEVELS = (0.0, 0.5, 1.0, 1.5, 2.0)
DEFAULT_REGIMES = ("constant:0", "constant:0.5", "constant:1", "constant:1.5",
                   "constant:2", "heterogeneous")
MODEL_ORDER = ("pmf", "nbmf", "gpmf")
MAX_FAILURE_RATE = 0.05

# purpose tags for seed lineage
TRUTH, COUNTS, INIT = 0, 1, 2


def parse_regime(regime: str):
    """``"constant:<theta>"`` -> ``("constant", theta)``; ``"heterogeneous"`` -> ``("heterogeneous", None)``."""
    regime = regime.strip()
    if regime == "heterogeneous":
        return "heterogeneous", None
    kind, _, value = regime.partition(":")
    if kind != "constant" or not value:
        raise ValueError(f"unknown dispersion regime {regime!r}")
    theta = float(value)
    if not (theta >= 0 and math.isfinite(theta)):
        raise ValueError(f"constant regime needs theta >= 0, got {value}")
    return "constant", theta


def regime_label(regime: str) -> str:
    kind, theta = parse_regime(regime)
    return "heterogeneous" if kind == "heterogeneous" else f"{theta:g}"


def parse_initializer(spec: str):
    """``"nndsvd"``, ``"random"`` or ``"random:<n_starts>"``."""
    name, _, n = spec.partition(":")
    if name == "nndsvd" and not n:
        return "nndsvd", 1
    if name == "random":
        starts = int(n) if n else 5
        if starts < 1:
            raise ValueError("random initializer needs at least one start")
        return "random", starts
    raise ValueError(f"unknown initializer {spec!r}")


@dataclass
class ExperimentConfig:
    I: int = 50
    J: int = 100
    K: int = 5
    dispersion_regime: list[str] = field(default_factory=lambda: list(DEFAULT_REGIMES))
    truth_gamma: tuple[float, float] = (1.5, 1.5)
    replications: int = 100
    models: list[str] = field(default_factory=lambda: list(MODEL_ORDER))
    nbmf_alpha: float = 5.0
    initializers: list[str] = field(default_factory=lambda: ["nndsvd", "random:5"])
    gpmf_theta_mode: str = "rowwise"
    master_seed: int = 20240607
    convergence: ConvergenceSpec = field(default_factory=ConvergenceSpec)

    def __post_init__(self):
        if isinstance(self.dispersion_regime, str):
            self.dispersion_regime = [self.dispersion_regime]
        self.dispersion_regime = list(self.dispersion_regime)
        self.truth_gamma = tuple(float(v) for v in self.truth_gamma)
        self.models = list(self.models)
        self.initializers = list(self.initializers)
        if isinstance(self.convergence, dict):
            self.convergence = ConvergenceSpec(**self.convergence)
        self.validate()

    def validate(self):
        if min(self.I, self.J, self.K) < 1:
            raise ValueError("I, J, K must be positive")
        if self.K > min(self.I, self.J):
            raise ValueError("K must not exceed min(I, J)")
        if not self.dispersion_regime:
            raise ValueError("at least one dispersion regime is required")
        for regime in self.dispersion_regime:
            kind, _ = parse_regime(regime)
            if kind == "heterogeneous" and self.I % len(HETEROGENEOUS_LEVELS):
                raise ValueError("heterogeneous regime requires I divisible by 5")
        if len(self.truth_gamma) != 2 or min(self.truth_gamma) <= 0:
            raise ValueError("truth_gamma must be (shape, rate) with both > 0")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        bad = set(self.models) - set(MODEL_ORDER)
        if bad or not self.models:
            raise ValueError(f"models must be a non-empty subset of {MODEL_ORDER}")
        if self.nbmf_alpha <= 0:
            raise ValueError("nbmf_alpha must be > 0")
        if not self.initializers:
            raise ValueError("at least one initializer is required")
        for init in self.initializers:
            parse_initializer(init)
        if self.gpmf_theta_mode not in ("rowwise", "shared"):
            raise ValueError("gpmf_theta_mode must be 'rowwise' or 'shared'")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["truth_gamma"] = list(self.truth_gamma)
        return out


@dataclass
class CellResult:
    model: str
    initializer: str
    mse_w: float = math.nan
    mse_h: float = math.nan
    mse_s: float = math.nan
    iterations: int = 0
    converged: bool = False
    final_nll: float = math.nan
    wall_time: float = 0.0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class ReplicationResult:
    regime: str
    rep_index: int
    seed: int
    cells: list[CellResult]


def _rng(cfg: ExperimentConfig, rep_index: int, purpose: int, sub: int = 0):
    ss = np.random.SeedSequence(cfg.master_seed, spawn_key=(rep_index, purpose, sub))
    return np.random.default_rng(ss)


def replication_seed(cfg: ExperimentConfig, rep_index: int) -> int:
    """64-bit integer identifying a replication's random lineage."""
    ss = np.random.SeedSequence(cfg.master_seed, spawn_key=(rep_index,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def theta_truth(cfg: ExperimentConfig, regime: str) -> np.ndarray:
    kind, theta = parse_regime(regime)
    if kind == "constant":
        return np.full(cfg.I, theta)
    block = cfg.I // len(HETEROGENEOUS_LEVELS)
    return np.repeat(HETEROGENEOUS_LEVELS, block).astype(float)


def gen_truth(cfg: ExperimentConfig, rng: np.random.Generator, regime: str | None = None):
    """Gamma(shape, rate) ground-truth factors and the regime's row dispersions."""
    regime = regime or cfg.dispersion_regime[0]
    shape, rate = cfg.truth_gamma
    W0 = rng.gamma(shape, 1.0 / rate, size=(cfg.I, cfg.K))
    H0 = rng.gamma(shape, 1.0 / rate, size=(cfg.J, cfg.K))
    return FactorPair(W0, H0), DispersionParams.rowwise(theta_truth(cfg, regime))


def gen_counts(truth, rng: np.random.Generator) -> np.ndarray:
    """``y_ij ~ GP`` with mean ``(W0 H0^T)_ij`` and dispersion ``theta_i``."""
    factors, disp = truth
    S0 = reconstruct(factors)
    return gp_sample_array(S0, disp.column(S0.shape[0]), rng).astype(np.int64)


def _fit(model: str, cfg: ExperimentConfig, Y, init: FactorPair):
    if model == "pmf":
        return fit_pmf(Y, init, cfg.convergence)
    if model == "nbmf":
        return fit_nbmf(Y, init, NbmfConfig(cfg.nbmf_alpha), cfg.convergence)
    if cfg.gpmf_theta_mode == "shared":
        d0 = DispersionParams.shared(1.0)
    else:
        d0 = DispersionParams.rowwise(np.ones(Y.shape[0]))
    return fit_gpmf(Y, init, d0, cfg.convergence)


def run_replication(cfg: ExperimentConfig, rep_index: int, regime: str | None = None) -> ReplicationResult:
    """Generate one dataset and fit every (model, initializer) pair on it."""
    if regime is None:
        if len(cfg.dispersion_regime) != 1:
            raise ValueError("config lists several regimes; pass one explicitly")
        regime = cfg.dispersion_regime[0]
    truth = gen_truth(cfg, _rng(cfg, rep_index, TRUTH), regime)
    Y = gen_counts(truth, _rng(cfg, rep_index, COUNTS))
    S0 = reconstruct(truth[0])
    truth_norm = normalize_factors(truth[0])

    cells = []
    for init_spec in cfg.initializers:
        kind, starts = parse_initializer(init_spec)
        inits = []
        try:
            if kind == "nndsvd":
                inits = [init_nndsvd(Y, cfg.K)]
            else:
                inits = [init_random(Y, cfg.K, _rng(cfg, rep_index, INIT, s)) for s in range(starts)]
        except (CountfactError, ValueError, np.linalg.LinAlgError) as exc:
            init_error = f"{type(exc).__name__}: {exc}"
        else:
            init_error = None
        for model in MODEL_ORDER:
            if model not in cfg.models:
                continue
            cell = CellResult(model, kind)
            if init_error:
                cell.error = init_error
                cells.append(cell)
                continue
            t0 = time.perf_counter()
            best = None
            errors = []
            for init in inits:
                try:
                    report = _fit(model, cfg, Y, init)
                except (CountfactError, FloatingPointError, ValueError) as exc:
                    errors.append(f"{type(exc).__name__}: {exc}")
                    continue
                if best is None or report.final_nll < best.final_nll:
                    best = report
            cell.wall_time = time.perf_counter() - t0
            if best is None:
                cell.error = "; ".join(errors) or "no fit"
            else:
                try:
                    aligned = align_factors(best.factors, truth[0]).normalized_pair
                    cell.mse_w = mse(aligned.W, truth_norm.W)
                    cell.mse_h = mse(aligned.H, truth_norm.H)
                except CountfactError as exc:
                    cell.error = f"{type(exc).__name__}: {exc}"
                cell.mse_s = mse(reconstruct(best.factors), S0)
                cell.iterations = best.iterations
                cell.converged = best.converged_flag
                cell.final_nll = best.final_nll
            cells.append(cell)
    return ReplicationResult(regime, rep_index, replication_seed(cfg, rep_index), cells)


@dataclass
class AggregateReport:
    config: dict
    cells: list[dict]
    total_fits: int
    failed_fits: int

    def to_json(self) -> str:
        payload = {
            "config": self.config,
            "cells": self.cells,
            "total_fits": self.total_fits,
            "failed_fits": self.failed_fits,
        }
        return json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"

    def cell(self, regime: str, model: str, initializer: str) -> dict:
        for c in self.cells:
            if c["regime"] == regime and c["model"] == model and c["initializer"] == initializer:
                return c
        raise KeyError((regime, model, initializer))

    def mean(self, regime: str, model: str, initializer: str, metric: str = "mse_s") -> float:
        return self.cell(regime, model, initializer)[metric]["mean"]

    def table1_csv(self) -> str:
        """Rows: regime x metric; columns: model x initializer."""
        columns = []
        for c in self.cells:
            key = (c["model"], c["initializer"])
            if key not in columns:
                columns.append(key)
        regimes = []
        for c in self.cells:
            if c["regime"] not in regimes:
                regimes.append(c["regime"])
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["theta0", "metric"] + [f"{m.upper()} {i}" for m, i in columns])
        for regime in regimes:
            for metric, label in (("mse_w", "W0"), ("mse_h", "H0"), ("mse_s", "S0")):
                row = [regime_label(regime), label]
                for m, i in columns:
                    v = self.cell(regime, m, i)[metric]["mean"]
                    row.append("" if v is None else f"{v:.6g}")
                writer.writerow(row)
        return buf.getvalue()


def _summary(values: list[float]):
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return {"mean": None, "se": None}
    mean = float(arr.mean())
    se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else None
    return {"mean": mean, "se": se}


def aggregate(cfg: ExperimentConfig, results: list[ReplicationResult]) -> AggregateReport:
    """Fold replications in (regime, rep_index) order; independent of completion order."""
    order = {r: n for n, r in enumerate(cfg.dispersion_regime)}
    results = sorted(results, key=lambda r: (order[r.regime], r.rep_index))
    groups: dict[tuple, list[CellResult]] = {}
    for res in results:
        for cell in res.cells:
            groups.setdefault((res.regime, cell.model, cell.initializer), []).append(cell)
    cells = []
    total = failed = 0
    for regime in cfg.dispersion_regime:
        for init_spec in cfg.initializers:
            kind, starts = parse_initializer(init_spec)
            for model in MODEL_ORDER:
                group = groups.get((regime, model, kind))
                if group is None:
                    continue
                good = [c for c in group if c.ok]
                total += len(group)
                failed += len(group) - len(good)
                cells.append({
                    "regime": regime,
                    "model": model,
                    "initializer": kind,
                    "starts": starts,
                    "n": len(good),
                    "failures": len(group) - len(good),
                    "mse_w": _summary([c.mse_w for c in good]),
                    "mse_h": _summary([c.mse_h for c in good]),
                    "mse_s": _summary([c.mse_s for c in good]),
                    "iterations_mean": _summary([c.iterations for c in good])["mean"],
                    "converged_fraction": (sum(c.converged for c in good) / len(good)) if good else None,
                })
    return AggregateReport(cfg.to_dict(), cells, total, failed)


def _task(args):
    cfg, rep_index, regime = args
    return run_replication(cfg, rep_index, regime)


def run_experiment(cfg: ExperimentConfig, parallelism: int | None = None,
                   progress=None, strict: bool = True):
    """Run every (regime, replication) and aggregate.

    Returns ``(report, results)``. Raises :class:`ReportIncomplete` when more
    than 5% of fits failed and ``strict`` is set.
    """
    tasks = [(cfg, rep, regime) for regime in cfg.dispersion_regime
             for rep in range(cfg.replications)]
    parallelism = parallelism or os.cpu_count() or 1
    results = []
    if parallelism <= 1:
        for n, t in enumerate(tasks, start=1):
            results.append(_task(t))
            if progress:
                progress(n, len(tasks))
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            for n, res in enumerate(pool.map(_task, tasks, chunksize=1), start=1):
                results.append(res)
                if progress:
                    progress(n, len(tasks))
    report = aggregate(cfg, results)
    if strict and report.total_fits and report.failed_fits / report.total_fits > MAX_FAILURE_RATE:
        raise ReportIncomplete(
            f"{report.failed_fits} of {report.total_fits} fits failed (> {MAX_FAILURE_RATE:.0%})")
    return report, results
