"""countfact command line.

  countfact dist --lambda 8 --theta 2.5 --xmax 30
  countfact fit --input Y.csv --model gpmf --K 5 --output fit.json
  countfact simulate --I 50 --J 100 --K 5 --regime heterogeneous --seed 1 --output-prefix sim/
  countfact benchmark --config bench.json --output-dir results --parallelism 4

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import factor_core, gpdist, harness, models
from .errors import CountfactError, DomainError, ReportIncomplete

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seed(value):
    if value is not None:
        return value
    env = os.environ.get("COUNTFACT_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError as exc:
        raise UsageError(f"COUNTFACT_SEED must be an integer, got {env!r}") from exc


def _num(v) -> str:
    return repr(float(v))


def _prefix_path(prefix: str, name: str) -> Path:
    if prefix.endswith(("/", os.sep)) or Path(prefix).is_dir():
        return Path(prefix) / name
    return Path(prefix + name)


# ---------------------------------------------------------------------------


def cmd_dist(args, out) -> int:
    if args.lam <= 0 or args.theta < 0:
        raise UsageError("--lambda must be > 0 and --theta >= 0")
    p = gpdist.GPParamsMeanDisp(args.lam, args.theta)
    with_nb = args.theta > 0 if args.nb is None else args.nb
    if with_nb and args.theta == 0:
        raise UsageError("NB comparison needs --theta > 0 (theta = 0 is the Poisson limit)")

    out.write(f"# lambda={args.lam!r} theta={args.theta!r}\n")
    out.write(f"# kurtosis_gp={gpdist.kurtosis_gp(p)!r}\n")
    if with_nb:
        alpha = gpdist.nb_alpha_matching(p)
        out.write(f"# nb_alpha={alpha!r}\n")
        out.write(f"# kurtosis_nb={gpdist.kurtosis_nb(p.lam, alpha)!r}\n")
        out.write(f"# kurtosis_gap={gpdist.kurtosis_gap(p)!r}\n")

    if args.nsamples:
        rng = np.random.default_rng(_seed(args.seed))
        draws = gpdist.gp_sample(p, rng, size=args.nsamples)
        xmax = max(int(draws.max()), args.xmax)
        xs = np.arange(xmax + 1)
        freq = np.bincount(draws, minlength=xmax + 1) / args.nsamples
        gp = np.exp(gpdist.gp_log_pmf(xs, gpdist.to_natural(p)))
        out.write(f"# nsamples={args.nsamples} sample_mean={_num(draws.mean())} sample_var={_num(draws.var(ddof=1))}\n")
        out.write("x,empirical,gp_pmf\n")
        for x in xs:
            out.write(f"{x},{_num(freq[x])},{_num(gp[x])}\n")
        return EXIT_OK

    xs = np.arange(args.xmax + 1)
    gp = np.exp(gpdist.gp_log_pmf(xs, gpdist.to_natural(p)))
    if with_nb:
        nb = gpdist.nb_matched(p)
        nbp = np.exp(gpdist.nb_logpmf(xs, nb.r, nb.p))
        out.write("x,gp_pmf,nb_pmf\n")
        for x in xs:
            out.write(f"{x},{_num(gp[x])},{_num(nbp[x])}\n")
    else:
        out.write("x,gp_pmf\n")
        for x in xs:
            out.write(f"{x},{_num(gp[x])}\n")
    return EXIT_OK


def fit_report_dict(report: models.FitReport, seed: int, init: str) -> dict:
    """JSON payload of a fit; contents are a deterministic function of the inputs."""
    d = report.dispersion
    return {
        "model": report.model,
        "K": report.factors.K,
        "init": init,
        "seed": seed,
        "W": report.factors.W.tolist(),
        "H": report.factors.H.tolist(),
        "theta": None if d is None else d.values.tolist(),
        "theta_mode": None if d is None else d.mode,
        "alpha": report.extra.get("alpha"),
        "nll_initial": report.nll_initial,
        "nll_trace": report.nll_trace,
        "iterations": report.iterations,
        "converged": report.converged_flag,
    }


def cmd_fit(args, out) -> int:
    try:
        Y = factor_core.read_matrix_csv(args.input, counts=True)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read count matrix: {exc}") from exc
    if args.K < 1 or args.K > min(Y.shape):
        raise UsageError(f"--K must lie in [1, {min(Y.shape)}]")
    seed = _seed(args.seed)
    rng = np.random.default_rng(seed)
    try:
        if args.starts < 1:
            raise ValueError("--starts must be >= 1")
        spec = factor_core.ConvergenceSpec(args.tol, args.max_iters)
        if args.init == "nndsvd":
            inits = [factor_core.init_nndsvd(Y, args.K)]
        else:
            inits = [factor_core.init_random(Y, args.K, rng) for _ in range(args.starts)]
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    best = None
    for init in inits:
        if args.model == "pmf":
            rep = models.fit_pmf(Y, init, spec)
        elif args.model == "nbmf":
            rep = models.fit_nbmf(Y, init, models.NbmfConfig(args.alpha), spec)
        else:
            d0 = (models.DispersionParams.shared(1.0) if args.theta_mode == "shared"
                  else models.DispersionParams.rowwise(np.ones(Y.shape[0])))
            rep = models.fit_gpmf(Y, init, d0, spec)
        if best is None or rep.final_nll < best.final_nll:
            best = rep

    payload = json.dumps(fit_report_dict(best, seed, args.init), indent=2) + "\n"
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        Path(args.output).write_text(payload)
    else:
        out.write(payload)
    if args.factors_prefix:
        factor_core.write_matrix_csv(_prefix_path(args.factors_prefix, "W.csv"), best.factors.W)
        factor_core.write_matrix_csv(_prefix_path(args.factors_prefix, "H.csv"), best.factors.H)
        if best.dispersion is not None:
            factor_core.write_matrix_csv(_prefix_path(args.factors_prefix, "theta.csv"),
                                         best.dispersion.values[:, None])
    return EXIT_OK


def cmd_simulate(args, out) -> int:
    try:
        cfg = harness.ExperimentConfig(I=args.I, J=args.J, K=args.K, dispersion_regime=[args.regime],
                                       truth_gamma=tuple(args.gamma), replications=1,
                                       master_seed=_seed(args.seed))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    truth = harness.gen_truth(cfg, harness._rng(cfg, 0, harness.TRUTH), args.regime)
    Y = harness.gen_counts(truth, harness._rng(cfg, 0, harness.COUNTS))
    prefix = args.output_prefix
    factor_core.write_matrix_csv(_prefix_path(prefix, "Y.csv"), Y)
    factor_core.write_matrix_csv(_prefix_path(prefix, "W0.csv"), truth[0].W)
    factor_core.write_matrix_csv(_prefix_path(prefix, "H0.csv"), truth[0].H)
    factor_core.write_matrix_csv(_prefix_path(prefix, "theta0.csv"), truth[1].values[:, None])
    out.write(f"wrote {_prefix_path(prefix, 'Y.csv')} ({Y.shape[0]}x{Y.shape[1]}, mean {Y.mean():.4g})\n")
    return EXIT_OK


def cmd_benchmark(args, out) -> int:
    try:
        cfg = harness.ExperimentConfig.from_json(args.config) if args.config else harness.ExperimentConfig()
        if args.replications is not None:
            cfg.replications = args.replications
            cfg.validate()
    except (OSError, ValueError, TypeError) as exc:
        raise UsageError(f"invalid config: {exc}") from exc

    def progress(done, total):
        if not args.quiet:
            print(f"\r{done}/{total} replications", end="", file=sys.stderr, flush=True)

    try:
        report, _ = harness.run_experiment(cfg, parallelism=args.parallelism, progress=progress)
    finally:
        if not args.quiet:
            print(file=sys.stderr)
    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "report.json").write_text(report.to_json())
    table = report.table1_csv()
    (outdir / "table1.csv").write_text(table)
    out.write(table)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="countfact", description="Count-data NMF: PMF, NBMF and GPMF.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("dist", help="GP pmf table vs the variance-matched NB, or sampler check")
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--xmax", type=int, default=30)
    nb = p.add_mutually_exclusive_group()
    nb.add_argument("--nb", dest="nb", action="store_true", default=None,
                    help="force the NB column (default: only when theta > 0)")
    nb.add_argument("--no-nb", dest="nb", action="store_false")
    p.add_argument("--nsamples", type=int, default=0, help="sample mode: emit empirical frequencies")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_dist)

    p = sub.add_parser("fit", help="factorize one count matrix")
    p.add_argument("--input", required=True, help="headerless CSV of non-negative integers")
    p.add_argument("--model", choices=("pmf", "nbmf", "gpmf"), required=True)
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--alpha", type=float, default=5.0, help="NBMF dispersion")
    p.add_argument("--theta-mode", choices=("rowwise", "shared"), default="rowwise")
    p.add_argument("--init", choices=("nndsvd", "random"), default="nndsvd")
    p.add_argument("--starts", type=int, default=1, help="random starts; best likelihood kept")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iters", type=int, default=10_000)
    p.add_argument("--output", help="JSON path (default: stdout)")
    p.add_argument("--factors-prefix", help="also write W.csv, H.csv[, theta.csv] with this prefix")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="draw a synthetic GP count matrix")
    p.add_argument("--I", type=int, default=50)
    p.add_argument("--J", type=int, default=100)
    p.add_argument("--K", type=int, default=5)
    p.add_argument("--regime", default="heterogeneous", help="'constant:<theta>' or 'heterogeneous'")
    p.add_argument("--gamma", type=float, nargs=2, default=(1.5, 1.5), metavar=("SHAPE", "RATE"))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output-prefix", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("benchmark", help="replicated synthetic benchmark (Table-1 layout)")
    p.add_argument("--config", help="ExperimentConfig JSON (default: full protocol)")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--parallelism", type=int, default=None, help="worker processes (default: all cores)")
    p.add_argument("--replications", type=int, default=None, help="override config replications")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out)
    except UsageError as exc:
        print(f"countfact {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ReportIncomplete as exc:
        print(f"countfact {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DomainError as exc:
        print(f"countfact {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CountfactError, FloatingPointError) as exc:
        print(f"countfact {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
