"""Count-data non-negative matrix factorization: PMF, NBMF and generalized Poisson MF."""
from .factor_core import ConvergenceSpec, FactorPair, align_factors, init_nndsvd, init_random, reconstruct
from .gpdist import GPParamsMeanDisp, GPParamsNatural, gp_log_pmf, gp_sample
from .models import (DispersionParams, FitReport, NbmfConfig, fit_gpmf, fit_nbmf, fit_pmf,
                     nll_gpmf, nll_nbmf, nll_pmf)

__version__ = "0.1.0"

__all__ = [
    "ConvergenceSpec",
    "DispersionParams",
    "FactorPair",
    "FitReport",
    "GPParamsMeanDisp",
    "GPParamsNatural",
    "NbmfConfig",
    "align_factors",
    "fit_gpmf",
    "fit_nbmf",
    "fit_pmf",
    "gp_log_pmf",
    "gp_sample",
    "init_nndsvd",
    "init_random",
    "nll_gpmf",
    "nll_nbmf",
    "nll_pmf",
    "reconstruct",
]
