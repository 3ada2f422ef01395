"""Debiased estimating-equation Mendelian randomization with correlated
weak instruments, from GWAS summary statistics.

Pipeline: load and harmonize summary statistics (`sumstats`), select
instruments on an independent supplemental sample (`selection`), estimate
block-diagonal coefficient covariances and a working covariance
(`covest`, `ldcore`), solve the debiased estimating equation and combine it
with the anchor ratio estimator (`estimators`).  `simkit` provides a seeded
Monte-Carlo harness and `cli` the command-line front end.
"""

__version__ = "0.1.0"

from .covest import CovBundle, build_cov_bundle, project_diagonal, scale_diag
from .errors import DeemError, NumericalError, ValidationError
from .estimators import (
    Mode,
    MrEstimate,
    NuisanceEstimates,
    beta2,
    beta_plugin,
    ee_value,
    run_deem,
    solve_ee,
)
from .ldcore import Block, BlockDiagMatrix, LdBlockSet, estimate_block_correlations
from .selection import PRESETS, SelectionConfig, select
from .simkit import MetricsTable, ReplicateResult, Scenario, run_study
from .sumstats import HarmonizedDataset, SummaryStats, harmonize, load_sumstats

__all__ = [
    "__version__",
    "Block",
    "BlockDiagMatrix",
    "CovBundle",
    "DeemError",
    "HarmonizedDataset",
    "LdBlockSet",
    "MetricsTable",
    "Mode",
    "MrEstimate",
    "NuisanceEstimates",
    "NumericalError",
    "PRESETS",
    "ReplicateResult",
    "Scenario",
    "SelectionConfig",
    "SummaryStats",
    "ValidationError",
    "beta2",
    "beta_plugin",
    "build_cov_bundle",
    "ee_value",
    "estimate_block_correlations",
    "harmonize",
    "load_sumstats",
    "project_diagonal",
    "run_deem",
    "run_study",
    "scale_diag",
    "select",
    "solve_ee",
]
