"""Covariance estimation from summary statistics and the working covariance.

Builds the three block-diagonal covariance estimates (exposure coefficients,
outcome coefficients, and the LD-spread pleiotropy covariance), the working
covariance V, and the V-weighted diagonal projections that drive the
debiasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, ConditioningError, DegenerateInstrumentError
from .ldcore import BlockDiagMatrix, LdBlockSet, diag_of_inv_prod, regularize
from .sumstats import HarmonizedDataset, SummaryStats

__all__ = [
    "ScaleDiag",
    "CovBundle",
    "scale_diag",
    "estimate_sigma",
    "estimate_sigma_p",
    "build_v",
    "project_diagonal",
    "build_cov_bundle",
]


@dataclass(frozen=True)
class ScaleDiag:
    """Per-SNP scale sqrt(se^2 + beta^2/n): the marginal-coefficient SD."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if np.any(e <= 0):
            raise ConditioningError("scale entries must be positive")
        object.__setattr__(self, "entries", e)


@dataclass
class CovBundle:
    """Everything the estimators need about second moments.

    ``v_inv_diag`` caches the diagonal of V^{-1} (shared by all three
    projections); ``d_p_clamped`` counts pleiotropy-projection entries that
    were clipped at zero.
    """

    sigma_gamma: BlockDiagMatrix
    sigma_Gamma: BlockDiagMatrix
    sigma_p: BlockDiagMatrix
    v: BlockDiagMatrix
    d_gamma: np.ndarray
    d_Gamma: np.ndarray
    d_p: np.ndarray
    v_inv_diag: np.ndarray
    d_p_clamped: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.v.dim


def scale_diag(stats: SummaryStats) -> ScaleDiag:
    """Entrywise sqrt(se_j^2 + beta_j^2 / n_j)."""
    return ScaleDiag(entries=np.sqrt(stats.ses**2 + stats.betas**2 / stats.ns))


def _block_sizes(ld: LdBlockSet) -> list[int]:
    return [len(b.snp_ids) for b in ld.blocks]


def estimate_sigma(scale: ScaleDiag, ld: LdBlockSet) -> BlockDiagMatrix:
    """S R S per block: correlation blocks scaled by the per-SNP SDs."""
    if len(scale.entries) != ld.dim:
        raise AlignmentError(f"scale length {len(scale.entries)} != LD dim {ld.dim}")
    blocks, start = [], 0
    for b in ld.blocks:
        nb = len(b.snp_ids)
        s = scale.entries[start : start + nb]
        blocks.append(b.corr * np.outer(s, s))
        start += nb
    return BlockDiagMatrix(blocks, labels=[b.block_id for b in ld.blocks])


def estimate_sigma_p(scale_Gamma: ScaleDiag, ld: LdBlockSet) -> BlockDiagMatrix:
    """S R S^{-2} R S per block; PSD since it factors as (S R S^{-1})(S^{-1} R S)."""
    if len(scale_Gamma.entries) != ld.dim:
        raise AlignmentError(f"scale length {len(scale_Gamma.entries)} != LD dim {ld.dim}")
    blocks, start = [], 0
    for b in ld.blocks:
        nb = len(b.snp_ids)
        s = scale_Gamma.entries[start : start + nb]
        half = b.corr * np.outer(s, 1.0 / s)
        blocks.append(half @ half.T)
        start += nb
    return BlockDiagMatrix(blocks, labels=[b.block_id for b in ld.blocks])


def build_v(
    sigma_gamma: BlockDiagMatrix,
    sigma_p: BlockDiagMatrix,
    ld: LdBlockSet,
    lam: float = 0.5,
    snp_weights: np.ndarray | None = None,
) -> BlockDiagMatrix:
    """Working covariance: diag-scale blend of the regularized correlations.

    Per-SNP variance is v_gamma + (tr v_gamma / tr v_p) * v_p with v_gamma,
    v_p the diagonals of the two input matrices; off-diagonal structure comes
    from R_F = lam*R + (1-lam)*I.  ``snp_weights`` is an expert hook that
    multiplies rows and columns of V by a positive per-SNP weight.
    """
    v_gamma = sigma_gamma.diagonal()
    v_p = sigma_p.diagonal()
    tr_p = v_p.sum()
    if tr_p <= 0:
        raise DegenerateInstrumentError("trace of the pleiotropy diagonal is zero")
    scale = np.sqrt(v_gamma + (v_gamma.sum() / tr_p) * v_p)
    if snp_weights is not None:
        w = np.asarray(snp_weights, dtype=float)
        if w.shape != scale.shape or np.any(w <= 0):
            raise AlignmentError("snp_weights must be positive and match the panel size")
        scale = scale * np.sqrt(w)
    r_f = regularize(ld, lam)
    blocks, start = [], 0
    for b in r_f.blocks:
        nb = len(b.snp_ids)
        s = scale[start : start + nb]
        blocks.append(b.corr * np.outer(s, s))
        start += nb
    return BlockDiagMatrix(blocks, labels=[b.block_id for b in ld.blocks])


def project_diagonal(sigma: BlockDiagMatrix, v: BlockDiagMatrix) -> np.ndarray:
    """V-weighted diagonal projection: entry j is [V^-1 Sigma]_jj / [V^-1]_jj."""
    num, den = diag_of_inv_prod(v, sigma)
    if np.any(den <= 0):
        raise ConditioningError("V^-1 has a non-positive diagonal entry")
    return num / den


def build_cov_bundle(
    ds: HarmonizedDataset,
    lam: float = 0.5,
    snp_weights: np.ndarray | None = None,
) -> CovBundle:
    """Estimate all second-moment objects for one harmonized dataset."""
    s_gamma = scale_diag(ds.exposure)
    s_Gamma = scale_diag(ds.outcome)
    sigma_gamma = estimate_sigma(s_gamma, ds.ld)
    sigma_Gamma = estimate_sigma(s_Gamma, ds.ld)
    sigma_p = estimate_sigma_p(s_Gamma, ds.ld)
    v = build_v(sigma_gamma, sigma_p, ds.ld, lam=lam, snp_weights=snp_weights)

    num_g, v_inv_diag = diag_of_inv_prod(v, sigma_gamma)
    if np.any(v_inv_diag <= 0):
        raise ConditioningError("V^-1 has a non-positive diagonal entry")
    d_gamma = num_g / v_inv_diag
    d_Gamma = project_diagonal(sigma_Gamma, v)
    d_p_raw = project_diagonal(sigma_p, v)
    clamped = int(np.sum(d_p_raw < 0))
    d_p = np.maximum(d_p_raw, 0.0)
    if np.any(d_gamma <= 0) or np.any(d_Gamma <= 0):
        raise ConditioningError("a coefficient-covariance projection came out non-positive")

    return CovBundle(
        sigma_gamma=sigma_gamma,
        sigma_Gamma=sigma_Gamma,
        sigma_p=sigma_p,
        v=v,
        d_gamma=d_gamma,
        d_Gamma=d_Gamma,
        d_p=d_p,
        v_inv_diag=v_inv_diag,
        d_p_clamped=clamped,
    )
