"""Instrument selection: supplemental-sample p-value threshold + LD clumping.

Selection never touches the exposure or outcome statistics, so the selected
set is independent of the estimation noise (no winner's curse).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SelectionEmptyError
from .sumstats import HarmonizedDataset, pvalues

__all__ = ["SelectionConfig", "SelectedSet", "select", "restrict", "PRESETS"]


@dataclass(frozen=True)
class SelectionConfig:
    """p-value threshold and maximum retained |correlation| within a block."""

    pvalue_threshold: float = 0.1
    clump_r_threshold: float = 0.9

    def __post_init__(self):
        if not 0.0 < self.pvalue_threshold <= 1.0:
            raise ConfigError(f"pvalue_threshold must be in (0, 1], got {self.pvalue_threshold}")
        if not 0.0 < self.clump_r_threshold <= 1.0:
            raise ConfigError(f"clump_r_threshold must be in (0, 1], got {self.clump_r_threshold}")


#: named presets: the default, a stringent-threshold variant, and a
#: near-independence clumping variant
PRESETS = {
    "deem": SelectionConfig(0.1, 0.9),
    "strict": SelectionConfig(1e-4, 0.9),
    "independent": SelectionConfig(0.1, 0.01),
}

KEPT = "kept"
PRUNED_PVALUE = "pruned-by-pvalue"
PRUNED_LD = "pruned-by-ld"


@dataclass(frozen=True)
class SelectedSet:
    indices: np.ndarray
    provenance: dict[str, str]
    pvals: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=int)
        if idx.size and np.any(np.diff(idx) <= 0):
            raise ConfigError("selected indices must be strictly increasing")
        object.__setattr__(self, "indices", idx)

    def counts(self) -> dict[str, int]:
        out = {KEPT: 0, PRUNED_PVALUE: 0, PRUNED_LD: 0}
        for reason in self.provenance.values():
            out[reason] += 1
        return out


def select(ds: HarmonizedDataset, cfg: SelectionConfig) -> SelectedSet:
    """Threshold supplemental p-values, then greedily clump within LD blocks.

    Survivors are visited in ascending p-value (snp_id tie-break); a SNP is
    kept iff its |correlation| with every already-kept SNP of the same block
    stays below the clump threshold.  Clumping uses the raw reference
    correlations, not the regularized blend.
    """
    pvals = pvalues(ds.supplemental)
    provenance: dict[str, str] = {}
    kept_global: list[int] = []

    offset = 0
    for block in ds.ld.blocks:
        nb = len(block.snp_ids)
        local = np.arange(nb)
        p_block = pvals[offset : offset + nb]
        survivors = []
        for j in local:
            if p_block[j] <= cfg.pvalue_threshold:
                survivors.append(j)
            else:
                provenance[block.snp_ids[j]] = PRUNED_PVALUE
        order = sorted(survivors, key=lambda j: (p_block[j], block.snp_ids[j]))
        kept_local: list[int] = []
        for j in order:
            if all(abs(block.corr[j, k]) < cfg.clump_r_threshold for k in kept_local):
                kept_local.append(j)
                provenance[block.snp_ids[j]] = KEPT
            else:
                provenance[block.snp_ids[j]] = PRUNED_LD
        kept_global.extend(offset + j for j in sorted(kept_local))
        offset += nb

    if not kept_global:
        counts = {PRUNED_PVALUE: 0, PRUNED_LD: 0}
        for reason in provenance.values():
            counts[reason] += 1
        raise SelectionEmptyError(
            f"no SNP selected: {counts[PRUNED_PVALUE]} failed the p-value threshold, "
            f"{counts[PRUNED_LD]} were clumped away"
        )

    return SelectedSet(indices=np.array(sorted(kept_global)), provenance=provenance, pvals=pvals)


def restrict(ds: HarmonizedDataset, sel: SelectedSet) -> HarmonizedDataset:
    """Subset all statistics and LD blocks to the selected SNPs."""
    return ds.subset(sel.indices)
