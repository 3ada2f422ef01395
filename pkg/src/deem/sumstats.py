"""GWAS summary-statistic data model, ingestion, and harmonization.

Three sources feed every analysis: the exposure sample (instrument-exposure
coefficients), the outcome sample (instrument-outcome coefficients), and a
supplemental exposure sample used only for instrument selection and as the
anchor estimator, which keeps selection independent of the estimation noise.
"""

from __future__ import annotations

import csv
import gzip
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import DuplicateIdError, FormatError, HarmonizeError, ValidationError
from .ldcore import LdBlockSet

__all__ = [
    "SnpRecord",
    "SummaryStats",
    "HarmonizedDataset",
    "load_sumstats",
    "harmonize",
    "pvalues",
]

_ALLELES = {"A", "C", "G", "T"}
_AMBIGUOUS_PAIRS = {frozenset(("A", "T")), frozenset(("C", "G"))}
_COLUMNS = ["snp_id", "effect_allele", "other_allele", "beta", "se", "n"]


@dataclass(frozen=True)
class SnpRecord:
    snp_id: str
    effect_allele: str
    other_allele: str
    beta: float
    se: float
    n: int

    def __post_init__(self):
        if self.effect_allele not in _ALLELES or self.other_allele not in _ALLELES:
            raise ValidationError(f"{self.snp_id}: alleles must be one of A/C/G/T")
        if self.effect_allele == self.other_allele:
            raise ValidationError(f"{self.snp_id}: effect and other allele are equal")
        if not np.isfinite(self.beta):
            raise ValidationError(f"{self.snp_id}: beta is not finite")
        if not (np.isfinite(self.se) and self.se > 0):
            raise ValidationError(f"{self.snp_id}: se must be positive, got {self.se}")
        if self.n < 1:
            raise ValidationError(f"{self.snp_id}: n must be >= 1, got {self.n}")


@dataclass(frozen=True)
class SummaryStats:
    """Ordered per-SNP marginal coefficients for one trait and sample."""

    records: tuple[SnpRecord, ...]
    trait_label: str
    sample_size: int

    def __post_init__(self):
        ids = [r.snp_id for r in self.records]
        if len(set(ids)) != len(ids):
            dup = next(s for s in ids if ids.count(s) > 1)
            raise DuplicateIdError(f"duplicate snp_id {dup} in {self.trait_label}")
        if self.sample_size < 1:
            raise ValidationError(f"{self.trait_label}: sample_size must be >= 1")

    @property
    def snp_ids(self) -> list[str]:
        return [r.snp_id for r in self.records]

    @property
    def betas(self) -> np.ndarray:
        return np.array([r.beta for r in self.records], dtype=float)

    @property
    def ses(self) -> np.ndarray:
        return np.array([r.se for r in self.records], dtype=float)

    @property
    def ns(self) -> np.ndarray:
        return np.array([r.n for r in self.records], dtype=float)

    def index(self) -> dict[str, int]:
        return {r.snp_id: i for i, r in enumerate(self.records)}

    def subset(self, indices: np.ndarray) -> "SummaryStats":
        return SummaryStats(
            records=tuple(self.records[int(i)] for i in indices),
            trait_label=self.trait_label,
            sample_size=self.sample_size,
        )


@dataclass(frozen=True)
class HarmonizedDataset:
    """Exposure, outcome, and supplemental statistics on one aligned panel."""

    exposure: SummaryStats
    outcome: SummaryStats
    supplemental: SummaryStats
    ld: LdBlockSet
    snp_index: tuple[str, ...]
    report: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        ids = list(self.snp_index)
        for stats in (self.exposure, self.outcome, self.supplemental):
            if stats.snp_ids != ids:
                raise HarmonizeError(
                    f"{stats.trait_label}: SNP order does not match the shared panel"
                )
        if self.ld.snp_ids != ids:
            raise HarmonizeError("LD block order does not match the shared panel")

    @property
    def dim(self) -> int:
        return len(self.snp_index)

    def subset(self, indices: np.ndarray) -> "HarmonizedDataset":
        indices = np.asarray(indices, dtype=int)
        keep_ids = [self.snp_index[i] for i in indices]
        return HarmonizedDataset(
            exposure=self.exposure.subset(indices),
            outcome=self.outcome.subset(indices),
            supplemental=self.supplemental.subset(indices),
            ld=self.ld.subset(set(keep_ids)),
            snp_index=tuple(keep_ids),
            report=dict(self.report),
        )


def _open_text(path: str):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rt")
    return open(path, "r", newline="")


def load_sumstats(path: str, trait_label: str, sample_size: int | None = None) -> SummaryStats:
    """Read a summary-statistics TSV.

    The header must be ``snp_id effect_allele other_allele beta se n``
    (tab separated); the ``n`` column may be omitted when ``sample_size``
    is given, in which case the flag value fills every row.
    """
    with _open_text(path) as fh:
        reader = csv.reader(fh, delimiter="\t")
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        has_n = True
        if header != _COLUMNS:
            if header == _COLUMNS[:-1] and sample_size is not None:
                has_n = False
            else:
                missing = [c for c in _COLUMNS if c not in header]
                raise FormatError(
                    f"{path}: bad header; missing column(s) {missing or header}"
                )
        records = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            expected = 6 if has_n else 5
            if len(row) != expected or any(v == "" for v in row):
                raise FormatError(f"{path}: line {line_no}: expected {expected} fields")
            try:
                n = int(row[5]) if has_n else int(sample_size)
                rec = SnpRecord(
                    snp_id=row[0],
                    effect_allele=row[1].upper(),
                    other_allele=row[2].upper(),
                    beta=float(row[3]),
                    se=float(row[4]),
                    n=n,
                )
            except ValueError as exc:
                raise FormatError(f"{path}: line {line_no}: {exc}") from exc
            records.append(rec)
    if not records:
        raise FormatError(f"{path}: no data rows")
    if sample_size is None:
        sample_size = int(np.median([r.n for r in records]))
    return SummaryStats(records=tuple(records), trait_label=trait_label, sample_size=sample_size)


def _aligned(rec: SnpRecord, ref: SnpRecord) -> SnpRecord | None:
    """Align ``rec`` to the allele orientation of ``ref``; None if impossible."""
    if (rec.effect_allele, rec.other_allele) == (ref.effect_allele, ref.other_allele):
        return rec
    if (rec.effect_allele, rec.other_allele) == (ref.other_allele, ref.effect_allele):
        return SnpRecord(
            snp_id=rec.snp_id,
            effect_allele=ref.effect_allele,
            other_allele=ref.other_allele,
            beta=-rec.beta,
            se=rec.se,
            n=rec.n,
        )
    return None


def harmonize(
    exposure: SummaryStats,
    outcome: SummaryStats,
    supplemental: SummaryStats,
    ld: LdBlockSet,
) -> HarmonizedDataset:
    """Intersect the four inputs onto one allele-aligned, block-major panel.

    Alleles are oriented to the exposure file; swapped records get their sign
    flipped, strand-ambiguous (A/T, C/G) variants and irreconcilable allele
    pairs are dropped and counted in the report.
    """
    idx_e = exposure.index()
    idx_o = outcome.index()
    idx_s = supplemental.index()
    report = {"intersected": 0, "sign_flipped": 0, "dropped_inconsistent": 0, "dropped_ambiguous": 0}

    out_e, out_o, out_s, kept_ids = [], [], [], []
    for snp_id in ld.snp_ids:
        if snp_id not in idx_e or snp_id not in idx_o or snp_id not in idx_s:
            continue
        rec_e = exposure.records[idx_e[snp_id]]
        pair = frozenset((rec_e.effect_allele, rec_e.other_allele))
        if pair in _AMBIGUOUS_PAIRS:
            report["dropped_ambiguous"] += 1
            continue
        rec_o = _aligned(outcome.records[idx_o[snp_id]], rec_e)
        rec_s = _aligned(supplemental.records[idx_s[snp_id]], rec_e)
        if rec_o is None or rec_s is None:
            report["dropped_inconsistent"] += 1
            continue
        flips = (rec_o is not outcome.records[idx_o[snp_id]]) + (
            rec_s is not supplemental.records[idx_s[snp_id]]
        )
        report["sign_flipped"] += flips
        out_e.append(rec_e)
        out_o.append(rec_o)
        out_s.append(rec_s)
        kept_ids.append(snp_id)

    if not kept_ids:
        raise HarmonizeError("no SNP is shared by the exposure, outcome, supplemental, and LD inputs")
    report["intersected"] = len(kept_ids)

    return HarmonizedDataset(
        exposure=SummaryStats(tuple(out_e), exposure.trait_label, exposure.sample_size),
        outcome=SummaryStats(tuple(out_o), outcome.trait_label, outcome.sample_size),
        supplemental=SummaryStats(tuple(out_s), supplemental.trait_label, supplemental.sample_size),
        ld=ld.subset(set(kept_ids)),
        snp_index=tuple(kept_ids),
        report=report,
    )


def pvalues(stats: SummaryStats) -> np.ndarray:
    """Two-sided normal p-values of beta/se, used for instrument selection."""
    z = np.abs(stats.betas / stats.ses)
    return 2.0 * norm.sf(z)
