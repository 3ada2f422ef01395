"""Block-diagonal symmetric linear algebra over LD blocks.

Every matrix in the pipeline (reference correlations, summary-statistic
covariances, the working covariance V) is block diagonal with one block per
LD region, so solves, traces, and quadratic forms are computed block by
block.  Cholesky factorizations are cached on the matrix after the first
solve because the estimators reuse V^{-1} many times.
"""

from __future__ import annotations

import gzip
import os
import threading
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.linalg import cho_factor, cho_solve

from .errors import (
    AlignmentError,
    ConfigError,
    DegenerateSnpError,
    FormatError,
    SingularMatrixError,
)

__all__ = [
    "Block",
    "LdBlockSet",
    "BlockDiagMatrix",
    "estimate_block_correlations",
    "regularize",
    "solve",
    "matvec",
    "quad_form",
    "trace_prod",
    "diag_of_inv_prod",
    "inverse_blocks",
    "load_block_map",
    "load_reference_genotypes",
    "load_corr_dir",
]


@dataclass(frozen=True)
class Block:
    """One LD block: an identifier, its SNPs, and their correlation matrix."""

    block_id: str
    snp_ids: tuple[str, ...]
    corr: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.corr, dtype=float)
        if c.shape != (len(self.snp_ids), len(self.snp_ids)):
            raise AlignmentError(
                f"block {self.block_id}: corr shape {c.shape} does not match "
                f"{len(self.snp_ids)} SNPs"
            )
        if not np.allclose(c, c.T, rtol=1e-12, atol=1e-12):
            raise AlignmentError(f"block {self.block_id}: corr is not symmetric")
        if not np.allclose(np.diag(c), 1.0, atol=1e-9):
            raise AlignmentError(f"block {self.block_id}: corr diagonal is not 1")
        object.__setattr__(self, "corr", c)


@dataclass(frozen=True)
class LdBlockSet:
    """An ordered partition of the SNP panel into disjoint correlation blocks.

    The block-major SNP order defined here is the single canonical order for
    every vector and matrix downstream.
    """

    blocks: tuple[Block, ...]

    def __post_init__(self):
        seen: set[str] = set()
        for b in self.blocks:
            for s in b.snp_ids:
                if s in seen:
                    raise AlignmentError(f"SNP {s} appears in more than one block")
                seen.add(s)

    @property
    def snp_ids(self) -> list[str]:
        return [s for b in self.blocks for s in b.snp_ids]

    @property
    def dim(self) -> int:
        return sum(len(b.snp_ids) for b in self.blocks)

    def slices(self) -> list[slice]:
        out, start = [], 0
        for b in self.blocks:
            out.append(slice(start, start + len(b.snp_ids)))
            start += len(b.snp_ids)
        return out

    def subset(self, keep: set[str]) -> "LdBlockSet":
        """Restrict to ``keep`` SNPs, dropping blocks that become empty."""
        new_blocks = []
        for b in self.blocks:
            idx = [i for i, s in enumerate(b.snp_ids) if s in keep]
            if not idx:
                continue
            new_blocks.append(
                Block(
                    block_id=b.block_id,
                    snp_ids=tuple(b.snp_ids[i] for i in idx),
                    corr=b.corr[np.ix_(idx, idx)],
                )
            )
        return LdBlockSet(blocks=tuple(new_blocks))

    def to_blockdiag(self) -> "BlockDiagMatrix":
        return BlockDiagMatrix(
            blocks=[b.corr.copy() for b in self.blocks],
            labels=[b.block_id for b in self.blocks],
        )


class BlockDiagMatrix:
    """Symmetric block-diagonal matrix aligned to an LdBlockSet.

    Read-only after construction; the Cholesky factorization is computed once
    on first use (guarded by a lock so concurrent block-level use is safe).
    """

    def __init__(self, blocks: list[np.ndarray], labels: list[str] | None = None):
        self.blocks = [np.asarray(b, dtype=float) for b in blocks]
        for i, b in enumerate(self.blocks):
            if b.ndim != 2 or b.shape[0] != b.shape[1]:
                raise AlignmentError(f"block {i} is not square")
            if not np.allclose(b, b.T, rtol=1e-12, atol=1e-12 * max(1.0, np.abs(b).max())):
                raise AlignmentError(f"block {i} is not symmetric")
        self.labels = labels or [str(i) for i in range(len(self.blocks))]
        self.dim = sum(b.shape[0] for b in self.blocks)
        self._chol: list | None = None
        self._lock = threading.Lock()

    def slices(self) -> list[slice]:
        out, start = [], 0
        for b in self.blocks:
            out.append(slice(start, start + b.shape[0]))
            start += b.shape[0]
        return out

    def cholesky(self) -> list:
        if self._chol is None:
            with self._lock:
                if self._chol is None:
                    factors = []
                    for lbl, b in zip(self.labels, self.blocks):
                        try:
                            factors.append(cho_factor(b, lower=True))
                        except np.linalg.LinAlgError as exc:
                            raise SingularMatrixError(
                                f"block {lbl} is not positive definite: {exc}"
                            ) from exc
                    self._chol = factors
        return self._chol

    def diagonal(self) -> np.ndarray:
        return np.concatenate([np.diag(b) for b in self.blocks]) if self.blocks else np.empty(0)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.dim, self.dim))
        for sl, b in zip(self.slices(), self.blocks):
            out[sl, sl] = b
        return out

    @staticmethod
    def identity(block_sizes: list[int]) -> "BlockDiagMatrix":
        return BlockDiagMatrix([np.eye(n) for n in block_sizes])

    @staticmethod
    def from_diagonal(values: np.ndarray, block_sizes: list[int]) -> "BlockDiagMatrix":
        values = np.asarray(values, dtype=float)
        out, start = [], 0
        for n in block_sizes:
            out.append(np.diag(values[start : start + n]))
            start += n
        return BlockDiagMatrix(out)


def _check_aligned(a: BlockDiagMatrix, b: BlockDiagMatrix) -> None:
    if [x.shape[0] for x in a.blocks] != [x.shape[0] for x in b.blocks]:
        raise AlignmentError("block structures do not match")


def solve(m: BlockDiagMatrix, b: np.ndarray) -> np.ndarray:
    """Return x with m @ x = b, computed block by block."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != m.dim:
        raise AlignmentError(f"vector length {b.shape[0]} != matrix dim {m.dim}")
    out = np.empty_like(b)
    for sl, f in zip(m.slices(), m.cholesky()):
        out[sl] = cho_solve(f, b[sl], check_finite=False)
    return out


def matvec(m: BlockDiagMatrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] != m.dim:
        raise AlignmentError(f"vector length {x.shape[0]} != matrix dim {m.dim}")
    out = np.empty_like(x)
    for sl, b in zip(m.slices(), m.blocks):
        out[sl] = b @ x[sl]
    return out


def quad_form(m: BlockDiagMatrix, a: np.ndarray, b: np.ndarray) -> float:
    """Return a^T m^{-1} b via per-block solves."""
    return float(np.asarray(a, dtype=float) @ solve(m, b))


def trace_prod(v: BlockDiagMatrix, a: BlockDiagMatrix) -> float:
    """Return tr{v^{-1} a}, summed over blocks."""
    _check_aligned(v, a)
    total = 0.0
    for f, ab in zip(v.cholesky(), a.blocks):
        total += float(np.trace(cho_solve(f, ab, check_finite=False)))
    return total


def diag_of_inv_prod(v: BlockDiagMatrix, a: BlockDiagMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Return the diagonals of v^{-1} a and of v^{-1} as a pair of vectors."""
    _check_aligned(v, a)
    first, second = [], []
    for f, ab in zip(v.cholesky(), a.blocks):
        inv = cho_solve(f, np.eye(ab.shape[0]), check_finite=False)
        first.append(np.einsum("ij,ji->i", inv, ab))
        second.append(np.diag(inv).copy())
    d1 = np.concatenate(first) if first else np.empty(0)
    d2 = np.concatenate(second) if second else np.empty(0)
    return d1, d2


def inverse_blocks(v: BlockDiagMatrix) -> list[np.ndarray]:
    """Dense per-block inverses (used by the variance-matrix assembly)."""
    return [cho_solve(f, np.eye(b.shape[0]), check_finite=False) for f, b in zip(v.cholesky(), v.blocks)]


def regularize(ld: LdBlockSet, lam: float) -> LdBlockSet:
    """Blend each correlation block toward the identity: lam*R + (1-lam)*I."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must be in [0, 1], got {lam}")
    blocks = []
    for b in ld.blocks:
        n = b.corr.shape[0]
        blocks.append(Block(b.block_id, b.snp_ids, lam * b.corr + (1.0 - lam) * np.eye(n)))
    return LdBlockSet(blocks=tuple(blocks))


def estimate_block_correlations(
    reference_genotypes: pd.DataFrame, block_map: list[tuple[str, list[str]]]
) -> LdBlockSet:
    """Sample Pearson correlations of reference dosages within each block.

    ``reference_genotypes`` has one column per SNP (values 0/1/2);
    ``block_map`` is an ordered list of (block_id, snp_ids) pairs that defines
    the canonical SNP order.
    """
    if len(reference_genotypes) < 2:
        raise DegenerateSnpError("reference panel needs at least 2 individuals")
    blocks = []
    for block_id, snp_ids in block_map:
        missing = [s for s in snp_ids if s not in reference_genotypes.columns]
        if missing:
            raise AlignmentError(f"block {block_id}: SNPs missing from reference: {missing[:5]}")
        g = reference_genotypes[list(snp_ids)].to_numpy(dtype=float)
        sd = g.std(axis=0)
        dead = np.flatnonzero(sd == 0.0)
        if dead.size:
            raise DegenerateSnpError(f"zero-variance SNP {snp_ids[dead[0]]} in block {block_id}")
        corr = np.corrcoef(g, rowvar=False).reshape(len(snp_ids), len(snp_ids))
        np.fill_diagonal(corr, 1.0)
        blocks.append(Block(block_id, tuple(snp_ids), corr))
    return LdBlockSet(blocks=tuple(blocks))


# ---------------------------------------------------------------------------
# file loaders
# ---------------------------------------------------------------------------


def _open_text(path: str):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rt")
    return open(path, "r")


def load_block_map(path: str) -> list[tuple[str, list[str]]]:
    """Read the block map TSV (`block_id<TAB>snp_id`, block-major order)."""
    order: list[str] = []
    members: dict[str, list[str]] = {}
    with _open_text(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header[:2] != ["block_id", "snp_id"]:
            raise FormatError(f"block map {path}: expected header 'block_id\\tsnp_id'")
        for line_no, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) < 2 or not parts[0] or not parts[1]:
                raise FormatError(f"block map {path}: malformed line {line_no}")
            bid, sid = parts[0], parts[1]
            if bid not in members:
                order.append(bid)
                members[bid] = []
            members[bid].append(sid)
    return [(bid, members[bid]) for bid in order]


def load_reference_genotypes(path: str) -> pd.DataFrame:
    """Read the reference dosage TSV (rows = individuals, columns = SNPs)."""
    df = pd.read_csv(path, sep="\t")
    bad = ~df.isin([0, 1, 2]).all(axis=None)
    if bad:
        raise FormatError(f"reference genotypes {path}: entries must be 0, 1, or 2")
    return df


def load_corr_dir(corr_dir: str, block_map: list[tuple[str, list[str]]]) -> LdBlockSet:
    """Read precomputed per-block correlation files `<block_id>.corr.tsv`."""
    blocks = []
    for block_id, snp_ids in block_map:
        path = os.path.join(corr_dir, f"{block_id}.corr.tsv")
        if not os.path.exists(path):
            raise FormatError(f"missing correlation file {path}")
        mat = np.loadtxt(path, delimiter="\t", ndmin=2)
        if mat.shape != (len(snp_ids), len(snp_ids)):
            raise AlignmentError(
                f"{path}: shape {mat.shape} does not match {len(snp_ids)} SNPs"
            )
        blocks.append(Block(block_id, tuple(snp_ids), mat))
    return LdBlockSet(blocks=tuple(blocks))
