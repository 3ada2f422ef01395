import numpy as np
import pytest

from deem.covest import CovBundle
from deem.ldcore import Block, BlockDiagMatrix, LdBlockSet, diag_of_inv_prod
from deem.selection import SelectionConfig
from deem.simkit import (
    Scenario,
    gen_effects,
    gen_genotypes,
    gen_mafs,
    gen_sumstats_individual,
)
from deem.sumstats import harmonize


def make_truth_bundle(
    sigma_gamma: BlockDiagMatrix,
    sigma_Gamma: BlockDiagMatrix,
    sigma_p: BlockDiagMatrix,
    v: BlockDiagMatrix,
) -> CovBundle:
    """CovBundle built from known true covariances instead of estimates."""
    num_g, v_inv_diag = diag_of_inv_prod(v, sigma_gamma)
    num_G, _ = diag_of_inv_prod(v, sigma_Gamma)
    num_p, _ = diag_of_inv_prod(v, sigma_p)
    return CovBundle(
        sigma_gamma=sigma_gamma,
        sigma_Gamma=sigma_Gamma,
        sigma_p=sigma_p,
        v=v,
        d_gamma=num_g / v_inv_diag,
        d_Gamma=num_G / v_inv_diag,
        d_p=np.maximum(num_p / v_inv_diag, 0.0),
        v_inv_diag=v_inv_diag,
    )


def scalar_bundle(d=200, c=5e-4, block=10) -> CovBundle:
    """Independent-SNP bundle with V = I and scalar coefficient variances."""
    blocks = [np.eye(block) for _ in range(d // block)]
    return make_truth_bundle(
        BlockDiagMatrix([c * b for b in blocks]),
        BlockDiagMatrix([c * b for b in blocks]),
        BlockDiagMatrix([b.copy() for b in blocks]),
        BlockDiagMatrix([b.copy() for b in blocks]),
    )


def two_snp_fixture():
    """The 2-SNP analytic fixture with exact hand-computable projections."""
    sigma_gamma = np.array([[0.5, 0.1], [0.1, 0.5]])
    sigma_Gamma = np.array([[1.5, 0.9], [0.9, 1.5]])
    v = np.array([[2.0, 1.0], [1.0, 2.0]])  # V^-1 = (1/3)[[2,-1],[-1,2]]
    return sigma_gamma, sigma_Gamma, v


def simulated_dataset(seed=3, d=100, strong=False):
    """A harmonized dataset drawn from the individual-level generator."""
    kwargs = dict(
        d=d, block_size=20, n_e=20000, n_o=20000, n_s=8000, n_ref=1000, seed=seed
    )
    if strong:
        kwargs.update(pi_c=0.3, h2_c=0.3)
    sc = Scenario(**kwargs)
    rng = np.random.default_rng(seed)
    mafs = gen_mafs(sc, rng)
    effects = gen_effects(sc, rng)
    geno = {
        "exposure": gen_genotypes(sc, mafs, sc.n_e, rng),
        "outcome": gen_genotypes(sc, mafs, sc.n_o, rng),
        "supplemental": gen_genotypes(sc, mafs, sc.n_s, rng),
        "reference": gen_genotypes(sc, mafs, sc.n_ref, rng),
    }
    e, o, s, ld = gen_sumstats_individual(sc, effects, geno, rng)
    return harmonize(e, o, s, ld), sc


@pytest.fixture(scope="session")
def strong_dataset():
    ds, _ = simulated_dataset(seed=5, d=100, strong=True)
    return ds


def random_spd(rng: np.random.Generator, n: int) -> np.ndarray:
    a = rng.standard_normal((n, n))
    return a @ a.T + n * np.eye(n)


def random_psd(rng: np.random.Generator, n: int) -> np.ndarray:
    a = rng.standard_normal((n, n))
    return a @ a.T


def write_sumstats_tsv(path, stats):
    lines = ["snp_id\teffect_allele\tother_allele\tbeta\tse\tn"]
    for r in stats.records:
        lines.append(f"{r.snp_id}\t{r.effect_allele}\t{r.other_allele}\t{r.beta!r}\t{r.se!r}\t{r.n}")
    path.write_text("\n".join(lines) + "\n")


def write_block_map(path, ld):
    lines = ["block_id\tsnp_id"]
    for b in ld.blocks:
        for s in b.snp_ids:
            lines.append(f"{b.block_id}\t{s}")
    path.write_text("\n".join(lines) + "\n")


def write_corr_dir(dirpath, ld):
    dirpath.mkdir(exist_ok=True)
    for b in ld.blocks:
        np.savetxt(dirpath / f"{b.block_id}.corr.tsv", b.corr, delimiter="\t")


@pytest.fixture(scope="session")
def cli_inputs(tmp_path_factory):
    """On-disk analysis inputs generated from the strong simulated dataset."""
    root = tmp_path_factory.mktemp("cli_inputs")
    ds, _ = simulated_dataset(seed=5, d=100, strong=True)
    write_sumstats_tsv(root / "exposure.tsv", ds.exposure)
    write_sumstats_tsv(root / "outcome.tsv", ds.outcome)
    write_sumstats_tsv(root / "supplemental.tsv", ds.supplemental)
    write_block_map(root / "blocks.tsv", ds.ld)
    write_corr_dir(root / "corr", ds.ld)
    return root
