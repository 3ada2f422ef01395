import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deem.covest import (
    ScaleDiag,
    build_cov_bundle,
    build_v,
    estimate_sigma,
    estimate_sigma_p,
    project_diagonal,
    scale_diag,
)
from deem.errors import AlignmentError, ConditioningError
from deem.ldcore import Block, BlockDiagMatrix, LdBlockSet, trace_prod
from deem.sumstats import SnpRecord, SummaryStats

from .conftest import random_psd, random_spd, two_snp_fixture


def ld_from_corr(corr, block_id="b1"):
    n = corr.shape[0]
    return LdBlockSet(blocks=(Block(block_id, tuple(f"s{i}" for i in range(n)), corr),))


def test_scale_diag_known_value():
    s = SummaryStats(
        records=(SnpRecord("s1", "A", "G", 0.004, 0.005, 2000),),
        trait_label="x",
        sample_size=2000,
    )
    assert scale_diag(s).entries[0] == pytest.approx(np.sqrt(2.5e-5 + 8e-9), rel=1e-14)


def test_scale_diag_rejects_nonpositive():
    with pytest.raises(ConditioningError):
        ScaleDiag(entries=np.array([0.0]))


def test_estimate_sigma_scales_correlation():
    corr = np.array([[1.0, 0.5], [0.5, 1.0]])
    sigma = estimate_sigma(ScaleDiag(np.array([2.0, 3.0])), ld_from_corr(corr))
    assert np.allclose(sigma.blocks[0], [[4.0, 3.0], [3.0, 9.0]])


def test_estimate_sigma_p_identity_scale_is_r_squared():
    corr = np.array([[1.0, 0.5], [0.5, 1.0]])
    sigma_p = estimate_sigma_p(ScaleDiag(np.ones(2)), ld_from_corr(corr))
    assert np.allclose(sigma_p.blocks[0], corr @ corr)


def test_estimate_sigma_p_is_psd():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((10, 4))
    corr = np.corrcoef(a, rowvar=False)
    s = ScaleDiag(rng.uniform(0.5, 2.0, 4))
    sigma_p = estimate_sigma_p(s, ld_from_corr(corr))
    assert np.all(np.linalg.eigvalsh(sigma_p.blocks[0]) > -1e-12)


def test_build_v_diagonal_and_blend():
    corr = np.array([[1.0, 0.6], [0.6, 1.0]])
    ld = ld_from_corr(corr)
    sigma_gamma = BlockDiagMatrix([np.diag([1.0, 2.0])])
    sigma_p = BlockDiagMatrix([np.diag([3.0, 1.0])])
    v = build_v(sigma_gamma, sigma_p, ld, lam=0.5)
    # per-SNP variance a + (tr a / tr p) * p with tr a = 3, tr p = 4
    expect_diag = np.array([1.0 + 0.75 * 3.0, 2.0 + 0.75 * 1.0])
    assert np.allclose(np.diag(v.blocks[0]), expect_diag)
    off = 0.5 * 0.6 * np.sqrt(expect_diag[0] * expect_diag[1])
    assert v.blocks[0][0, 1] == pytest.approx(off)


def test_build_v_snp_weights():
    corr = np.eye(2)
    ld = ld_from_corr(corr)
    sigma = BlockDiagMatrix([np.eye(2)])
    v = build_v(sigma, sigma, ld, lam=0.5, snp_weights=np.array([4.0, 1.0]))
    assert v.blocks[0][0, 0] == pytest.approx(4.0 * 2.0)
    with pytest.raises(AlignmentError):
        build_v(sigma, sigma, ld, snp_weights=np.array([-1.0, 1.0]))


def test_projection_on_two_snp_fixture():
    sigma_gamma, sigma_Gamma, v_mat = two_snp_fixture()
    v = BlockDiagMatrix([v_mat])
    d_gamma = project_diagonal(BlockDiagMatrix([sigma_gamma]), v)
    d_Gamma = project_diagonal(BlockDiagMatrix([sigma_Gamma]), v)
    assert np.allclose(d_gamma, 0.45, atol=1e-14)
    assert np.allclose(d_Gamma, 1.05, atol=1e-14)
    # the underlying entries: [V^-1 Sigma_gamma]_11 = 0.3, [V^-1]_11 = 2/3
    v_inv = np.linalg.inv(v_mat)
    assert (v_inv @ sigma_gamma)[0, 0] == pytest.approx(0.3)
    assert v_inv[0, 0] == pytest.approx(2.0 / 3.0)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_projection_orthogonality(seed, n):
    # tr{D_test V^-1 (Sigma - D_hat)} = 0 for every diagonal D_test
    rng = np.random.default_rng(seed)
    v = BlockDiagMatrix([random_spd(rng, n)])
    sigma = BlockDiagMatrix([random_psd(rng, n)])
    d_hat = project_diagonal(sigma, v)
    d_test = rng.standard_normal(n)
    v_inv = np.linalg.inv(v.blocks[0])
    resid = np.trace(np.diag(d_test) @ v_inv @ (sigma.blocks[0] - np.diag(d_hat)))
    scale = max(1.0, abs(np.trace(np.diag(d_test) @ v_inv @ sigma.blocks[0])))
    assert abs(resid) <= 1e-9 * scale


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_projection_preserves_weighted_trace(seed, n):
    rng = np.random.default_rng(seed)
    v = BlockDiagMatrix([random_spd(rng, n)])
    sigma = BlockDiagMatrix([random_psd(rng, n)])
    d_hat = project_diagonal(sigma, v)
    v_inv_diag = np.diag(np.linalg.inv(v.blocks[0]))
    assert float(np.sum(v_inv_diag * d_hat)) == pytest.approx(
        trace_prod(v, sigma), rel=1e-10, abs=1e-12
    )


def test_build_cov_bundle_end_to_end(strong_dataset):
    bundle = build_cov_bundle(strong_dataset, lam=0.5)
    assert bundle.dim == strong_dataset.dim
    assert np.all(bundle.d_gamma > 0)
    assert np.all(bundle.d_Gamma > 0)
    assert np.all(bundle.d_p >= 0)
    assert np.all(bundle.v_inv_diag > 0)
    # trace identity carries through the full pipeline
    assert float(np.sum(bundle.v_inv_diag * bundle.d_gamma)) == pytest.approx(
        trace_prod(bundle.v, bundle.sigma_gamma), rel=1e-10
    )
