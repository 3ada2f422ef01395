import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deem.errors import DuplicateIdError, FormatError, HarmonizeError, ValidationError
from deem.ldcore import Block, LdBlockSet
from deem.sumstats import (
    SnpRecord,
    SummaryStats,
    harmonize,
    load_sumstats,
    pvalues,
)


def rec(snp_id, beta=0.1, se=0.05, ea="A", oa="G", n=1000):
    return SnpRecord(snp_id, ea, oa, beta, se, n)


def stats(records, label="x", n=1000):
    return SummaryStats(records=tuple(records), trait_label=label, sample_size=n)


def one_block_ld(snp_ids):
    return LdBlockSet(blocks=(Block("b1", tuple(snp_ids), np.eye(len(snp_ids))),))


def test_record_validation():
    with pytest.raises(ValidationError):
        rec("s1", ea="A", oa="A")
    with pytest.raises(ValidationError):
        rec("s1", ea="N")
    with pytest.raises(ValidationError):
        rec("s1", se=0.0)
    with pytest.raises(ValidationError):
        rec("s1", beta=float("nan"))
    with pytest.raises(ValidationError):
        SnpRecord("s1", "A", "G", 0.1, 0.05, 0)


def test_duplicate_snp_rejected():
    with pytest.raises(DuplicateIdError):
        stats([rec("s1"), rec("s1")])


def test_load_sumstats_roundtrip(tmp_path):
    path = tmp_path / "x.tsv"
    path.write_text(
        "snp_id\teffect_allele\tother_allele\tbeta\tse\tn\n"
        "s1\tA\tG\t0.1\t0.05\t1000\n"
        "s2\tC\tT\t-0.2\t0.04\t1200\n"
    )
    out = load_sumstats(str(path), "exposure")
    assert out.snp_ids == ["s1", "s2"]
    assert np.allclose(out.betas, [0.1, -0.2])
    assert out.sample_size == 1100  # median n


def test_load_sumstats_without_n_column(tmp_path):
    path = tmp_path / "x.tsv"
    path.write_text(
        "snp_id\teffect_allele\tother_allele\tbeta\tse\ns1\tA\tG\t0.1\t0.05\n"
    )
    out = load_sumstats(str(path), "exposure", sample_size=500)
    assert out.records[0].n == 500
    with pytest.raises(FormatError):
        load_sumstats(str(path), "exposure")  # n column required without sample_size


def test_load_sumstats_bad_header(tmp_path):
    path = tmp_path / "x.tsv"
    path.write_text("id\tea\toa\tb\tse\tn\ns1\tA\tG\t0.1\t0.05\t100\n")
    with pytest.raises(FormatError):
        load_sumstats(str(path), "exposure")


def test_load_sumstats_bad_value(tmp_path):
    path = tmp_path / "x.tsv"
    path.write_text(
        "snp_id\teffect_allele\tother_allele\tbeta\tse\tn\ns1\tA\tG\tnope\t0.05\t100\n"
    )
    with pytest.raises(FormatError):
        load_sumstats(str(path), "exposure")


def test_harmonize_sign_flip_and_drops():
    exposure = stats([rec("s1"), rec("s2"), rec("s3", ea="A", oa="T"), rec("s4")])
    outcome = stats(
        [
            rec("s1", beta=0.3),
            rec("s2", beta=0.5, ea="G", oa="A"),  # swapped orientation
            rec("s3", beta=0.1, ea="A", oa="T"),  # strand-ambiguous
            rec("s4", ea="C", oa="T"),  # irreconcilable alleles
        ],
        label="y",
    )
    supplemental = stats([rec("s1"), rec("s2"), rec("s3", ea="A", oa="T"), rec("s4")], label="s")
    ld = one_block_ld(["s1", "s2", "s3", "s4"])
    ds = harmonize(exposure, outcome, supplemental, ld)
    assert ds.snp_index == ("s1", "s2")
    assert ds.outcome.betas[1] == pytest.approx(-0.5)
    assert ds.report == {
        "intersected": 2,
        "sign_flipped": 1,
        "dropped_inconsistent": 1,
        "dropped_ambiguous": 1,
    }


def test_harmonize_follows_ld_order():
    exposure = stats([rec("s2"), rec("s1")])
    outcome = stats([rec("s1"), rec("s2")], label="y")
    supplemental = stats([rec("s1"), rec("s2")], label="s")
    ld = one_block_ld(["s1", "s2"])
    ds = harmonize(exposure, outcome, supplemental, ld)
    assert ds.snp_index == ("s1", "s2")


def test_harmonize_empty_intersection_raises():
    exposure = stats([rec("s1")])
    outcome = stats([rec("s2")], label="y")
    supplemental = stats([rec("s1")], label="s")
    with pytest.raises(HarmonizeError):
        harmonize(exposure, outcome, supplemental, one_block_ld(["s1", "s2"]))


def test_harmonize_is_idempotent():
    exposure = stats([rec("s1"), rec("s2", ea="C", oa="T")])
    outcome = stats([rec("s1", ea="G", oa="A", beta=-0.4), rec("s2", ea="C", oa="T")], label="y")
    supplemental = stats([rec("s1"), rec("s2", ea="C", oa="T")], label="s")
    ld = one_block_ld(["s1", "s2"])
    ds1 = harmonize(exposure, outcome, supplemental, ld)
    ds2 = harmonize(ds1.exposure, ds1.outcome, ds1.supplemental, ds1.ld)
    assert ds2.snp_index == ds1.snp_index
    assert np.array_equal(ds2.outcome.betas, ds1.outcome.betas)
    assert ds2.report["sign_flipped"] == 0


def test_pvalue_known_value():
    s = stats([rec("s1", beta=0.098, se=0.05)])
    # z = 1.96 -> p very close to 0.05
    assert pvalues(s)[0] == pytest.approx(0.0499, abs=2e-4)


@settings(max_examples=50, deadline=None)
@given(
    st.floats(-5, 5, allow_nan=False),
    st.floats(0.01, 2.0),
)
def test_pvalues_invariant_to_sign(beta, se):
    p_pos = pvalues(stats([rec("s1", beta=beta, se=se)]))[0]
    p_neg = pvalues(stats([rec("s1", beta=-beta, se=se)]))[0]
    assert p_pos == pytest.approx(p_neg, rel=1e-12)
    assert 0.0 <= p_pos <= 1.0


def test_subset_preserves_order_and_ld():
    exposure = stats([rec("s1"), rec("s2"), rec("s3")])
    outcome = stats([rec("s1"), rec("s2"), rec("s3")], label="y")
    supplemental = stats([rec("s1"), rec("s2"), rec("s3")], label="s")
    ds = harmonize(exposure, outcome, supplemental, one_block_ld(["s1", "s2", "s3"]))
    sub = ds.subset(np.array([0, 2]))
    assert sub.snp_index == ("s1", "s3")
    assert sub.ld.snp_ids == ["s1", "s3"]
