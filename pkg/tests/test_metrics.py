import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.metrics import adjusted_rand_score, silhouette_score

from oracles import ari_brute, silhouette_brute
from vattn.errors import InvalidArgumentError
from vattn.intrinsic import SubGaussianPrior
from vattn.metrics import (
    adjusted_rand_index,
    contingency_table,
    cosine_matrix,
    mae_mse,
    mean_offdiag,
    mean_std,
    per_domain_errors,
    predicted_count,
    silhouette,
    subdomain_report,
    welford,
)
from vattn.ndtensor import Rng
from vattn.report import (
    RunReport,
    aggregate,
    aggregate_csv,
    comparison_table,
    load_report,
    report_json,
    strip_header,
    write_report,
)
from vattn.synthdomains import DomainSpec, generate


def test_mae_mse_examples():
    assert mae_mse([1.0, 2.0], [1.0, 2.0]) == (0.0, 0.0)
    mae, mse = mae_mse([2.0, -4.0], [0.0, 0.0])
    assert mae == 3.0
    assert mse == pytest.approx(math.sqrt(10), abs=1e-12)
    assert mse == pytest.approx(math.sqrt((2**2 + 4**2) / 2), abs=1e-12)
    with pytest.raises(InvalidArgumentError):
        mae_mse([], [])
    with pytest.raises(InvalidArgumentError):
        mae_mse([1.0], [1.0, 2.0])


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e4, 1e4)))
def test_mae_never_exceeds_mse(err):
    mae, mse = mae_mse(err, np.zeros_like(err))
    assert mae <= mse * (1 + 1e-12) + 1e-12


def test_predicted_count():
    assert predicted_count(np.zeros((1, 4, 4))) == 0.0
    [s] = generate([DomainSpec("T", (7, 7), 1.2, n_train=1, n_test=1, grid=(10, 10))], 3)[0]
    assert predicted_count(s.density_gt) == pytest.approx(7.0, abs=1e-6)
    m = Rng(1).normal((5, 5))
    assert predicted_count(2.5 * m) == pytest.approx(2.5 * predicted_count(m), rel=1e-12)


def test_per_domain_errors_skips_absent_domains():
    out = per_domain_errors([1, 2, 5], [1, 3, 5], [0, 0, 2], ["a", "b", "c"])
    assert set(out) == {"a", "c"} and out["a"]["mae"] == 0.5 and out["c"]["n"] == 1


def test_silhouette_separated_blobs():
    x = np.array([[0, 0], [0.1, 0], [0, 0.1], [10, 10], [10.1, 10], [10, 10.1]])
    lab = [0, 0, 0, 1, 1, 1]
    assert silhouette(x, lab) > 0.9
    assert silhouette(x, lab) == pytest.approx(silhouette_brute(x, lab), abs=1e-12)


def test_silhouette_null_distribution():
    gen = np.random.default_rng(0)
    for seed in range(10):
        x = gen.standard_normal((120, 3))
        lab = np.random.default_rng(seed).integers(0, 3, 120)
        assert abs(silhouette(x, lab)) < 0.1


def test_silhouette_coincident_clusters():
    x = np.array([[1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [1.0, 1.0]])
    assert silhouette(x, [0, 0, 1, 1]) <= 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 4))
def test_silhouette_matches_oracles(seed, k):
    gen = np.random.default_rng(seed)
    x = gen.standard_normal((25, 3)) + gen.integers(0, 3, (25, 1))
    lab = np.arange(25) % k
    ours = silhouette(x, lab)
    assert ours == pytest.approx(silhouette_brute(x, lab), abs=1e-9)
    assert ours == pytest.approx(silhouette_score(x, lab), abs=1e-9)


def test_silhouette_needs_two_labels():
    with pytest.raises(InvalidArgumentError):
        silhouette(np.ones((3, 2)), [1, 1, 1])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=2, max_size=25), st.integers(0, 2**31))
def test_ari_matches_oracles(a, seed):
    b = np.random.default_rng(seed).integers(0, 3, len(a))
    ours = adjusted_rand_index(a, b)
    assert ours == pytest.approx(ari_brute(a, b), abs=1e-12)
    assert ours == pytest.approx(adjusted_rand_score(a, b), abs=1e-12)


def test_ari_permutation_invariant():
    a = [0, 0, 1, 1, 2, 2]
    assert adjusted_rand_index(a, [2, 2, 0, 0, 1, 1]) == 1.0


def test_contingency_sums():
    rows, cols = [0, 1, 1, 2, 2, 2], [1, 0, 1, 1, 1, 0]
    t = contingency_table(rows, cols, 3, 2)
    assert t.sum(1).tolist() == [1, 2, 3] and t.sum(0).tolist() == [2, 4]


def test_subdomain_report_examples():
    same = SubGaussianPrior(np.ones((2, 3, 4)), np.zeros((2, 4)))
    cos, counts = subdomain_report(same, [0, 0, 1, 1, 1], [0, 2, 1, 1, 0])
    assert all(np.allclose(c, 1.0) for c in cos)
    assert counts.sum(0).tolist() == [2, 3] and counts.shape == (3, 2)
    ortho = SubGaussianPrior(np.eye(3)[None] * [[1.0], [2.0], [0.5]], np.zeros((1, 3)))
    cos, _ = subdomain_report(ortho, [0], [0])
    assert mean_offdiag(cos[0]) == 0.0 and np.allclose(np.diag(cos[0]), 1.0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4, 3), elements=st.floats(-10, 10)))
def test_cosines_are_bounded(v):
    c = cosine_matrix(v)
    assert np.all(c >= -1.0) and np.all(c <= 1.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30))
def test_mean_std_matches_welford(values):
    m1, s1 = mean_std(values)
    m2, s2 = welford(values)
    assert abs(m1 - m2) <= 1e-12 * max(1.0, abs(m1)) and abs(s1 - s2) <= 1e-12 * max(1.0, s1)


# --- reports -----------------------------------------------------------------------


def fake_report(seed, mode="jt", shift=0.0):
    per = {"A": {"mae": 1.0 + shift, "mse": 2.0 + shift, "n": 5}, "B": {"mae": 3.0, "mse": 4.0, "n": 5}}
    return RunReport(mode=mode, seed=seed, config={"seed": seed}, domains=["A", "B"], per_domain=per)


def test_report_header_is_only_difference(tmp_path):
    rep = fake_report(0)
    a = report_json(rep, timestamp="2026-01-01T00:00:00")
    b = report_json(rep, timestamp="2026-06-01T00:00:00")
    assert a != b and strip_header(a) == strip_header(b)
    write_report(tmp_path, rep)
    assert load_report(tmp_path / "report.json")["per_domain"] == rep.per_domain
    assert (tmp_path / "report_domains.csv").read_text().splitlines()[0] == "domain,mae,mse,n"


def test_aggregate_against_one_pass_oracle():
    reps = [fake_report(s, shift=0.1 * s).to_dict() for s in range(5)]
    agg = aggregate(reps)
    vals = [1.0 + 0.1 * s for s in range(5)]
    m, s = welford(vals)
    assert abs(agg[("JT", "A")]["mae_mean"] - m) <= 1e-12
    assert abs(agg[("JT", "A")]["mae_std"] - s) <= 1e-12
    csv_text = aggregate_csv(agg)
    assert csv_text.splitlines()[0].split(",")[:4] == ["method", "domain", "mae_mean", "mae_std"]
    assert "JT" in comparison_table(agg)


def test_aggregate_dkpnet_expands_stages():
    rep = fake_report(0, mode="dkpnet")
    rep.stages = {"stage1": fake_report(0).to_dict(), "stage2": fake_report(0, shift=-0.5).to_dict()}
    agg = aggregate([rep.to_dict()])
    assert agg[("InVA", "A")]["mae_mean"] == 0.5 and agg[("VA", "A")]["mae_mean"] == 1.0
