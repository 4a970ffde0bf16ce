import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ari_brute, dropout_win_probability
from vattn.errors import DegenerateDataError, InvalidArgumentError
from vattn.gaussian_latent import MixturePrior
from vattn.intrinsic import (
    ClusterModel,
    SubGaussianPrior,
    assign_cl_labels,
    fit_clusters,
    fit_gmm,
    fit_kmeans,
    select_batch,
    sgc_select,
)
from vattn.metrics import adjusted_rand_index
from vattn.ndtensor import Rng


def planted(means, n, seed, sd=1.0):
    gen = np.random.default_rng(seed)
    means = np.asarray(means, dtype=float)
    x = np.concatenate([m + sd * gen.standard_normal((n, means.shape[1])) for m in means])
    return x, np.repeat(np.arange(len(means)), n)


def test_two_blobs_recovered():
    x, truth = planted([[-5.0, -5.0], [5.0, 5.0]], 200, seed=0)
    model = fit_gmm(x, 2, Rng(1))
    lab = assign_cl_labels(model, x)
    assert adjusted_rand_index(truth, lab) == 1.0
    sub = np.r_[0:20, 200:220]
    assert ari_brute(truth[sub], lab[sub]) == 1.0


@pytest.mark.parametrize("backend", ["gmm", "kmeans"])
def test_three_blobs_recovered(backend):
    x, truth = planted([[0, 0, 0], [8, 0, 0], [0, 8, 0]], 120, seed=3)
    lab = assign_cl_labels(fit_clusters(x, 3, Rng(2), backend), x)
    assert adjusted_rand_index(truth, lab) == 1.0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 4))
def test_em_log_likelihood_is_monotone(seed, k):
    gen = np.random.default_rng(seed)
    x = np.concatenate([gen.standard_normal((40, 3)) * gen.uniform(0.2, 2), gen.uniform(-3, 3, (30, 3))])
    trace = fit_gmm(x, k, Rng(seed)).log_likelihood_trace
    assert np.all(np.diff(trace) >= -1e-9)


def test_single_component_is_closed_form_mle():
    x = np.random.default_rng(5).standard_normal((50, 4)) * [1, 2, 3, 4]
    model = fit_gmm(x, 1, Rng(0))
    assert np.allclose(model.means[0], x.mean(0), atol=1e-9)
    assert np.allclose(model.variances[0], x.var(0), atol=1e-9)
    assert model.weights[0] == pytest.approx(1.0)


def test_model_invariants():
    x, _ = planted([[0, 0], [6, 6], [0, 6]], 30, seed=8)
    model = fit_gmm(x, 3, Rng(4))
    assert np.all(model.weights > 0) and model.weights.sum() == pytest.approx(1.0)
    assert np.all(model.variances >= 1e-6)


def test_fit_errors():
    with pytest.raises(InvalidArgumentError):
        fit_gmm(np.ones((2, 3)) * [[1], [2]], 3, Rng(0))
    with pytest.raises(DegenerateDataError):
        fit_gmm(np.ones((10, 3)), 2, Rng(0))
    with pytest.raises(InvalidArgumentError):
        fit_clusters(np.eye(4), 2, Rng(0), backend="dbscan")


def test_kmeans_backend_marks_itself():
    x, _ = planted([[0, 0], [9, 9]], 20, seed=2)
    assert fit_kmeans(x, 2, Rng(0)).backend == "kmeans"


def test_assign_at_mean_and_tie_break():
    model = ClusterModel(np.array([[-4.0, 0.0], [4.0, 0.0]]), np.ones((2, 2)), np.array([0.5, 0.5]))
    assert assign_cl_labels(model, np.array([[4.0, 0.0], [-4.0, 0.0]])).tolist() == [1, 0]
    assert assign_cl_labels(model, np.array([0.0, 3.0])).tolist() == [0]
    with pytest.raises(InvalidArgumentError):
        assign_cl_labels(model, np.zeros((1, 3)))


# --- sub-center selection ----------------------------------------------------------


def fixture_prior():
    centers = np.array([[[1.0, 0.0, 0.0], [0.0, 2.0, 0.5], [0.3, 0.4, 3.0]]])
    return SubGaussianPrior(centers, np.zeros((1, 3)))


def test_eval_picks_dominant_inner_product():
    prior = fixture_prior()
    center, idx = sgc_select(prior, 0, prior.sub_centers[0, 2])
    assert idx == 2 and np.array_equal(center, prior.sub_centers[0, 2])


def test_single_subcenter_always_wins_without_randomness():
    prior = SubGaussianPrior(np.ones((2, 1, 3)), np.zeros((2, 3)))
    rng = Rng(0)
    before = rng.get_state()
    for _ in range(20):
        assert sgc_select(prior, 1, np.array([-1.0, 2.0, 0.5]), rng, mode="train")[1] == 0
    assert select_batch(prior, np.ones((4, 3)), rng, mode="train").tolist() == [[0, 0]] * 4
    assert rng.get_state() == before


def test_dropout_rate_on_dominant_score():
    scores = np.array([10.0, 1.0, 0.5])
    prior = SubGaussianPrior(np.diag(scores)[None], np.zeros((1, 3)))
    u = np.ones(3)
    rng = Rng(12)
    hits = sum(sgc_select(prior, 0, u, rng, mode="train")[1] == 0 for _ in range(10**4))
    exact = dropout_win_probability(scores, 0.2, 0)
    assert exact == pytest.approx(0.8 + 0.2 * 0.2 * 0.2, abs=1e-12)  # wins when dropped only if all are
    assert abs(hits / 1e4 - 0.8) < 0.02
    assert abs(hits / 1e4 - exact) < 0.02


@pytest.mark.parametrize("k", [2, 3, 4])
def test_dropout_matches_exhaustive_enumeration(k):
    gen = np.random.default_rng(k)
    scores = np.sort(gen.uniform(-1.0, 2.0, k))[::-1].copy()
    scores[0] += 3.0
    prior = SubGaussianPrior(np.diag(scores)[None], np.zeros((1, k)))
    rng = Rng(30 + k)
    idx = select_batch(prior, np.ones((20000, k)), rng, mode="train")[:, 0]
    for target in range(k):
        exact = dropout_win_probability(scores, 0.2, target)
        assert abs(np.mean(idx == target) - exact) < 4 * np.sqrt(max(exact * (1 - exact), 0.0) / 20000) + 1e-9


def test_zeroed_score_can_win_over_negative_ones():
    prior = SubGaussianPrior(np.array([[[1.0], [-1.0]]]), np.zeros((1, 1)))
    keep = np.array([False, True])
    assert sgc_select(prior, 0, np.ones(1), mode="train", keep=keep)[1] == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.floats(1e-3, 1e3))
def test_eval_selection_is_scale_covariant(seed, lam):
    rng = Rng(seed)
    prior = SubGaussianPrior.init(3, 4, 5, rng)
    u = rng.normal(5)
    for c in range(3):
        assert sgc_select(prior, c, u)[1] == sgc_select(prior, c, lam * u)[1]


def test_select_batch_agrees_with_single_selection():
    rng = Rng(2)
    prior = SubGaussianPrior.init(3, 4, 5, rng)
    mu = rng.normal((6, 5))
    batch = select_batch(prior, mu)
    for b in range(6):
        for c in range(3):
            assert batch[b, c] == sgc_select(prior, c, mu[b])[1]


def test_label_range_and_mode():
    prior = fixture_prior()
    with pytest.raises(InvalidArgumentError):
        sgc_select(prior, 1, np.ones(3))
    with pytest.raises(InvalidArgumentError):
        sgc_select(prior, 0, np.ones(3), mode="test")


def test_k1_init_matches_mixture_prior_draws():
    a = SubGaussianPrior.init(3, 1, 6, Rng(9))
    b = MixturePrior.init(3, 6, Rng(9))
    assert np.array_equal(a.sub_centers[:, 0], b.means)
    assert np.array_equal(a.log_vars, b.log_vars)


def test_init_subcenters_are_unit_and_distinct():
    prior = SubGaussianPrior.init(3, 3, 8, Rng(4))
    assert np.allclose(np.linalg.norm(prior.sub_centers, axis=-1), 1.0)
    assert np.array_equal(prior.log_vars, np.zeros((3, 8)))
    for c in range(3):
        cos = prior.sub_centers[c] @ prior.sub_centers[c].T
        assert np.all(cos[~np.eye(3, dtype=bool)] < 0.999)


def test_bad_shapes():
    with pytest.raises(InvalidArgumentError):
        SubGaussianPrior(np.ones((2, 3)), np.zeros((2, 3)))
    with pytest.raises(InvalidArgumentError):
        SubGaussianPrior(np.ones((2, 1, 3)), np.zeros((2, 4)))
