"""
Property-based tests for clustering module.
Uses Hypothesis for property-based testing.
"""

import pytest
from hypothesis import given, strategies as st, settings

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pandas as pd
from sklearn.metrics import adjusted_rand_score

from app.errors import DataError, NumericalError
from app.clustering import (
    GmmModel,
    assign_labels,
    bic,
    bic_curve_frame,
    bic_from_loglik,
    candidate_ks,
    drop_constant,
    elbow,
    fit_gmm,
    inverse_standardize,
    n_parameters,
    pca_whiten,
    select_k,
    standardize,
)
from app.models import BicPoint


def blobs(centres, n_per: int = 100, sigma: float = 0.5, seed: int = 0):
    rng = np.random.default_rng(seed)
    x = np.vstack([rng.normal(c, sigma, size=(n_per, len(c))) for c in centres])
    truth = np.repeat(np.arange(len(centres)), n_per)
    return x, truth


def curve(values, start: int = 1):
    return [BicPoint(k=start + i, bic=v, loglik=0.0, seed=0, n_iter=1) for i, v in enumerate(values)]


# ============== STANDARDISATION ==============

def test_standardize_and_inverse():
    frame = pd.DataFrame({"a": [1.0, 2.0, 3.0, 4.0], "b": [5.0, 5.0, 5.0, 5.0], "c": [0.0, 10.0, 0.0, 10.0]})
    z, params = standardize(frame)
    assert params.columns == ["a", "b", "c"]
    assert params.constant_columns == ["b"]
    assert np.allclose(z.mean(axis=0), 0.0)
    assert np.allclose(z[:, [0, 2]].std(axis=0), 1.0)
    assert (z[:, 1] == 0.0).all()
    np.testing.assert_allclose(inverse_standardize(z, params), frame.to_numpy())


def test_repeated_value_column_is_constant():
    # the float mean of repeated 0.1 need not be exactly 0.1
    x = np.column_stack([np.arange(10.0), np.full(10, 0.1), np.full(10, 7.0)])
    z, params = standardize(x)
    assert params.constant.tolist() == [False, True, True]
    assert (z[:, 1:] == 0.0).all()
    np.testing.assert_allclose(inverse_standardize(z, params)[:, 1], 0.1)


def test_drop_constant_keeps_varying_columns_in_order():
    x, truth = blobs([(0.0, 0.0), (6.0, 6.0)], seed=12)
    padded = np.column_stack([np.full(len(x), 3.0), x[:, 0], np.full(len(x), 0.1), x[:, 1]])
    z, params = standardize(padded)
    reduced = drop_constant(z, params)
    assert params.constant_columns == ["0", "2"]
    np.testing.assert_array_equal(reduced, z[:, [1, 3]])

    result, models = select_k(reduced, 1, 5, seeds_per_k=2, seed=0)
    assert result.k == 2
    assert adjusted_rand_score(truth, assign_labels(models[2], reduced).labels) == 1.0

    flat = np.ones((6, 3))
    z, params = standardize(flat)
    assert drop_constant(z, params).tolist() == [[0.0]] * 6


def test_standardize_rejects_missing():
    with pytest.raises(DataError):
        standardize(np.array([[1.0, np.nan], [2.0, 3.0]]))


def test_pca_whitening():
    rng = np.random.default_rng(1)
    base = rng.normal(size=(500, 2))
    x = np.column_stack([base[:, 0], base[:, 0] * 2 + 0.01 * base[:, 1], base[:, 1]])
    y, params = pca_whiten(x, variance=0.999)
    assert y.shape[1] == params.components.shape[0] <= 3
    np.testing.assert_allclose(np.cov(y.T, bias=True), np.eye(y.shape[1]), atol=1e-8)
    np.testing.assert_allclose(params.transform(x), y)
    with pytest.raises(NumericalError):
        pca_whiten(np.ones((10, 3)))


# ============== FITTING ==============

def test_single_component_closed_form():
    x, _ = blobs([(0.0, 0.0)], n_per=200, sigma=1.0, seed=3)
    model = fit_gmm(x, 1)
    np.testing.assert_allclose(model.means[0], x.mean(axis=0), atol=1e-10)
    expected = np.cov(x.T, bias=True) + model.reg * np.eye(2)
    np.testing.assert_allclose(model.covariances[0], expected, atol=1e-10)
    assert model.weights.tolist() == [1.0]


def test_two_blobs_recovered():
    x, truth = blobs([(0.0, 0.0), (6.0, 6.0)], seed=4)
    model = fit_gmm(x, 2, seed=1)
    order = np.argsort(model.means[:, 0])
    np.testing.assert_allclose(model.means[order], [[0.0, 0.0], [6.0, 6.0]], atol=0.2)
    labels = assign_labels(model, x).labels
    assert adjusted_rand_score(truth, labels) == 1.0


def test_same_seed_same_model():
    x, _ = blobs([(0.0, 0.0), (4.0, 0.0), (0.0, 4.0)], seed=5)
    a = fit_gmm(x, 3, seed=11)
    b = fit_gmm(x, 3, seed=11)
    np.testing.assert_array_equal(a.means, b.means)
    np.testing.assert_array_equal(a.covariances, b.covariances)
    assert a.trace == b.trace


def test_em_trace_never_decreases():
    x, _ = blobs([(0.0, 0.0), (3.0, 0.0), (1.5, 2.5)], sigma=0.8, seed=6)
    for seed in range(5):
        model = fit_gmm(x, 4, seed=seed)
        assert np.all(np.diff(model.trace) >= -1e-8)
        assert model.loglik == model.trace[-1]


def test_fit_argument_errors():
    x = np.zeros((3, 2))
    with pytest.raises(DataError):
        fit_gmm(x, 0)
    with pytest.raises(DataError):
        fit_gmm(x, 4)
    with pytest.raises(DataError):
        fit_gmm(x, 1, covariance="spherical")


def test_diagonal_covariance():
    x, _ = blobs([(0.0, 0.0), (6.0, 0.0)], seed=7)
    model = fit_gmm(x, 2, covariance="diag")
    for cov in model.covariances:
        assert cov[0, 1] == 0.0 and cov[1, 0] == 0.0
    assert n_parameters(2, 2, "diag") == 1 + 4 + 4


def test_model_dict_round_trip_keeps_predictions():
    x, _ = blobs([(0.0, 0.0), (6.0, 0.0)], seed=8)
    model = fit_gmm(x, 2, seed=2)
    restored = GmmModel.from_dict(model.to_dict())
    np.testing.assert_array_equal(assign_labels(restored, x).labels, assign_labels(model, x).labels)


# ============== BIC ==============

def test_bic_formula():
    assert n_parameters(1, 2) == 5
    assert bic_from_loglik(-100.0, 100, 1, 2) == pytest.approx(223.03, abs=0.01)
    assert bic_from_loglik(-100.0, 100, 2, 2) > bic_from_loglik(-100.0, 100, 1, 2)


def test_bic_prefers_true_component_count():
    x, _ = blobs([(0.0, 0.0), (5.0, 0.0), (0.0, 5.0)], seed=9)
    assert bic(fit_gmm(x, 3, seed=0), x) < bic(fit_gmm(x, 1), x)


def test_bic_dimension_mismatch():
    x, _ = blobs([(0.0, 0.0)], seed=1)
    with pytest.raises(DataError):
        bic(fit_gmm(x, 1), np.zeros((5, 3)))


# **Feature: clustering, Property 1: Relabelling components changes nothing but label names**
@given(seed=st.integers(min_value=0, max_value=1000))
@settings(max_examples=20, deadline=None)
def test_component_permutation_invariance(seed):
    """
    For any fitted model and component permutation:
    1. BIC is unchanged
    2. the label partition is unchanged up to renaming
    """
    x, _ = blobs([(0.0, 0.0), (5.0, 0.0), (0.0, 5.0)], n_per=30, seed=seed)
    model = fit_gmm(x, 3, seed=seed)
    perm = np.random.default_rng(seed).permutation(3)
    permuted = GmmModel(
        weights=model.weights[perm], means=model.means[perm], covariances=model.covariances[perm],
        covariance_type=model.covariance_type,
    )
    assert bic(permuted, x) == pytest.approx(bic(model, x), rel=1e-9)
    a = assign_labels(model, x).labels
    b = assign_labels(permuted, x).labels
    assert adjusted_rand_score(a, b) == 1.0


# ============== LABELS ==============

def test_responsibilities():
    x, _ = blobs([(0.0, 0.0), (8.0, 0.0)], seed=10)
    model = fit_gmm(x, 2, seed=0)
    labeling = assign_labels(model, np.array([model.means[0], model.means[1]]))
    assert labeling.responsibilities.max(axis=1).min() > 0.99
    assert labeling.labels.tolist() == [0, 1]
    np.testing.assert_allclose(assign_labels(model, x).responsibilities.sum(axis=1), 1.0)


def test_tie_goes_to_lower_component():
    model = GmmModel(weights=np.array([0.5, 0.5]), means=np.zeros((2, 2)), covariances=np.stack([np.eye(2)] * 2))
    labeling = assign_labels(model, np.array([[0.3, -0.2]]))
    assert labeling.labels.tolist() == [0]
    np.testing.assert_allclose(labeling.responsibilities, [[0.5, 0.5]])


# ============== SELECTION ==============

def test_elbow_rules():
    assert elbow(curve([100.0, 50.0, 45.0, 44.0])) == (2, "elbow")
    assert elbow(curve([10.0, 8.0, 6.0, 4.0], start=2)) == (3, "fallback")
    assert elbow(curve([10.0, 12.0])) == (1, "lowest")
    assert elbow(curve([10.0], start=4)) == (4, "only")
    with pytest.raises(DataError):
        elbow([])


def test_candidate_ks():
    assert candidate_ks(10, 1, 8) == [1, 2, 3, 4, 5]
    assert candidate_ks(1, 1, 8) == [1]
    assert candidate_ks(100, 3, 5) == [3, 4, 5]


def test_select_k_two_blobs():
    x, truth = blobs([(0.0, 0.0), (6.0, 6.0)], seed=12)
    result, models = select_k(x, 1, 5, seeds_per_k=2, seed=0)
    assert result.k == 2
    assert result.method == "elbow"
    assert [p.k for p in result.curve] == [1, 2, 3, 4, 5]
    assert set(models) == {1, 2, 3, 4, 5}
    assert adjusted_rand_score(truth, assign_labels(models[2], x).labels) == 1.0
    frame = bic_curve_frame(result)
    assert list(frame.columns) == ["k", "bic", "loglik", "seed", "n_iter"]


def test_select_k_thread_independent():
    x, _ = blobs([(0.0, 0.0), (5.0, 0.0), (10.0, 0.0)], n_per=40, seed=13)
    single, _ = select_k(x, 1, 4, seeds_per_k=2, seed=3, threads=1)
    many, _ = select_k(x, 1, 4, seeds_per_k=2, seed=3, threads=4)
    assert single.model_dump() == many.model_dump()


@pytest.mark.slow
def test_select_k_finds_three_blobs():
    hits = 0
    for seed in range(10):
        x, _ = blobs([(0.0, 0.0), (5.0, 0.0), (10.0, 0.0)], seed=100 + seed)
        result, _ = select_k(x, 1, 6, seeds_per_k=3, seed=seed)
        hits += result.k == 3
    assert hits >= 9


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
