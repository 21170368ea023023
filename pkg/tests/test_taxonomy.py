"""
Property-based tests for taxonomy module.
Uses Hypothesis for property-based testing.
"""

import pytest
from hypothesis import given, strategies as st, settings

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pandas as pd
from scipy.cluster.hierarchy import linkage

from app.errors import DataError
from app.taxonomy import (
    CityPool,
    Taxonomy,
    branch_colours,
    cluster_centroids,
    cluster_profiles,
    combine_pools,
    cophenetic_correlation,
    cophenetic_matrix,
    cut,
    to_newick,
    ward_linkage,
)


def brute_force_ward_heights(points: np.ndarray) -> list:
    """Merge heights sqrt(2 * SSE increase), recomputed from scratch at every step."""
    clusters = [[i] for i in range(len(points))]
    heights = []
    while len(clusters) > 1:
        best = None
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                pa, pb = points[clusters[a]], points[clusters[b]]
                na, nb = len(pa), len(pb)
                gap = pa.mean(axis=0) - pb.mean(axis=0)
                increase = na * nb / (na + nb) * float(gap @ gap)
                if best is None or increase < best[0]:
                    best = (increase, a, b)
        increase, a, b = best
        heights.append(np.sqrt(2 * increase))
        merged = clusters[a] + clusters[b]
        clusters = [c for i, c in enumerate(clusters) if i not in (a, b)] + [merged]
    return heights


# **Feature: taxonomy, Property 1: Ward heights equal the sum-of-squares oracle**
@given(n=st.integers(min_value=2, max_value=7), d=st.integers(min_value=1, max_value=4), seed=st.integers(min_value=0, max_value=10_000))
@settings(max_examples=20, deadline=None)
def test_ward_matches_brute_force(n, d, seed):
    """
    For any set of centroids:
    1. merge heights equal the brute-force SSE oracle
    2. heights equal scipy's Ward linkage
    3. heights never decrease
    """
    points = np.random.default_rng(seed).normal(size=(n, d))
    taxonomy = ward_linkage(points)
    heights = [m.height for m in taxonomy.merges]
    np.testing.assert_allclose(heights, brute_force_ward_heights(points), rtol=1e-9)
    np.testing.assert_allclose(heights, linkage(points, method="ward")[:, 2], rtol=1e-9)
    assert np.all(np.diff(heights) >= -1e-12)
    assert taxonomy.merges[-1].size == n


def test_three_points_on_a_line():
    taxonomy = ward_linkage(np.array([[0.0], [1.0], [10.0]]), leaves=["a", "b", "c"])
    first, second = taxonomy.merges
    assert (first.left, first.right, first.height, first.size) == (0, 1, 1.0, 2)
    assert (second.left, second.right, second.size) == (2, 3, 3)
    assert second.height == pytest.approx(np.sqrt(4 / 3) * 9.5)


def test_identical_centroids_merge_at_zero():
    taxonomy = ward_linkage(np.array([[1.0, 2.0], [1.0, 2.0], [5.0, 5.0]]))
    assert taxonomy.merges[0].height == 0.0
    assert (taxonomy.merges[0].left, taxonomy.merges[0].right) == (0, 1)


def test_tie_merges_lowest_pair():
    taxonomy = ward_linkage(np.array([[0.0], [1.0], [2.0]]))
    assert (taxonomy.merges[0].left, taxonomy.merges[0].right) == (0, 1)


def test_single_centroid_rejected():
    with pytest.raises(DataError):
        ward_linkage(np.array([[1.0, 1.0]]))


# ============== COPHENETIC ==============

def test_cophenetic_two_leaves():
    taxonomy = ward_linkage(np.array([[0.0, 0.0], [3.0, 4.0]]))
    np.testing.assert_allclose(cophenetic_matrix(taxonomy), [[0.0, 5.0], [5.0, 0.0]])
    assert cophenetic_correlation(taxonomy) is None


@given(n=st.integers(min_value=3, max_value=8), seed=st.integers(min_value=0, max_value=10_000))
@settings(max_examples=20, deadline=None)
def test_cophenetic_is_ultrametric(n, seed):
    taxonomy = ward_linkage(np.random.default_rng(seed).normal(size=(n, 3)))
    c = cophenetic_matrix(taxonomy)
    assert np.all(np.diag(c) == 0.0)
    np.testing.assert_allclose(c, c.T)
    for i in range(n):
        for j in range(n):
            for k in range(n):
                assert c[i, j] <= max(c[i, k], c[k, j]) + 1e-9
    value = cophenetic_correlation(taxonomy)
    assert value is None or -1.0 <= value <= 1.0


# ============== CUTS ==============

def test_cut_examples():
    taxonomy = ward_linkage(np.array([[0.0], [1.0], [10.0], [11.0]]))
    assert cut(taxonomy, 1).tolist() == [0, 0, 0, 0]
    assert cut(taxonomy, 2).tolist() == [0, 0, 1, 1]
    assert cut(taxonomy, 4).tolist() == [0, 1, 2, 3]
    with pytest.raises(DataError):
        cut(taxonomy, 0)
    with pytest.raises(DataError):
        cut(taxonomy, 5)


@given(n=st.integers(min_value=2, max_value=9), seed=st.integers(min_value=0, max_value=10_000))
@settings(max_examples=20, deadline=None)
def test_cuts_refine(n, seed):
    taxonomy = ward_linkage(np.random.default_rng(seed).normal(size=(n, 2)))
    for k in range(1, n):
        coarse, fine = cut(taxonomy, k), cut(taxonomy, k + 1)
        assert len(set(fine)) == k + 1
        for branch in set(fine):
            assert len(set(coarse[fine == branch])) == 1


def test_branch_colours():
    taxonomy = ward_linkage(np.array([[0.0], [1.0], [10.0], [11.0], [12.0]]), leaves=list("abcde"))
    colours = branch_colours(taxonomy, 2)
    assert list(colours.columns) == ["leaf", "branch", "shade"]
    assert colours["branch"].tolist() == [0, 0, 1, 1, 1]
    for _, group in colours.groupby("branch"):
        assert sorted(group["shade"]) == list(range(len(group)))


# ============== EXPORT ==============

def test_newick():
    taxonomy = ward_linkage(np.array([[0.0], [1.0], [10.0]]), leaves=["t0", "t1", "odd name"])
    text = to_newick(taxonomy)
    assert text.endswith(";")
    assert text.count("(") == text.count(")") == 2
    assert "t0:1" in text and "t1:1" in text
    assert "'odd name':" in text


def test_taxonomy_dict_round_trip():
    taxonomy = ward_linkage(np.random.default_rng(0).normal(size=(5, 3)), tags=["x"] * 5, columns=["a", "b", "c"])
    data = taxonomy.to_dict()
    assert data["cophenetic_correlation"] is not None
    restored = Taxonomy.from_dict(data)
    np.testing.assert_array_equal(restored.linkage(), taxonomy.linkage())
    assert restored.tags == taxonomy.tags


# ============== CENTROIDS & PROFILES ==============

def test_centroids_skip_empty_labels():
    x = np.array([[0.0, 0.0], [2.0, 2.0], [10.0, 10.0]])
    centroids = cluster_centroids(x, [0, 0, 2])
    assert centroids.index.tolist() == [0, 2]
    np.testing.assert_allclose(centroids.to_numpy(), [[1.0, 1.0], [10.0, 10.0]])
    with pytest.raises(DataError):
        cluster_centroids(x, [0, 1])


def test_profiles_in_original_units():
    matrix = pd.DataFrame({"area": [10.0, 20.0, 30.0, 100.0], "height": [3.0, 3.0, 9.0, 12.0]})
    profile = cluster_profiles(matrix, [0, 0, 0, 1])
    assert list(profile.columns) == ["label", "character", "mean", "median"]
    row = profile[(profile["label"] == 0) & (profile["character"] == "area")].iloc[0]
    assert row["mean"] == 20.0 and row["median"] == 20.0
    assert len(profile) == 4


# ============== POOLING ==============

def _pool(tag: str, seed: int, shift: float = 0.0) -> CityPool:
    rng = np.random.default_rng(seed)
    labels = np.repeat([0, 1, 2], 20)
    matrix = pd.DataFrame(rng.normal(size=(60, 3)) + labels[:, None] * 5 + shift, columns=["a", "b", "c"])
    return CityPool(tag=tag, matrix=matrix, labels=labels)


def test_pooling_a_city_with_itself():
    city = _pool("x", 1)
    twin = CityPool(tag="y", matrix=city.matrix.copy(), labels=city.labels.copy())
    taxonomy = combine_pools([city, twin])
    assert taxonomy.leaves == ["x:0", "x:1", "x:2", "y:0", "y:1", "y:2"]
    assert taxonomy.tags == ["x"] * 3 + ["y"] * 3
    for merge in taxonomy.merges[:3]:
        assert merge.height == pytest.approx(0.0, abs=1e-12)
        assert taxonomy.leaves[merge.left].split(":")[1] == taxonomy.leaves[merge.right].split(":")[1]


def test_pooling_disjoint_cities_splits_by_city():
    taxonomy = combine_pools([_pool("near", 2), _pool("far", 3, shift=1000.0)])
    assert cut(taxonomy, 2).tolist() == [0, 0, 0, 1, 1, 1]


def test_pooling_per_city_standardization():
    taxonomy = combine_pools([_pool("x", 4), _pool("y", 5, shift=1000.0)], standardization="per_city")
    assert taxonomy.n_leaves == 6
    assert sorted(cut(taxonomy, 3).tolist()) == [0, 0, 1, 1, 2, 2]


def test_pooling_errors():
    a = _pool("x", 6)
    renamed = CityPool(tag="y", matrix=a.matrix.rename(columns={"c": "z"}), labels=a.labels)
    with pytest.raises(DataError, match="z"):
        combine_pools([a, renamed])
    with pytest.raises(DataError):
        combine_pools([a, _pool("x", 7)])
    with pytest.raises(DataError):
        combine_pools([a, _pool("y", 7)], standardization="global")
    with pytest.raises(DataError):
        combine_pools([])


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
