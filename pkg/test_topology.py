"""
0-dimensional persistence, the spanning-tree shortcut and the
densification loss with its gradient.
"""
import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings
from hypothesis import strategies as st

from app.exceptions import ClassTooSmall, DegenerateEdge, NonMonotoneTable, NonPositiveEpsilon, TooFewPoints
from app.models.topology import LifespanWeight
from app.services.geometry import random_orthogonal
from app.services.topology import (
    UnionFind, class_losses, connected_components_at, death_time_histogram, death_time_summary, death_times,
    densification_loss, densification_loss_gradient, generalized_loss, generalized_loss_gradient,
    minimum_spanning_tree, pairwise_distances, truncation_graph,
)
from app.services.verification import central_difference, prim_mst_lengths, relative_error, sweep_death_times

LINE = np.array([[0.0], [1.0], [3.0]])


# 1. Distances, truncation graphs and components

def test_pairwise_distances_examples():
    np.testing.assert_array_equal(pairwise_distances([[0.0], [3.0]]), [[0.0, 3.0], [3.0, 0.0]])
    np.testing.assert_array_equal(pairwise_distances([[1.0, 2.0]]), [[0.0]])


def test_pairwise_distances_match_direct_evaluation():
    points = np.random.default_rng(0).normal(size=(10, 4))
    direct = np.sqrt(((points[:, None] - points[None]) ** 2).sum(axis=-1))
    np.testing.assert_allclose(pairwise_distances(points), direct, atol=1e-14)


def test_truncation_graph_uses_strict_inequality():
    assert truncation_graph(LINE, 1.0) == {0: [], 1: [], 2: []}
    assert truncation_graph(LINE, 1.5) == {0: [1], 1: [0], 2: []}
    assert truncation_graph(LINE, 10.0) == {0: [1, 2], 1: [0, 2], 2: [0, 1]}
    with pytest.raises(NonPositiveEpsilon):
        truncation_graph(LINE, 0.0)


def test_connected_components_examples():
    assert connected_components_at(LINE, 1.5) == [[0, 1], [2]]
    assert connected_components_at(LINE, 1e-9) == [[0], [1], [2]]


def test_components_refine_as_epsilon_shrinks():
    rng = np.random.default_rng(1)
    for _ in range(50):
        points = rng.normal(size=(int(rng.integers(2, 20)), 2))
        small, large = sorted(rng.uniform(0.05, 2.0, size=2))
        coarse = {i: c for c, members in enumerate(connected_components_at(points, large)) for i in members}
        for members in connected_components_at(points, small):
            assert len({coarse[i] for i in members}) == 1


def test_union_find_merges_once():
    components = UnionFind(4)
    assert components.union(0, 1)
    assert not components.union(1, 0)
    assert components.union(2, 3)
    assert components.components == 2
    assert components.groups() == [[0, 1], [2, 3]]


# 2. Death times

def test_death_times_examples():
    np.testing.assert_array_equal(death_times(LINE).deaths, [1.0, 2.0])
    np.testing.assert_array_equal(death_times(np.ones((5, 3))).deaths, np.zeros(4))
    with pytest.raises(TooFewPoints):
        death_times([[1.0, 2.0]])


def test_spanning_tree_edges_are_ordered_and_spanning():
    points = np.random.default_rng(2).normal(size=(12, 3))
    edges = minimum_spanning_tree(points)
    assert len(edges) == 11
    components = UnionFind(12)
    assert all(components.union(e.i, e.j) for e in edges)
    assert all(e.i < e.j for e in edges)


@hyp_settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(2, 30), m=st.integers(1, 8))
def test_death_times_match_independent_oracles(seed, n, m):
    points = np.random.default_rng(seed).normal(size=(n, m))
    deaths = death_times(points).deaths
    np.testing.assert_allclose(deaths, sweep_death_times(points), atol=1e-12)
    assert abs(deaths.sum() - prim_mst_lengths(points).sum()) <= 1e-12 * max(1.0, deaths.sum())


def test_death_times_under_rigid_motion_and_scaling():
    rng = np.random.default_rng(3)
    points = rng.normal(size=(15, 4))
    base = death_times(points).deaths
    moved = points[rng.permutation(15)] @ random_orthogonal(4, rng).T + rng.normal(size=4)
    np.testing.assert_allclose(death_times(moved).deaths, base, atol=1e-12)
    np.testing.assert_allclose(death_times(2.5 * points).deaths, 2.5 * base, atol=1e-12)


# 3. Densification loss

def test_densification_loss_examples():
    assert densification_loss([LINE], 1.5) == pytest.approx(1.0, abs=1e-15)
    square = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]])
    assert densification_loss([square], 2.0) == 0.0
    with pytest.raises(ClassTooSmall):
        densification_loss([LINE, [[1.0]]], 1.5)


def test_densification_loss_sums_classes():
    rng = np.random.default_rng(4)
    classes = [rng.normal(size=(6, 3)), rng.normal(size=(9, 3))]
    expected = sum(np.abs(sweep_death_times(c) - 0.8).sum() for c in classes)
    assert densification_loss(classes, 0.8) == pytest.approx(expected, abs=1e-12)
    assert class_losses(classes, 0.8) == pytest.approx([np.abs(sweep_death_times(c) - 0.8).sum() for c in classes])


def test_densification_gradient_on_a_line():
    grad = densification_loss_gradient([LINE], 1.5)[0]
    # edge (0,1) of length 1 is too short, edge (1,2) of length 2 too long
    np.testing.assert_allclose(grad, [[1.0], [-2.0], [1.0]])
    numeric = central_difference(lambda p: densification_loss([p], 1.5), LINE)
    assert relative_error(grad, numeric) <= 1e-6


def test_gradient_vanishes_at_beta():
    square = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]])
    np.testing.assert_array_equal(densification_loss_gradient([square], 2.0)[0], np.zeros((4, 2)))


def test_gradient_rejects_zero_length_edges():
    with pytest.raises(DegenerateEdge):
        densification_loss_gradient([np.zeros((3, 2))], 1.0)


def test_gradient_matches_finite_differences_on_random_classes():
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 10:
        points = rng.uniform(0.0, 4.0, size=(6, 2))
        deaths = death_times(points).deaths
        if np.min(np.abs(deaths - 1.0)) < 1e-3:
            continue
        numeric = central_difference(lambda p: densification_loss([p], 1.0), points)
        assert relative_error(densification_loss_gradient([points], 1.0)[0], numeric) <= 1e-5
        checked += 1


def test_gradient_descent_densifies_a_random_class():
    points = np.random.default_rng(0).normal(size=(20, 3))
    start_gap = abs(death_times(points).deaths.mean() - 3.0)
    losses = [densification_loss([points], 3.0)]
    for _ in range(200):
        points = points - 1e-2 * densification_loss_gradient([points], 3.0)[0]
        losses.append(densification_loss([points], 3.0))
    assert all(after < before for before, after in zip(losses, losses[1:]))
    assert abs(death_times(points).deaths.mean() - 3.0) < start_gap


# 4. Generalized lifespan-weighted loss

def test_generalized_loss_reduces_to_densification_loss():
    rng = np.random.default_rng(6)
    for _ in range(20):
        classes = [rng.normal(size=(int(rng.integers(2, 10)), 3)) for _ in range(2)]
        assert generalized_loss(classes, 1.0, LifespanWeight.length()) == densification_loss(classes, 1.0)


def test_generalized_loss_with_monotone_table():
    doubled = LifespanWeight.monotone({0.0: 0.0, 10.0: 20.0})
    assert generalized_loss([LINE], 3.0, doubled) == pytest.approx(2.0)
    shuffled = LINE[[2, 0, 1]]
    assert generalized_loss([shuffled], 3.0, doubled) == generalized_loss([LINE], 3.0, doubled)


def test_generalized_gradient_matches_finite_differences():
    weight = LifespanWeight.monotone({0.0: 0.0, 1.0: 0.5, 10.0: 20.0})
    points = np.array([[0.0, 0.0], [0.7, 0.2], [2.9, 0.4], [3.1, 2.6]])
    numeric = central_difference(lambda p: generalized_loss([p], 1.2, weight), points)
    assert relative_error(generalized_loss_gradient([points], 1.2, weight)[0], numeric) <= 1e-6


def test_lifespan_table_must_increase():
    with pytest.raises(NonMonotoneTable):
        LifespanWeight.monotone({0.0: 1.0, 1.0: 0.5})
    with pytest.raises(NonMonotoneTable):
        LifespanWeight(kind="monotone", xs=[0.0], ys=[0.0])


# 5. Histograms

def test_histogram_counts_every_death_time():
    deaths = death_times(np.random.default_rng(7).normal(size=(20, 2))).deaths
    counts, edges = death_time_histogram(deaths, 5)
    assert counts.sum() == 19
    assert edges[0] == 0.0 and edges[-1] == pytest.approx(deaths.max())
    summary = death_time_summary(deaths)
    assert summary["min"] <= summary["mean"] <= summary["max"]
