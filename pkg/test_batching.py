"""
K+1 class-partitioned batches against the original expand-by-class
construction.
"""
import numpy as np
import pytest
from pydantic import ValidationError

from app.exceptions import EmptyDataset, LengthMismatch, SubBatchTooSmall
from app.models.batching import STANDARD_ROLE
from app.services.batching import (
    OriginalBatchLoader, TopoBatchLoader, build_original_batch, build_topo_batch, partition_by_class,
)


def toy_dataset(n_per_class=(6, 5, 7), dim=2, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(len(n_per_class)), n_per_class)
    return rng.normal(size=(labels.size, dim)), labels


def imbalanced_dataset(seed=0):
    labels = np.array([0] * 900 + [1] * 100)
    labels = np.random.default_rng(seed).permutation(labels)
    return np.arange(labels.size, dtype=float)[:, None], labels


# 1. Partitioning

def test_partition_examples():
    partition = partition_by_class([0, 1, 0, 2])
    assert partition.classes == {0: [0, 2], 1: [1], 2: [3]}
    assert partition_by_class([4, 4, 4]).k == 1
    with pytest.raises(EmptyDataset):
        partition_by_class([])


def test_partition_covers_every_index_once():
    labels = np.random.default_rng(1).integers(0, 4, size=50)
    partition = partition_by_class(labels)
    assert sorted(i for idx in partition.classes.values() for i in idx) == list(range(50))


# 2. K+1 batches

def test_topo_batch_sizes_and_purity():
    inputs, labels = toy_dataset()
    batch = build_topo_batch(partition_by_class(labels), inputs, labels, 4, np.random.default_rng(2))
    assert batch.k == 3
    assert batch.inputs.shape == (16, 2)
    assert batch.standard.role == STANDARD_ROLE
    for c, sub in enumerate(batch.class_batches):
        assert np.all(sub.labels == c)
        np.testing.assert_array_equal(sub.inputs, inputs[sub.indices])


def test_topo_batch_contract_errors():
    inputs, labels = toy_dataset()
    partition = partition_by_class(labels)
    with pytest.raises(SubBatchTooSmall):
        build_topo_batch(partition, inputs, labels, 1, np.random.default_rng(0))
    with pytest.raises(LengthMismatch):
        build_topo_batch(partition, inputs[:-1], labels, 4, np.random.default_rng(0))


def test_impure_sub_batch_is_rejected():
    inputs, labels = toy_dataset()
    batch = build_topo_batch(partition_by_class(labels), inputs, labels, 3, np.random.default_rng(3))
    mixed = batch.class_batches[0].model_copy(update={"labels": np.array([0, 1, 0])})
    with pytest.raises(ValidationError):
        type(batch)(sub_batches=[mixed, *batch.sub_batches[1:]], n=3)


def test_standard_sub_batches_cover_the_dataset_each_epoch():
    inputs, labels = toy_dataset((10, 13))
    loader = TopoBatchLoader(inputs, labels, 4, seed=4)
    batches = list(loader.epoch())
    assert len(batches) == len(loader) == 6
    covered = np.concatenate([b.standard.indices for b in batches])
    assert set(covered.tolist()) == set(range(23))
    # 24 slots for 23 samples: exactly one sample is repeated
    assert np.sort(loader.standard_touches).tolist() == [1] * 22 + [2]


def test_loader_is_seeded():
    inputs, labels = toy_dataset()
    first = [b.labels.tolist() + b.standard.indices.tolist() for b in TopoBatchLoader(inputs, labels, 3, seed=5)]
    second = [b.labels.tolist() + b.standard.indices.tolist() for b in TopoBatchLoader(inputs, labels, 3, seed=5)]
    assert first == second


# 3. Original construction

def test_original_batch_examples():
    inputs, labels = toy_dataset()
    partition = partition_by_class(labels)
    single = build_original_batch(partition, inputs, labels, 1, 2, np.random.default_rng(6))
    assert len(single) == 1 and single[0].size == 2
    assert single[0].labels[0] == single[0].labels[1]
    for sub in build_original_batch(partition, inputs, labels, 8, 4, np.random.default_rng(7)):
        assert np.all(sub.labels == sub.labels[0])
    with pytest.raises(SubBatchTooSmall):
        build_original_batch(partition, inputs, labels, 0, 4, np.random.default_rng(0))


def test_minority_class_coverage():
    inputs, labels = imbalanced_dataset()
    partition = partition_by_class(labels)
    rng = np.random.default_rng(8)
    original_hits = 0
    for _ in range(1000):
        batch = build_original_batch(partition, inputs, labels, 2, 4, rng)
        original_hits += any(sub.labels[0] == 1 for sub in batch)
    topo_hits = sum(
        any(np.all(sub.labels == 1) for sub in build_topo_batch(partition, inputs, labels, 4, rng).class_batches)
        for _ in range(1000)
    )
    assert original_hits / 1000 < 0.30
    assert topo_hits == 1000


def test_epoch_touch_counters():
    inputs, labels = imbalanced_dataset()
    topo = TopoBatchLoader(inputs, labels, 4, seed=9)
    for _ in topo.epoch():
        pass
    assert topo.standard_touches.sum() == 1000
    assert np.all(topo.standard_touches == 1)

    original = OriginalBatchLoader(inputs, labels, b=8, n=4, seed=9)
    for _ in original.epoch():
        pass
    assert original.touches.sum() == 4 * 1000
