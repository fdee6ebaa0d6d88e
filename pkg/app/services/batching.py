"""
Class-partitioned batch construction.

TopoBatchLoader delivers K class sub-batches (sampled with replacement from
each class pool) plus one standard sub-batch drawn from a per-epoch shuffle
of the whole dataset. OriginalBatchLoader expands b drawn samples into
same-class groups of n, so an epoch passes over the data n times.
"""
import logging
import math
from typing import Iterator, List, Optional

import numpy as np

from app.exceptions import EmptyDataset, LengthMismatch, SubBatchTooSmall
from app.models.batching import STANDARD_ROLE, ClassPartition, SubBatch, TopoBatch, class_role

logger = logging.getLogger(__name__)


def partition_by_class(labels) -> ClassPartition:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size == 0:
        raise EmptyDataset("cannot partition an empty dataset")
    classes = {int(c): np.flatnonzero(labels == c).tolist() for c in np.unique(labels)}
    return ClassPartition(classes=classes, size=int(labels.size))


def _sub_batch(role: str, indices: np.ndarray, inputs: np.ndarray, labels: np.ndarray) -> SubBatch:
    indices = np.asarray(indices, dtype=np.int64)
    return SubBatch(role=role, indices=indices, inputs=inputs[indices], labels=labels[indices])


def _check_dataset(partition: ClassPartition, inputs: np.ndarray, labels: np.ndarray) -> None:
    if inputs.shape[0] != partition.size or labels.shape[0] != partition.size:
        raise LengthMismatch(f"partition covers {partition.size} samples, dataset has {inputs.shape[0]} / {labels.shape[0]}")


def build_topo_batch(
        partition: ClassPartition,
        inputs: np.ndarray,
        labels: np.ndarray,
        n: int,
        rng: np.random.Generator,
        standard_indices: Optional[np.ndarray] = None
) -> TopoBatch:
    """
    One K+1 batch. Without explicit standard_indices the standard sub-batch
    is n distinct samples of the dataset (with replacement only when the
    dataset is smaller than n).
    """
    if n < 2:
        raise SubBatchTooSmall(f"sub-batch size must be at least 2, got {n}")
    _check_dataset(partition, inputs, labels)

    subs = []
    for label in partition.labels:
        pool = np.asarray(partition.classes[label])
        subs.append(_sub_batch(class_role(label), rng.choice(pool, size=n, replace=True), inputs, labels))
    if standard_indices is None:
        standard_indices = rng.choice(partition.size, size=n, replace=partition.size < n)
    subs.append(_sub_batch(STANDARD_ROLE, standard_indices, inputs, labels))
    return TopoBatch(sub_batches=subs, n=n)


class TopoBatchLoader:
    """
    Epochs of ceil(N / n) K+1 batches. The standard sub-batches walk one
    permutation of the dataset; the last one is topped up from the start of
    the same permutation.
    """

    def __init__(self, inputs: np.ndarray, labels: np.ndarray, n: int, seed: int):
        if n < 2:
            raise SubBatchTooSmall(f"sub-batch size must be at least 2, got {n}")
        self.inputs = np.asarray(inputs, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.partition = partition_by_class(self.labels)
        _check_dataset(self.partition, self.inputs, self.labels)
        self.n = n
        self.rng = np.random.default_rng(seed)
        self.standard_touches = np.zeros(self.partition.size, dtype=np.int64)
        self.class_touches = np.zeros(self.partition.size, dtype=np.int64)
        self.epochs_done = 0

    @property
    def batches_per_epoch(self) -> int:
        return math.ceil(self.partition.size / self.n)

    def _standard_slices(self) -> List[np.ndarray]:
        order = self.rng.permutation(self.partition.size)
        padded = np.resize(order, self.batches_per_epoch * self.n)
        return np.split(padded, self.batches_per_epoch)

    def epoch(self) -> Iterator[TopoBatch]:
        for standard in self._standard_slices():
            batch = build_topo_batch(self.partition, self.inputs, self.labels, self.n, self.rng, standard)
            np.add.at(self.standard_touches, batch.standard.indices, 1)
            for sub in batch.class_batches:
                np.add.at(self.class_touches, sub.indices, 1)
            yield batch
        self.epochs_done += 1
        logger.debug(f"K+1 loader finished epoch {self.epochs_done}: {self.batches_per_epoch} batches")

    def __iter__(self) -> Iterator[TopoBatch]:
        return self.epoch()

    def __len__(self) -> int:
        return self.batches_per_epoch


def build_original_batch(
        partition: ClassPartition,
        inputs: np.ndarray,
        labels: np.ndarray,
        b: int,
        n: int,
        rng: np.random.Generator,
        seeds: Optional[np.ndarray] = None
) -> List[SubBatch]:
    """b seed samples, each followed by n - 1 same-class samples drawn with replacement."""
    if n < 2:
        raise SubBatchTooSmall(f"sub-batch size must be at least 2, got {n}")
    if b < 1:
        raise SubBatchTooSmall(f"need at least one sub-batch, got b={b}")
    _check_dataset(partition, inputs, labels)
    if seeds is None:
        seeds = rng.choice(partition.size, size=b, replace=partition.size < b)

    subs = []
    for seed_index in np.asarray(seeds, dtype=np.int64):
        label = int(labels[seed_index])
        rest = rng.choice(np.asarray(partition.classes[label]), size=n - 1, replace=True)
        subs.append(_sub_batch(class_role(label), np.concatenate([[seed_index], rest]), inputs, labels))
    return subs


class OriginalBatchLoader:
    """Every sample seeds one group of n per epoch, b groups per batch."""

    def __init__(self, inputs: np.ndarray, labels: np.ndarray, b: int, n: int, seed: int):
        self.inputs = np.asarray(inputs, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.partition = partition_by_class(self.labels)
        self.b = b
        self.n = n
        self.rng = np.random.default_rng(seed)
        self.touches = np.zeros(self.partition.size, dtype=np.int64)

    @property
    def batches_per_epoch(self) -> int:
        return math.ceil(self.partition.size / self.b)

    def epoch(self) -> Iterator[List[SubBatch]]:
        order = self.rng.permutation(self.partition.size)
        for start in range(0, order.shape[0], self.b):
            seeds = order[start:start + self.b]
            batch = build_original_batch(self.partition, self.inputs, self.labels, seeds.shape[0], self.n, self.rng, seeds)
            for sub in batch:
                np.add.at(self.touches, sub.indices, 1)
            yield batch

    def __iter__(self) -> Iterator[List[SubBatch]]:
        return self.epoch()
