"""
0-dimensional persistent homology of point clouds and the densification
loss built on it.

Death times of the Vietoris-Rips filtration are the edge lengths of a
minimum spanning tree, found with Kruskal's algorithm over a union-find.
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import pdist, squareform

from app.exceptions import ClassTooSmall, DegenerateEdge, NonPositiveEpsilon, TooFewPoints
from app.models.topology import LifespanWeight, MSTEdge, PersistenceDiagram0
from app.services.geometry import ArrayLike, as_array

logger = logging.getLogger(__name__)

DEGENERATE_EDGE = 1e-12


class UnionFind:
    """Disjoint sets with path compression and union by rank."""

    def __init__(self, n: int):
        self.parents = np.arange(n)
        self.ranks = np.zeros(n, dtype=np.int64)
        self.components = n

    def find(self, index: int) -> int:
        root = index
        while self.parents[root] != root:
            root = self.parents[root]
        while self.parents[index] != root:
            self.parents[index], index = root, self.parents[index]
        return int(root)

    def union(self, a: int, b: int) -> bool:
        """Merge the sets of a and b; False when they were already joined."""
        a, b = self.find(a), self.find(b)
        if a == b:
            return False
        if self.ranks[a] < self.ranks[b]:
            a, b = b, a
        self.parents[b] = a
        if self.ranks[a] == self.ranks[b]:
            self.ranks[a] += 1
        self.components -= 1
        return True

    def groups(self) -> List[List[int]]:
        """Members of every set, each ascending, ordered by smallest member."""
        by_root: Dict[int, List[int]] = {}
        for i in range(self.parents.shape[0]):
            by_root.setdefault(self.find(i), []).append(i)
        return sorted(by_root.values(), key=lambda members: members[0])


def _points(points: ArrayLike) -> np.ndarray:
    data = as_array(points)
    return data[:, None] if data.ndim == 1 else data


def pairwise_distances(points: ArrayLike) -> np.ndarray:
    """Euclidean distance matrix, computed once per unordered pair."""
    data = _points(points)
    if data.shape[0] < 2:
        return np.zeros((data.shape[0], data.shape[0]))
    return squareform(pdist(data, metric="euclidean"))


def truncation_graph(points: ArrayLike, epsilon: float) -> Dict[int, List[int]]:
    """Adjacency lists of the graph joining points strictly closer than epsilon."""
    if epsilon <= 0:
        raise NonPositiveEpsilon(f"epsilon must be positive, got {epsilon}")
    distances = pairwise_distances(points)
    n = distances.shape[0]
    close = distances < epsilon
    np.fill_diagonal(close, False)
    return {i: np.flatnonzero(close[i]).tolist() for i in range(n)}


def connected_components_at(points: ArrayLike, epsilon: float) -> List[List[int]]:
    graph = truncation_graph(points, epsilon)
    components = UnionFind(len(graph))
    for i, neighbours in graph.items():
        for j in neighbours:
            if i < j:
                components.union(i, j)
    return components.groups()


def minimum_spanning_tree(points: ArrayLike) -> List[MSTEdge]:
    """
    Kruskal over all pairs; equal lengths are taken in (i, j) order so the
    tree is deterministic.
    """
    data = _points(points)
    n = data.shape[0]
    if n < 2:
        raise TooFewPoints(f"a spanning tree needs at least 2 points, got {n}")
    distances = pairwise_distances(data)
    rows, cols = np.triu_indices(n, k=1)
    lengths = distances[rows, cols]
    order = np.lexsort((cols, rows, lengths))

    components = UnionFind(n)
    edges: List[MSTEdge] = []
    for e in order:
        i, j = int(rows[e]), int(cols[e])
        if components.union(i, j):
            edges.append(MSTEdge(i=i, j=j, length=float(lengths[e])))
            if len(edges) == n - 1:
                break
    return edges


def death_times(points: ArrayLike) -> PersistenceDiagram0:
    return PersistenceDiagram0(deaths=[edge.length for edge in minimum_spanning_tree(points)])


def _class_points(points_by_class: Sequence[ArrayLike]) -> List[np.ndarray]:
    classes = [_points(p) for p in points_by_class]
    for c, data in enumerate(classes):
        if data.shape[0] < 2:
            raise ClassTooSmall(f"class {c} has {data.shape[0]} point(s), persistence needs at least 2")
    return classes


def generalized_loss(points_by_class: Sequence[ArrayLike], beta: float, weight: LifespanWeight) -> float:
    """Sum over classes and death times of |l(0, death) - beta|, accumulated in class order."""
    total = 0.0
    for data in _class_points(points_by_class):
        total += float(np.sum(np.abs(weight.lifespan(death_times(data).deaths) - beta)))
    return total


def densification_loss(points_by_class: Sequence[ArrayLike], beta: float) -> float:
    return generalized_loss(points_by_class, beta, LifespanWeight.length())


def generalized_loss_gradient(
        points_by_class: Sequence[ArrayLike],
        beta: float,
        weight: LifespanWeight
) -> List[np.ndarray]:
    """
    Per-point gradient of generalized_loss. An MST edge (a, b) of length w
    contributes sign(l(w) - beta) * F'(w) * (p_a - p_b) / w to p_a and the
    negation to p_b, with sign(0) = 0.
    """
    grads = []
    for c, data in enumerate(_class_points(points_by_class)):
        grad = np.zeros_like(data)
        for edge in minimum_spanning_tree(data):
            w = edge.length
            if w < DEGENERATE_EDGE:
                raise DegenerateEdge(f"class {c}: edge ({edge.i}, {edge.j}) has length {w:.3e}")
            coefficient = np.sign(weight.lifespan(np.array([w]))[0] - beta) * weight.slope(np.array([w]))[0] / w
            step = coefficient * (data[edge.i] - data[edge.j])
            grad[edge.i] += step
            grad[edge.j] -= step
        grads.append(grad)
    return grads


def densification_loss_gradient(points_by_class: Sequence[ArrayLike], beta: float) -> List[np.ndarray]:
    return generalized_loss_gradient(points_by_class, beta, LifespanWeight.length())


def class_losses(points_by_class: Sequence[ArrayLike], beta: float, weight: Optional[LifespanWeight] = None) -> List[float]:
    weight = weight or LifespanWeight.length()
    return [generalized_loss([data], beta, weight) for data in points_by_class]


def death_time_histogram(deaths: np.ndarray, bins: int, value_range: Optional[Tuple[float, float]] = None):
    """Counts and bin edges over a shared range so per-class histograms line up."""
    deaths = np.asarray(deaths, dtype=np.float64)
    if value_range is None:
        value_range = (0.0, float(deaths.max()) if deaths.size and deaths.max() > 0 else 1.0)
    counts, edges = np.histogram(deaths, bins=bins, range=value_range)
    return counts, edges


def death_time_summary(deaths: np.ndarray) -> Dict[str, float]:
    deaths = np.asarray(deaths, dtype=np.float64)
    return {
        "mean": float(deaths.mean()),
        "std": float(deaths.std()),
        "min": float(deaths.min()),
        "max": float(deaths.max()),
    }
