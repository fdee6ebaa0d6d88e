"""
Property suites behind `verify`, together with the independent oracles they
compare against: a sorted-distance sweep and Prim's algorithm for death
times, and central finite differences for gradients.
"""
import logging
import math
from typing import Callable, Dict, List, Sequence

import numpy as np
from pydantic import BaseModel

from app.config import Mode, Placement, TopoConfig
from app.models.latent import AnchorSet, ScaledPermutation
from app.models.network import Activation, MLPWeights
from app.models.experiment import DomainModel
from app.services.geometry import (
    apply_scaled_permutation, batch_stats, cluster_collapse_ratio, random_orthogonal, random_scaled_permutation,
    relative_transform, robust_relative_transform, rotation_deviation,
)
from app.services.model import encode, init_mlp
from app.services.symmetry import (
    check_membership, intertwiner_transform_weights, lambda_sigma, lambda_sigma_relu_fast, make_element,
    sample_element, verify_network_invariance,
)
from app.services.topology import connected_components_at, death_times, densification_loss, densification_loss_gradient
from app.services.trainer import composite_objective

logger = logging.getLogger(__name__)

SUITES = ("invariance", "gradients", "oracle", "intertwiner")
FD_STEP = 1e-6
# variance floor of the statistics given to relative models; relu units can be dead on the whole batch
STATS_EPSILON = 1e-5


class PropertyResult(BaseModel):
    name: str
    passed: bool
    worst: float
    tolerance: float
    cases: int


def sweep_death_times(points: np.ndarray) -> np.ndarray:
    """Merge heights found by sweeping every pair in distance order, with its own disjoint-set forest."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    pairs = sorted((math.dist(points[i], points[j]), i, j) for i in range(n) for j in range(i + 1, n))
    parent = list(range(n))

    def root(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    deaths = []
    for d, i, j in pairs:
        ri, rj = root(i), root(j)
        if ri != rj:
            parent[ri] = rj
            deaths.append(d)
    return np.array(sorted(deaths))


def prim_mst_lengths(points: np.ndarray) -> np.ndarray:
    """Edge lengths of a minimum spanning tree grown by Prim's algorithm on the dense distance matrix."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    distances = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=-1))
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best = distances[0].copy()
    lengths = []
    for _ in range(n - 1):
        candidates = np.where(in_tree, np.inf, best)
        nxt = int(np.argmin(candidates))
        lengths.append(candidates[nxt])
        in_tree[nxt] = True
        best = np.minimum(best, distances[nxt])
    return np.array(sorted(lengths))


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        original = x[idx]
        x[idx] = original + step
        up = f(x)
        x[idx] = original - step
        down = f(x)
        x[idx] = original
        grad[idx] = (up - down) / (2.0 * step)
    return grad


def relative_error(actual: np.ndarray, expected: np.ndarray, floor: float = 1e-6) -> float:
    return float(np.max(np.abs(actual - expected)) / max(float(np.max(np.abs(expected))), floor))


def _well_separated(points: np.ndarray, gap: float) -> bool:
    """True when all pairwise distances differ by more than `gap`, so a tiny nudge cannot reorder them."""
    n = points.shape[0]
    d = np.sort(np.array([math.dist(points[i], points[j]) for i in range(n) for j in range(i + 1, n)]))
    return bool(np.all(np.diff(d) > gap))


def densification_gradient_error(points: np.ndarray, beta: float) -> float:
    analytic = densification_loss_gradient([points], beta)[0]
    numeric = central_difference(lambda p: densification_loss([p], beta), points)
    return relative_error(analytic, numeric)


def _small_network(activation: Activation, rng: np.random.Generator, seed: int, head_input_dim=None) -> MLPWeights:
    weights = init_mlp((3, 6, 5, 3), activation, seed, latent_layer=2, head_input_dim=head_input_dim)
    return weights.model_copy(update={"biases": [rng.normal(scale=0.3, size=b.shape) for b in weights.biases]})


def composite_gradient_error(mode: Mode, placement: Placement, seed: int) -> float:
    """Analytic against finite-difference gradient of the full composite objective on a small gelu network."""
    rng = np.random.default_rng(seed)
    k = 4
    relative = mode is not Mode.ABSOLUTE
    weights = _small_network(Activation.GELU, rng, seed, head_input_dim=k if relative else None)
    n = 4
    inputs = rng.normal(scale=1.5, size=(3 * n, 3))
    labels = np.repeat([0, 1, 2], n)
    class_slices, reference = [slice(0, n), slice(n, 2 * n)], slice(2 * n, 3 * n)
    anchors = AnchorSet(anchors=encode(weights, rng.normal(scale=1.5, size=(k, 3))).data, ids=list(range(k))) if relative else None
    topo = TopoConfig(placement=placement, lambda_pre=0.3, lambda_post=0.5, beta=0.5)
    sched = 0.7

    terms, grads, _ = composite_objective(weights, inputs, labels, class_slices, reference, mode, anchors, topo, sched)
    worst = 0.0
    for layer in range(weights.n_layers):
        for kind in ("weights", "biases"):
            def objective(values: np.ndarray, layer=layer, kind=kind) -> float:
                arrays = [a.copy() for a in getattr(weights, kind)]
                arrays[layer] = values
                shifted = weights.model_copy(update={kind: arrays})
                return composite_objective(shifted, inputs, labels, class_slices, reference, mode, anchors, topo, sched)[0].total

            numeric = central_difference(objective, getattr(weights, kind)[layer])
            analytic = getattr(grads, kind)[layer]
            worst = max(worst, relative_error(analytic, numeric))
    return worst


def _control_elements(activation: Activation, widths: Sequence[int]) -> list:
    """Non-trivial elements: rolled permutations, plus a 0.5..2 scale spread for relu."""
    elements = []
    for n in widths:
        perm = np.roll(np.arange(n), 1)
        scale = np.geomspace(0.5, 2.0, n) if activation is Activation.RELU else None
        elements.append(make_element(activation, perm, scale))
    return elements


def stitch_pair_deviation(activation: Activation, mode: Mode, seed: int, control: bool = False) -> float:
    """
    Max logit deviation between a model and its intertwined copy's encoder
    stitched onto the original head.
    """
    from app.services.stitching import build_intertwined_pair, stitched_logits

    rng = np.random.default_rng(seed)
    relative = mode is not Mode.ABSOLUTE
    sizes = (6, 12, 8, 3)
    k = 8
    weights = init_mlp(sizes, activation, seed, latent_layer=2, head_input_dim=k if relative else None)
    weights = weights.model_copy(update={"biases": [rng.normal(scale=0.5, size=b.shape) for b in weights.biases]})
    anchors = None
    if relative:
        stats = batch_stats(encode(weights, rng.normal(scale=3.0, size=(64, 6))).data, STATS_EPSILON)
        weights = weights.model_copy(update={"running_mean": stats.mean, "running_std": stats.std})
        anchors = AnchorSet(anchors=encode(weights, rng.normal(scale=3.0, size=(k, 6))).data, ids=list(range(k)))
    model = DomainModel(weights=weights, mode=mode, anchor_ids=list(range(k)) if relative else [], anchors=anchors)

    widths = [w.shape[0] for w in weights.weights[:(2 if relative else weights.n_layers - 1)]]
    elements = _control_elements(activation, widths) if control else None
    twin, _ = build_intertwined_pair(model, rng, elements=elements)

    x = rng.normal(scale=3.0, size=(64, 6))
    if mode is Mode.ABSOLUTE:
        # phi of the transformed network read by the untouched head
        original = stitched_logits(model, model, None, x)
        stitched = stitched_logits(twin, model, None, x)
    else:
        original = stitched_logits(model, model, model.anchors, x)
        stitched = stitched_logits(twin, model, twin.anchors, x)
    return float(np.max(np.abs(stitched - original)))


class Verifier:
    """Runs the seeded property suites and reports worst observed deviations."""

    def _result(self, name: str, values: List[float], tolerance: float, above: bool = False) -> PropertyResult:
        worst = min(values) if above else max(values)
        passed = worst > tolerance if above else worst <= tolerance
        logger.info(f"{name}: worst={worst:.3e} tolerance={tolerance:.1e} {'pass' if passed else 'FAIL'}")
        return PropertyResult(name=name, passed=passed, worst=worst, tolerance=tolerance, cases=len(values))

    def invariance(self, cases: int = 100) -> List[PropertyResult]:
        rng = np.random.default_rng(0)
        robust, vanilla = [], []
        for case in range(cases):
            m = (4, 64, 512)[case % 3]
            k = m // 2
            z, anchors, batch = rng.normal(size=(8, m)), rng.normal(size=(k, m)), rng.normal(size=(64, m))
            g = random_scaled_permutation(m, rng, scale_range=(0.1, 10.0), signed=True)
            before = robust_relative_transform(z, anchors, batch_stats(batch))
            moved = [apply_scaled_permutation(a, g) for a in (z, anchors, batch)]
            after = robust_relative_transform(moved[0], moved[1], batch_stats(moved[2]))
            robust.append(float(np.max(np.abs(after - before))))

            u, alpha = random_orthogonal(m, rng), float(rng.uniform(0.1, 10.0))
            before = relative_transform(z, anchors)
            after = relative_transform(alpha * z @ u.T, alpha * anchors @ u.T)
            vanilla.append(float(np.max(np.abs(after - before))))

        results = [
            self._result("robust transform invariant under scaled permutations", robust, 1e-9),
            self._result("relative transform invariant under rotation and rescaling", vanilla, 1e-9),
        ]

        # diag(1, 10) on m = 2: the relative transform moves, the robust one does not
        g = ScaledPermutation(perm=[0, 1], scale=[1.0, 10.0], shift=[0.0, 0.0])
        z, anchors, batch = np.array([[1.0, 1.0]]), np.array([[1.0, 0.2], [0.3, 1.0]]), rng.normal(size=(16, 2))
        moved = [apply_scaled_permutation(a, g) for a in (z, anchors, batch)]
        vanilla_shift = float(np.max(np.abs(relative_transform(moved[0], moved[1]) - relative_transform(z, anchors))))
        robust_shift = float(np.max(np.abs(
            robust_relative_transform(moved[0], moved[1], batch_stats(moved[2]))
            - robust_relative_transform(z, anchors, batch_stats(batch))
        )))
        results.append(self._result("relative transform broken by diag(1, 10)", [vanilla_shift], 1e-3, above=True))
        results.append(self._result("robust transform unaffected by diag(1, 10)", [robust_shift], 1e-9))

        deviations = [np.mean([rotation_deviation(m, rng) for _ in range(5)]) for m in (8, 64, 512)]
        logger.info(f"Robust transform deviation under rotations for m=8/64/512: {deviations}")
        trend = [float(deviations[i + 1] - deviations[i]) for i in range(len(deviations) - 1)]
        results.append(self._result("rotation deviation shrinks with dimension", trend, 0.0))

        direction = rng.normal(size=8)
        direction /= np.linalg.norm(direction)
        clusters = [c * direction + 0.3 * rng.normal(size=(50, 8)) for c in (5.0, 10.0)]
        random_anchors = rng.normal(size=(8, 8))
        before = cluster_collapse_ratio(clusters)
        after = cluster_collapse_ratio([relative_transform(c, random_anchors) for c in clusters])
        results.append(self._result("collinear clusters collapse under the relative transform", [before / after], 10.0, above=True))
        return results

    def gradients(self, cases: int = 50) -> List[PropertyResult]:
        rng = np.random.default_rng(1)
        errors = []
        while len(errors) < cases:
            points = rng.uniform(0.0, 4.0, size=(int(rng.integers(3, 9)), int(rng.integers(1, 4))))
            beta = float(rng.uniform(0.5, 2.0))
            deaths = death_times(points).deaths
            if not _well_separated(points, 1e-4) or np.any(np.abs(deaths - beta) < 1e-3) or np.min(deaths) < 1e-3:
                continue
            errors.append(densification_gradient_error(points, beta))
        results = [self._result("densification gradient matches finite differences", errors, 1e-5)]

        composite = []
        for mode in Mode:
            for placement in Placement:
                composite.append(composite_gradient_error(mode, placement, seed=7))
        results.append(self._result("composite objective gradient matches finite differences", composite, 1e-5))
        return results

    def oracle(self, cases: int = 100) -> List[PropertyResult]:
        rng = np.random.default_rng(2)
        sweep, prim = [], []
        for _ in range(cases):
            points = rng.normal(size=(int(rng.integers(2, 31)), int(rng.integers(1, 9))))
            deaths = death_times(points).deaths
            sweep.append(float(np.max(np.abs(deaths - sweep_death_times(points)))))
            prim.append(float(np.max(np.abs(deaths - prim_mst_lengths(points)))))

        nested = []
        for _ in range(50):
            points = rng.normal(size=(int(rng.integers(2, 20)), 2))
            small, large = sorted(rng.uniform(0.05, 2.0, size=2))
            coarse = {i: c for c, members in enumerate(connected_components_at(points, large)) for i in members}
            fine = connected_components_at(points, small)
            nested.append(float(sum(len({coarse[i] for i in members}) - 1 for members in fine)))
        return [
            self._result("death times equal the sorted-distance sweep", sweep, 1e-12),
            self._result("death times equal Prim's tree lengths", prim, 1e-12),
            self._result("components refine as epsilon shrinks", nested, 0.0),
        ]

    def intertwiner(self, cases: int = 20) -> List[PropertyResult]:
        rng = np.random.default_rng(3)
        results = []
        for activation in (Activation.RELU, Activation.GELU, Activation.SIGMOID):
            invariance, homomorphism, membership = [], [], []
            for case in range(cases):
                sizes = [int(v) for v in rng.integers(8, 33, size=3)] + [int(rng.integers(2, 6))]
                weights = init_mlp(sizes, activation, seed=100 + case)
                weights = weights.model_copy(update={"biases": [rng.normal(scale=0.5, size=b.shape) for b in weights.biases]})
                elements = [sample_element(activation, w.shape[0], rng) for w in weights.weights[:-1]]
                transformed = intertwiner_transform_weights(weights, elements)
                invariance.append(verify_network_invariance(weights, transformed, rng.normal(size=(64, sizes[0]))))

                a1, a2 = (sample_element(activation, 8, rng).matrix() for _ in range(2))
                product = lambda_sigma(activation, a1 @ a2)
                homomorphism.append(float(np.max(np.abs(product - lambda_sigma(activation, a1) @ lambda_sigma(activation, a2)))))
                membership.append(check_membership(activation, a1, seed=case))

            name = activation.value
            results.append(self._result(f"{name}: transformed network computes the same function", invariance, 1e-8))
            results.append(self._result(f"{name}: lambda_sigma is a homomorphism", homomorphism, 1e-8))
            results.append(self._result(f"{name}: sampled elements intertwine", membership, 1e-8))

            robust = [stitch_pair_deviation(activation, Mode.RELATIVE_ROBUST, seed) for seed in range(5)]
            absolute = [stitch_pair_deviation(activation, Mode.ABSOLUTE, seed, control=True) for seed in range(5)]
            results.append(self._result(f"{name}: intertwined pair stitches exactly under robust mode", robust, 1e-6))
            results.append(self._result(f"{name}: intertwined pair breaks absolute stitching", absolute, 1e-2, above=True))

        fast = []
        for _ in range(cases):
            a = sample_element(Activation.RELU, 8, rng).matrix()
            fast.append(float(np.max(np.abs(lambda_sigma_relu_fast(a) - lambda_sigma(Activation.RELU, a)))))
        results.append(self._result("relu closed-form lambda agrees with the dense solve", fast, 1e-12))
        return results

    def run(self, suite: str) -> Dict[str, List[PropertyResult]]:
        names = SUITES if suite == "all" else (suite,)
        return {name: getattr(self, name)() for name in names}


verifier = Verifier()
