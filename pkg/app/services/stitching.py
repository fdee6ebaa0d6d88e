"""
Paired synthetic domains, anchor correspondence, zero-shot stitching and
the experiment grid built from them.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from app.config import DataConfig, DomainKind, ExperimentConfig, Mode, settings
from app.exceptions import AnchorCountMismatch, BadConfig, LabelOutOfRange, LengthMismatch, ModeMismatch, NotEnoughSamples
from app.models.experiment import DomainGenerator, DomainModel, DomainPair, Metrics, StitchCell, StitchReport, TrainLogRow
from app.models.latent import AnchorSet, BatchStats
from app.models.network import IntertwinerElement
from app.services.geometry import apply_scaled_permutation, batch_stats, random_orthogonal, random_scaled_permutation
from app.services.model import encode, head
from app.services.symmetry import intertwiner_transform_weights, lambda_sigma, sample_element, transform_encoder_weights
from app.services.topology import death_times
from app.services.trainer import encode_anchors, trainer
from app.services.transforms import make_transform

logger = logging.getLogger(__name__)

DOMAINS = ("a", "b")


def simplex_means(n_classes: int, dim: int, separation: float) -> np.ndarray:
    """Vertices of a regular simplex with edge length `separation`, centered at the origin."""
    centered = np.eye(n_classes) - 1.0 / n_classes
    q, _ = linalg.qr(centered.T, mode="economic")
    coords = centered @ q[:, :n_classes - 1]
    if coords.shape[1] < dim:
        coords = np.pad(coords, ((0, 0), (0, dim - coords.shape[1])))
    else:
        coords = coords[:, :dim]
    return coords * (separation / np.sqrt(2.0))


def make_generator(kind: DomainKind, dim: int, rng: np.random.Generator, data: DataConfig) -> DomainGenerator:
    if kind is DomainKind.SCALED_PERMUTATION:
        transform = random_scaled_permutation(dim, rng, scale_range=(data.scale_min, data.scale_max))
        return DomainGenerator(kind=kind, transform=transform)
    if kind is DomainKind.ORTHOGONAL_MIX:
        return DomainGenerator(kind=kind, rotation=random_orthogonal(dim, rng), alpha=data.alpha)
    return DomainGenerator(kind=kind, noise_std=data.noise_std, noise_seed=int(rng.integers(2 ** 31)))


def replay_domain_b(inputs_a: np.ndarray, generator: DomainGenerator) -> np.ndarray:
    """Apply the hidden generator to domain A's inputs."""
    if generator.kind is DomainKind.SCALED_PERMUTATION:
        return apply_scaled_permutation(inputs_a, generator.transform)
    if generator.kind is DomainKind.ORTHOGONAL_MIX:
        return generator.alpha * inputs_a @ np.asarray(generator.rotation).T
    noise = np.random.default_rng(generator.noise_seed).standard_normal(inputs_a.shape)
    return inputs_a + generator.noise_std * noise


def generate_domain_pair(
        kind: DomainKind,
        n_samples: int,
        n_classes: int,
        input_dim: int,
        seed: int,
        data: Optional[DataConfig] = None,
        generator: Optional[DomainGenerator] = None
) -> DomainPair:
    """
    Domain A is a Gaussian mixture with unit covariance around simplex
    vertices; domain B is the generator applied to A. A supplied generator
    replaces the sampled one.
    """
    data = data or DataConfig()
    if n_classes < 2 or input_dim < 2:
        raise BadConfig(f"need at least 2 classes and 2 input dimensions, got {n_classes} / {input_dim}")
    if n_samples < n_classes:
        raise BadConfig(f"{n_samples} samples cannot cover {n_classes} classes")

    rng = np.random.default_rng(seed)
    means = simplex_means(n_classes, input_dim, data.separation)
    labels = rng.permutation(np.arange(n_samples) % n_classes)
    inputs_a = means[labels] + rng.standard_normal((n_samples, input_dim))
    if generator is None:
        generator = make_generator(kind, input_dim, rng, data)
    inputs_b = replay_domain_b(inputs_a, generator)
    logger.info(f"Generated {kind.value} domain pair: {n_samples} samples, {n_classes} classes, dim {input_dim}")
    return DomainPair(inputs_a=inputs_a, inputs_b=inputs_b, labels=labels, class_means=means, generator=generator)


def split_indices(n_samples: int, test_fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Aligned train/test index split shared by both domains."""
    order = np.random.default_rng(seed).permutation(n_samples)
    n_test = max(1, int(np.ceil(test_fraction * n_samples)))
    return np.sort(order[n_test:]), np.sort(order[:n_test])


def select_anchor_ids(n_samples: int, k: int, seed: int) -> List[int]:
    if k > n_samples:
        raise NotEnoughSamples(f"cannot draw {k} anchors from {n_samples} samples")
    return np.random.default_rng(seed).choice(n_samples, size=k, replace=False).tolist()


def select_anchors(
        model: DomainModel,
        inputs: np.ndarray,
        k: int,
        seed: int,
        paired: Optional[Tuple[DomainModel, np.ndarray]] = None
) -> Tuple[AnchorSet, Optional[AnchorSet]]:
    """k uniformly drawn samples encoded by the model; the paired domain uses the same indices."""
    ids = select_anchor_ids(inputs.shape[0], k, seed)
    anchors = encode_anchors(model.weights, inputs, ids)
    if paired is None:
        return anchors, None
    other_model, other_inputs = paired
    if other_inputs.shape[0] != inputs.shape[0]:
        raise LengthMismatch("paired domains must be index-aligned")
    return anchors, encode_anchors(other_model.weights, other_inputs, ids)


def refresh_anchors(model: DomainModel, inputs: np.ndarray, anchors: AnchorSet) -> AnchorSet:
    """Re-encode the same samples; ids and order never change."""
    return encode_anchors(model.weights, inputs, anchors.ids)


def metrics(preds: Sequence[int], truth: Sequence[int], n_classes: int, average: str = "macro") -> Metrics:
    """Accuracy, F1 and mean absolute error, all times 100. Undefined per-class F1 counts as 0."""
    preds = np.asarray(preds, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if preds.shape != truth.shape or preds.size == 0:
        raise LengthMismatch(f"{preds.size} predictions for {truth.size} labels")
    for name, values in (("prediction", preds), ("label", truth)):
        if np.any(values < 0) or np.any(values >= n_classes):
            raise LabelOutOfRange(f"{name} outside [0, {n_classes})")

    acc = float(np.mean(preds == truth))
    mae = float(np.mean(np.abs(preds - truth)))
    if average == "micro":
        f1 = acc
    else:
        scores = []
        for c in range(n_classes):
            tp = np.sum((preds == c) & (truth == c))
            denominator = np.sum(preds == c) + np.sum(truth == c)
            scores.append(2.0 * tp / denominator if denominator else 0.0)
        f1 = float(np.mean(scores))
    return Metrics(acc=100.0 * acc, f1=100.0 * f1, mae=100.0 * mae)


def _eval_stats(
        encoder: DomainModel,
        latent: np.ndarray,
        eval_stats: str,
        norm_epsilon: float = 1e-5
) -> Optional[BatchStats]:
    """Running statistics, or those of the evaluated batch with the training variance floor."""
    if encoder.mode is not Mode.RELATIVE_ROBUST:
        return None
    running = encoder.weights.running_stats()
    if eval_stats == "running" and running is not None:
        return running
    return batch_stats(latent, norm_epsilon)


def stitched_logits(
        encoder: DomainModel,
        head_model: DomainModel,
        anchors: Optional[AnchorSet],
        inputs: np.ndarray,
        eval_stats: str = "running",
        norm_epsilon: float = 1e-5
) -> np.ndarray:
    """head_Y(T(phi_X(x))) with T built from the encoder side's anchors and statistics."""
    if encoder.mode is not head_model.mode:
        raise ModeMismatch(f"encoder trained as {encoder.mode.value}, head as {head_model.mode.value}")
    if anchors is not None and anchors.k != head_model.weights.head_input_dim:
        raise AnchorCountMismatch(f"{anchors.k} anchors for a head reading {head_model.weights.head_input_dim} inputs")
    latent = encode(encoder.weights, inputs).data
    stats = _eval_stats(encoder, latent, eval_stats, norm_epsilon)
    transform = make_transform(encoder.mode, anchors, stats=stats, allow_zero=True)
    transformed, _ = transform.forward(latent)
    return head(head_model.weights, transformed)


def stitch_evaluate(
        encoder: DomainModel,
        head_model: DomainModel,
        anchors: Optional[AnchorSet],
        inputs: np.ndarray,
        labels: np.ndarray,
        n_classes: int,
        average: str = "macro",
        eval_stats: str = "running",
        norm_epsilon: float = 1e-5
) -> Metrics:
    logits = stitched_logits(encoder, head_model, anchors, inputs, eval_stats, norm_epsilon)
    return metrics(np.argmax(logits, axis=1), labels, n_classes, average)


def _map_stats(weights, matrix: np.ndarray) -> dict:
    if weights.running_mean is None:
        return {}
    return {"running_mean": matrix @ weights.running_mean, "running_std": np.abs(matrix) @ weights.running_std}


def build_intertwined_pair(
        model: DomainModel,
        rng: np.random.Generator,
        scale_range: Tuple[float, float] = (0.5, 2.0),
        elements: Optional[Sequence[IntertwinerElement]] = None
) -> Tuple[DomainModel, List[IntertwinerElement]]:
    """
    A second model computing the same function through transformed weights.

    Absolute models get the full-network transform. Relative models get an
    encoder-only transform; their anchors and running statistics are mapped
    by lambda_sigma(A_m), so the untouched head still reads the same
    coordinates under the robust transform. Explicit `elements` replace the
    sampled ones.
    """
    weights = model.weights
    count = weights.n_layers - 1 if model.mode is Mode.ABSOLUTE else weights.latent_layer
    if elements is None:
        elements = [
            sample_element(weights.activation, weights.weights[i].shape[0], rng, scale_range)
            for i in range(count)
        ]
    elements = list(elements)
    if model.mode is Mode.ABSOLUTE:
        return model.model_copy(update={"weights": intertwiner_transform_weights(weights, elements)}), elements

    lam = lambda_sigma(weights.activation, elements[-1].matrix())
    transformed = transform_encoder_weights(weights, elements).model_copy(update=_map_stats(weights, lam))
    anchors = AnchorSet(anchors=model.anchors.anchors @ lam.T, ids=model.anchors.ids)
    return model.model_copy(update={"weights": transformed, "anchors": anchors}), elements


def class_death_times(points: np.ndarray, labels: np.ndarray, limit: int) -> Dict[int, np.ndarray]:
    """Death times of the first `limit` points of every class."""
    out = {}
    for c in np.unique(labels):
        rows = np.flatnonzero(labels == c)[:limit]
        if rows.size >= 2:
            out[int(c)] = death_times(points[rows]).deaths
    return out


@dataclass
class RunOutcome:
    seed: int
    models: Dict[str, DomainModel]
    logs: Dict[str, List[TrainLogRow]]
    cells: Dict[Tuple[str, str], Metrics]
    deaths_pre: Dict[str, Dict[int, np.ndarray]] = field(default_factory=dict)
    deaths_post: Dict[str, Dict[int, np.ndarray]] = field(default_factory=dict)


class ExperimentRunner:
    """
    Trains both domain models per mode and seed, fills the stitching grid
    and hands every artifact to the experiment repository.
    """

    def _run(
            self,
            pair: DomainPair,
            train_idx: np.ndarray,
            test_idx: np.ndarray,
            mode: Mode,
            config: ExperimentConfig,
            seed: int
    ) -> RunOutcome:
        k = config.train.anchors or config.train.hidden_sizes[-1]
        anchor_ids = select_anchor_ids(train_idx.shape[0], k, seed) if mode is not Mode.ABSOLUTE else None
        labels_train, labels_test = pair.labels[train_idx], pair.labels[test_idx]

        models, logs = {}, {}
        for domain in DOMAINS:
            result = trainer.train_domain_model(
                pair.domain(domain)[train_idx], labels_train, config, mode,
                anchor_ids=anchor_ids, n_classes=pair.n_classes, seed=seed,
            )
            models[domain], logs[domain] = result.model, result.log

        cells = {}
        for gamma in DOMAINS:
            for phi in DOMAINS:
                cells[(gamma, phi)] = stitch_evaluate(
                    models[phi], models[gamma], models[phi].anchors, pair.domain(phi)[test_idx], labels_test,
                    pair.n_classes, config.stitch.f1, config.stitch.eval_stats, config.train.norm_epsilon,
                )

        outcome = RunOutcome(seed=seed, models=models, logs=logs, cells=cells)
        for domain in DOMAINS:
            model = models[domain]
            latent = encode(model.weights, pair.domain(domain)[test_idx]).data
            stats = _eval_stats(model, latent, config.stitch.eval_stats, config.train.norm_epsilon)
            transformed, _ = make_transform(mode, model.anchors, stats=stats, allow_zero=True).forward(latent)
            outcome.deaths_pre[domain] = class_death_times(latent, labels_test, config.stitch.analysis_points)
            outcome.deaths_post[domain] = class_death_times(transformed, labels_test, config.stitch.analysis_points)
        logger.info(
            f"{mode.value} seed {seed}: cross-domain acc "
            f"{cells[('a', 'b')].acc:.2f} / {cells[('b', 'a')].acc:.2f}"
        )
        return outcome

    def _cells(self, mode: Mode, outcomes: List[RunOutcome]) -> List[StitchCell]:
        cells = []
        for gamma in DOMAINS:
            for phi in DOMAINS:
                scores = [o.cells[(gamma, phi)] for o in outcomes]
                acc, f1, mae = (np.array([getattr(s, name) for s in scores]) for name in ("acc", "f1", "mae"))
                cells.append(StitchCell(
                    mode=mode, gamma_domain=gamma, phi_domain=phi,
                    acc_mean=float(acc.mean()), acc_std=float(acc.std()),
                    f1_mean=float(f1.mean()), f1_std=float(f1.std()),
                    mae_mean=float(mae.mean()), mae_std=float(mae.std()),
                ))
        return cells

    def run_experiment(self, config: ExperimentConfig, out_dir: Optional[Path] = None) -> StitchReport:
        from app.repositories.experiment_repository import experiment_repository

        data, seed = config.data, config.train.seed
        pair = generate_domain_pair(data.kind, data.samples, data.classes, data.dim, seed, data)
        train_idx, test_idx = split_indices(data.samples, data.test_fraction, seed)
        seeds = [seed + r for r in range(config.stitch.runs)]

        report = StitchReport()
        outcomes_by_mode: Dict[Mode, List[RunOutcome]] = {}
        for mode in config.stitch.modes:
            logger.info(f"Running {mode.value}: {len(seeds)} seeded runs on {settings.WORKERS} worker(s)")
            try:
                with ThreadPoolExecutor(max_workers=max(1, settings.WORKERS)) as pool:
                    outcomes = list(pool.map(lambda s: self._run(pair, train_idx, test_idx, mode, config, s), seeds))
            except Exception as e:
                logger.error(f"Mode {mode.value} failed, no grid emitted for it: {e}", exc_info=True)
                raise
            outcomes_by_mode[mode] = outcomes
            report.cells.extend(self._cells(mode, outcomes))

        if out_dir is not None:
            experiment_repository.save_experiment(Path(out_dir), config, report, outcomes_by_mode)
        return report


experiment_runner = ExperimentRunner()
