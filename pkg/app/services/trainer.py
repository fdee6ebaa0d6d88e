"""
Training of a domain model on the composite objective

    CE(head(T(phi(x))), y) + w(t) * (lambda_pre * R_pre + lambda_post * R_post)

with plain SGD, layer-wise learning-rate decay, periodically re-encoded
anchors and running normalization statistics for inference.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from app.config import ExperimentConfig, Mode, TopoConfig, TrainConfig
from app.exceptions import BadPeriod, DegenerateBatch, DegenerateEdge, ModeMismatch, NotEnoughSamples, ZeroVector
from app.models.batching import TopoBatch
from app.models.experiment import DomainModel, TrainLogRow
from app.models.latent import AnchorSet
from app.models.network import Activation, MLPWeights
from app.models.topology import LifespanWeight
from app.services.batching import TopoBatchLoader
from app.services.geometry import batch_stats
from app.services.model import ForwardCache, Gradients, backward, encode, forward, init_mlp, softmax_cross_entropy
from app.services.topology import generalized_loss, generalized_loss_gradient
from app.services.transforms import make_transform

logger = logging.getLogger(__name__)

# Errors that abort a single step; the step is logged as skipped.
STEP_ERRORS = (DegenerateEdge, DegenerateBatch, ZeroVector)
INIT_ATTEMPTS = 10


def cyclic_weight(step: int, period: int) -> float:
    """Triangle wave: 0 -> 1 over the first half period, 1 -> 0 over the second."""
    if period < 2:
        raise BadPeriod(f"scheduler period must be at least 2 steps, got {period}")
    phase = (step % period) / period
    return 2.0 * phase if phase <= 0.5 else 2.0 * (1.0 - phase)


@dataclass
class LossTerms:
    task: float
    r_pre: float
    r_post: float
    sched_weight: float
    total: float


@dataclass
class TrainState:
    weights: MLPWeights
    mode: Mode
    anchor_ids: List[int] = field(default_factory=list)
    anchors: Optional[AnchorSet] = None
    step: int = 0


@dataclass
class TrainingResult:
    model: DomainModel
    log: List[TrainLogRow]


def lifespan_weight(topo: TopoConfig) -> LifespanWeight:
    return LifespanWeight.from_flat(topo.lifespan, [float(v) for v in topo.lifespan_table])


def encode_anchors(weights: MLPWeights, inputs: np.ndarray, ids: Sequence[int]) -> AnchorSet:
    ids = [int(i) for i in ids]
    try:
        return AnchorSet(anchors=encode(weights, inputs[ids]).data, ids=ids)
    except ValidationError as e:
        raise ZeroVector(f"anchor encodings are not usable: {e.errors()[0]['msg']}") from e


def _topology_term(
        latent: np.ndarray,
        class_slices: Sequence[slice],
        coefficient: float,
        topo: TopoConfig,
        weight: LifespanWeight
) -> Tuple[float, Optional[np.ndarray]]:
    groups = [latent[s] for s in class_slices]
    value = generalized_loss(groups, topo.beta, weight)
    if coefficient == 0:
        return value, None
    grad = np.zeros_like(latent)
    for s, g in zip(class_slices, generalized_loss_gradient(groups, topo.beta, weight)):
        grad[s] += coefficient * g
    return value, grad


def composite_objective(
        weights: MLPWeights,
        inputs: np.ndarray,
        labels: np.ndarray,
        class_slices: Sequence[slice],
        reference: Optional[slice],
        mode: Mode,
        anchors: Optional[AnchorSet],
        topo: TopoConfig,
        sched_weight: float,
        norm_epsilon: float = 0.0,
        allow_zero: bool = False
) -> Tuple[LossTerms, Gradients, ForwardCache]:
    """
    Value and parameter gradients of the composite loss on one batch. The
    robust transform takes its statistics from the `reference` rows; the
    topology terms are evaluated on the `class_slices` rows only and are
    skipped entirely when their weight in the configuration is zero.
    """
    transform = make_transform(mode, anchors, reference=reference, epsilon=norm_epsilon, allow_zero=allow_zero)
    logits, cache = forward(weights, inputs, transform)
    task, dlogits = softmax_cross_entropy(logits, labels)

    weight = lifespan_weight(topo)
    r_pre = r_post = 0.0
    extra_latent = extra_transformed = None
    if topo.pre_weight > 0:
        r_pre, extra_latent = _topology_term(cache.latent, class_slices, sched_weight * topo.pre_weight, topo, weight)
    if topo.post_weight > 0:
        r_post, extra_transformed = _topology_term(cache.transformed, class_slices, sched_weight * topo.post_weight, topo, weight)

    total = task + sched_weight * (topo.pre_weight * r_pre + topo.post_weight * r_post)
    grads = backward(weights, cache, dlogits, extra_latent_grad=extra_latent, extra_transformed_grad=extra_transformed)
    return LossTerms(task=task, r_pre=r_pre, r_post=r_post, sched_weight=sched_weight, total=total), grads, cache


def layer_rates(weights: MLPWeights, config: TrainConfig) -> List[float]:
    """Encoder layers get lr_enc * decay^(distance below the latent layer); head layers lr_head."""
    m = weights.latent_layer
    return [
        config.learning_rate_encoder * config.layerwise_decay ** (m - 1 - i) if i < m else config.learning_rate_head
        for i in range(weights.n_layers)
    ]


def sgd_update(weights: MLPWeights, grads: Gradients, config: TrainConfig) -> MLPWeights:
    rates = layer_rates(weights, config)
    return weights.model_copy(update={
        "weights": [w - r * g for w, g, r in zip(weights.weights, grads.weights, rates)],
        "biases": [b - r * g for b, g, r in zip(weights.biases, grads.biases, rates)],
    })


def update_running_stats(weights: MLPWeights, latent: np.ndarray, momentum: float, epsilon: float) -> MLPWeights:
    """Exponential moving average of the reference-batch mean and variance."""
    try:
        stats = batch_stats(latent, epsilon)
    except DegenerateBatch:
        return weights
    if weights.running_mean is None:
        mean, var = stats.mean, stats.std ** 2
    else:
        mean = momentum * weights.running_mean + (1.0 - momentum) * stats.mean
        var = momentum * weights.running_std ** 2 + (1.0 - momentum) * stats.std ** 2
    return weights.model_copy(update={"running_mean": mean, "running_std": np.sqrt(var)})


def jitter_duplicates(batch: TopoBatch, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Batch inputs with repeated samples inside a class sub-batch nudged by `scale` noise."""
    inputs = batch.inputs.copy()
    for s, sub in zip(batch.slices(), batch.class_batches):
        _, first = np.unique(sub.indices, return_index=True)
        repeated = np.setdiff1d(np.arange(sub.size), first)
        if repeated.size:
            rows = s.start + repeated
            inputs[rows] += scale * rng.standard_normal((repeated.size, inputs.shape[1]))
    return inputs


def train_step(
        state: TrainState,
        batch: TopoBatch,
        topo: TopoConfig,
        sched_weight: float,
        config: TrainConfig,
        rng: np.random.Generator,
        anchors_refreshed: bool = False
) -> Tuple[TrainState, TrainLogRow]:
    slices = batch.slices()
    topology_on = topo.pre_weight > 0 or topo.post_weight > 0
    inputs = jitter_duplicates(batch, config.jitter, rng) if topology_on and config.jitter > 0 else batch.inputs
    robust = state.mode is Mode.RELATIVE_ROBUST

    try:
        terms, grads, cache = composite_objective(
            state.weights, inputs, batch.labels, slices[:-1], slices[-1], state.mode, state.anchors, topo,
            sched_weight, norm_epsilon=config.norm_epsilon, allow_zero=True,
        )
    except STEP_ERRORS as e:
        logger.warning(f"Step {state.step} skipped: {type(e).__name__}: {e}")
        row = TrainLogRow(
            step=state.step, task_loss=float("nan"), r_pre=float("nan"), r_post=float("nan"),
            sched_weight=sched_weight, total=float("nan"), anchors_refreshed=anchors_refreshed,
            skipped=True, reason=type(e).__name__,
        )
        state.step += 1
        return state, row

    weights = sgd_update(state.weights, grads, config)
    if robust:
        weights = update_running_stats(weights, cache.latent[slices[-1]], config.momentum, config.norm_epsilon)
    state.weights = weights
    row = TrainLogRow(
        step=state.step, task_loss=terms.task, r_pre=terms.r_pre, r_post=terms.r_post,
        sched_weight=sched_weight, total=terms.total, anchors_refreshed=anchors_refreshed,
    )
    logger.debug(f"Step {state.step}: task={terms.task:.6f} r_pre={terms.r_pre:.6f} r_post={terms.r_post:.6f} w={sched_weight:.3f}")
    state.step += 1
    return state, row


class Trainer:
    """Trains one domain model end to end from a dataset and an experiment configuration."""

    def _refresh(self, state: TrainState, inputs: np.ndarray) -> bool:
        try:
            state.anchors = encode_anchors(state.weights, inputs, state.anchor_ids)
            return True
        except ZeroVector as e:
            logger.warning(f"Anchor refresh at step {state.step} kept the previous anchors: {e}")
            return False

    def _initial_state(
            self,
            inputs: np.ndarray,
            sizes: List[int],
            train: TrainConfig,
            mode: Mode,
            anchor_ids: Optional[Sequence[int]],
            init_seed: int
    ) -> TrainState:
        """
        Fresh weights and anchors. A relu initialization that maps an anchor
        to the zero vector is redrawn with the next seed.
        """
        relative = mode is not Mode.ABSOLUTE
        for attempt in range(INIT_ATTEMPTS):
            weights = init_mlp(
                sizes, Activation(train.activation), init_seed + attempt,
                latent_layer=len(train.hidden_sizes),
                head_input_dim=len(anchor_ids) if relative else None,
            )
            state = TrainState(weights=weights, mode=mode, anchor_ids=list(anchor_ids or []))
            if not relative:
                return state
            try:
                state.anchors = encode_anchors(weights, inputs, state.anchor_ids)
                return state
            except ZeroVector as e:
                logger.warning(f"Initialization {attempt + 1}/{INIT_ATTEMPTS} rejected: {e}")
        raise ZeroVector(f"no initialization in {INIT_ATTEMPTS} attempts encodes every anchor to a non-zero vector")

    def train_domain_model(
            self,
            inputs: np.ndarray,
            labels: np.ndarray,
            config: ExperimentConfig,
            mode: Mode,
            anchor_ids: Optional[Sequence[int]] = None,
            n_classes: Optional[int] = None,
            seed: Optional[int] = None
    ) -> TrainingResult:
        train, topo = config.train, config.topo
        seed = train.seed if seed is None else seed
        inputs = np.asarray(inputs, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        n_classes = int(labels.max()) + 1 if n_classes is None else n_classes

        relative = mode is not Mode.ABSOLUTE
        if relative != (anchor_ids is not None and len(anchor_ids) > 0):
            raise ModeMismatch(f"mode {mode.value} {'needs' if relative else 'takes no'} anchors")
        if relative and max(anchor_ids) >= inputs.shape[0]:
            raise NotEnoughSamples(f"anchor index {max(anchor_ids)} outside a dataset of {inputs.shape[0]}")

        init_seed, loader_seed, jitter_seed = (int(s) for s in np.random.SeedSequence(seed).generate_state(3))
        sizes = [inputs.shape[1], *train.hidden_sizes, n_classes]
        state = self._initial_state(inputs, sizes, train, mode, anchor_ids, init_seed)

        loader = TopoBatchLoader(inputs, labels, train.batch_size, loader_seed)
        period = topo.scheduler_period_steps or max(2, len(loader))
        rng = np.random.default_rng(jitter_seed)
        logger.info(
            f"Training {mode.value} model: sizes={sizes} activation={train.activation} "
            f"epochs={train.epochs} batches/epoch={len(loader)} placement={topo.placement.value}"
        )

        log: List[TrainLogRow] = []
        for epoch in range(train.epochs):
            for batch in loader.epoch():
                refreshed = False
                if relative and state.step > 0 and state.step % train.anchor_refresh_steps == 0:
                    refreshed = self._refresh(state, inputs)
                state, row = train_step(state, batch, topo, cyclic_weight(state.step, period), train, rng, refreshed)
                log.append(row)
            logger.debug(f"Epoch {epoch + 1}/{train.epochs} done at step {state.step}")

        if relative:
            self._refresh(state, inputs)
        skipped = sum(row.skipped for row in log)
        logger.info(f"Training finished after {state.step} steps ({skipped} skipped)")
        model = DomainModel(weights=state.weights, mode=mode, anchor_ids=state.anchor_ids, anchors=state.anchors)
        return TrainingResult(model=model, log=log)


trainer = Trainer()
