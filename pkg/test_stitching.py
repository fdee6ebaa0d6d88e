"""
Paired domains, anchor correspondence, zero-shot stitching and the
experiment grid.
"""
import numpy as np
import pytest

from app.config import DomainKind, Mode, load_config
from app.exceptions import (
    AnchorCountMismatch, DegenerateBatch, LabelOutOfRange, LengthMismatch, ModeMismatch, NotEnoughSamples,
)
from app.models.experiment import DomainGenerator, DomainModel
from app.models.latent import ScaledPermutation
from app.models.network import Activation, MLPWeights
from app.services.model import init_mlp, predict
from app.services.stitching import (
    experiment_runner, generate_domain_pair, metrics, refresh_anchors, replay_domain_b, select_anchor_ids,
    select_anchors, split_indices, stitch_evaluate, stitched_logits,
)
from app.services.trainer import encode_anchors
from app.services.transforms import make_transform
from app.services.verification import stitch_pair_deviation

SMOKE = [
    "data.samples=200", "data.dim=4", "train.hidden_sizes=8,6", "train.epochs=2",
    "train.batch_size=8", "stitch.runs=1", "stitch.analysis_points=16",
]


def relative_model(mode=Mode.RELATIVE_ROBUST, seed=0, k=4):
    inputs = np.random.default_rng(seed).normal(size=(40, 3))
    weights = init_mlp((3, 8, 6, 2), Activation.GELU, seed, latent_layer=2, head_input_dim=k)
    anchors = encode_anchors(weights, inputs, select_anchor_ids(40, k, seed))
    return DomainModel(weights=weights, mode=mode, anchor_ids=anchors.ids, anchors=anchors), inputs


def dead_unit_model(seed=0, k=4):
    inputs = np.random.default_rng(seed).normal(size=(40, 3))
    base = init_mlp((3, 8, 6, 2), Activation.RELU, seed, latent_layer=2, head_input_dim=k)
    weights, biases = [w.copy() for w in base.weights], [b.copy() for b in base.biases]
    weights[1][0] = 0.0
    biases[1] = np.ones(6)
    biases[1][0] = -1.0
    weights = MLPWeights(weights=weights, biases=biases, activation=Activation.RELU, latent_layer=2)
    anchors = encode_anchors(weights, inputs, select_anchor_ids(40, k, seed))
    return DomainModel(weights=weights, mode=Mode.RELATIVE_ROBUST, anchor_ids=anchors.ids, anchors=anchors), inputs


# 1. Domain pairs

def test_identity_generators_copy_domain_a():
    identity = DomainGenerator(kind=DomainKind.SCALED_PERMUTATION, transform=ScaledPermutation.identity(3))
    pair = generate_domain_pair(DomainKind.SCALED_PERMUTATION, 60, 3, 3, 0, generator=identity)
    np.testing.assert_array_equal(pair.inputs_b, pair.inputs_a)

    rotation = DomainGenerator(kind=DomainKind.ORTHOGONAL_MIX, rotation=np.eye(3), alpha=1.0)
    pair = generate_domain_pair(DomainKind.ORTHOGONAL_MIX, 60, 3, 3, 0, generator=rotation)
    np.testing.assert_array_equal(pair.inputs_b, pair.inputs_a)


@pytest.mark.parametrize("kind", list(DomainKind))
def test_generator_replays_domain_b(kind):
    pair = generate_domain_pair(kind, 100, 2, 5, 1)
    np.testing.assert_allclose(replay_domain_b(pair.inputs_a, pair.generator), pair.inputs_b, atol=1e-12)
    assert pair.inputs_a.shape == pair.inputs_b.shape == (100, 5)
    assert set(np.unique(pair.labels)) == {0, 1}


def test_class_means_of_domain_b_follow_the_generator():
    pair = generate_domain_pair(DomainKind.SCALED_PERMUTATION, 2000, 2, 4, 2)
    g = pair.generator.transform
    for c in range(2):
        rows = pair.labels == c
        expected = pair.class_means[c][g.perm] * g.scale + g.shift
        # per-coordinate standard error of the mean is scale / sqrt(n_c)
        bound = 4.0 * np.abs(g.scale) / np.sqrt(rows.sum())
        assert np.all(np.abs(pair.inputs_b[rows].mean(axis=0) - expected) < bound)


def test_generation_is_seeded():
    first = generate_domain_pair(DomainKind.ORTHOGONAL_MIX, 50, 2, 3, 9)
    second = generate_domain_pair(DomainKind.ORTHOGONAL_MIX, 50, 2, 3, 9)
    np.testing.assert_array_equal(first.inputs_b, second.inputs_b)


def test_split_is_disjoint_and_complete():
    train, test = split_indices(100, 0.25, 0)
    assert test.size == 25
    assert sorted(np.concatenate([train, test]).tolist()) == list(range(100))


# 2. Anchors

def test_anchor_selection_is_deterministic_and_paired():
    assert select_anchor_ids(50, 5, 3) == select_anchor_ids(50, 5, 3)
    with pytest.raises(NotEnoughSamples):
        select_anchor_ids(3, 5, 0)
    model, inputs = relative_model()
    other, other_inputs = relative_model(seed=1)
    anchors, paired = select_anchors(model, inputs, 4, 7, paired=(other, other_inputs))
    assert anchors.ids == paired.ids
    with pytest.raises(LengthMismatch):
        select_anchors(model, inputs, 4, 7, paired=(other, other_inputs[:10]))


def test_anchor_refresh_keeps_ids():
    model, inputs = relative_model()
    changed = [w * 1.5 for w in model.weights.weights]
    moved = model.model_copy(update={"weights": model.weights.model_copy(update={"weights": changed})})
    refreshed = refresh_anchors(moved, inputs, model.anchors)
    assert refreshed.ids == model.anchors.ids
    assert not np.allclose(refreshed.anchors, model.anchors.anchors)


# 3. Metrics

def test_metrics_examples():
    perfect = metrics([0, 1, 2], [0, 1, 2], 3)
    assert (perfect.acc, perfect.f1, perfect.mae) == (100.0, 100.0, 0.0)
    scores = metrics([0, 1, 2], [0, 1, 4], 5)
    assert scores.acc == pytest.approx(66.6666667)
    assert scores.mae == pytest.approx(66.6666667)
    assert scores.f1 == pytest.approx(40.0)
    assert metrics([0, 1, 2], [0, 1, 4], 5, average="micro").f1 == pytest.approx(scores.acc)


def test_metrics_errors():
    with pytest.raises(LengthMismatch):
        metrics([0, 1], [0], 2)
    with pytest.raises(LabelOutOfRange):
        metrics([0, 2], [0, 1], 2)


# 4. Stitching

def test_self_stitch_equals_in_domain_evaluation():
    model, inputs = relative_model(mode=Mode.RELATIVE_VANILLA)
    labels = np.arange(40) % 2
    stitched = stitch_evaluate(model, model, model.anchors, inputs, labels, 2)
    direct = predict(model.weights, inputs, make_transform(Mode.RELATIVE_VANILLA, model.anchors))
    assert stitched == metrics(direct, labels, 2)


def test_stitching_contract_errors():
    robust, inputs = relative_model()
    vanilla, _ = relative_model(mode=Mode.RELATIVE_VANILLA)
    with pytest.raises(ModeMismatch):
        stitched_logits(robust, vanilla, robust.anchors, inputs)
    wide, _ = relative_model(k=5)
    with pytest.raises(AnchorCountMismatch):
        stitched_logits(wide, robust, wide.anchors, inputs)


def test_full_batch_statistics_tolerate_dead_units():
    model, inputs = dead_unit_model()
    labels = np.arange(40) % 2
    logits = stitched_logits(model, model, model.anchors, inputs, eval_stats="full")
    assert np.all(np.isfinite(logits))
    scores = stitch_evaluate(model, model, model.anchors, inputs, labels, 2, eval_stats="full")
    assert 0.0 <= scores.acc <= 100.0
    with pytest.raises(DegenerateBatch):
        stitched_logits(model, model, model.anchors, inputs, eval_stats="full", norm_epsilon=0.0)


@pytest.mark.parametrize("activation", [Activation.RELU, Activation.GELU, Activation.SIGMOID])
def test_intertwined_pair_stitches_exactly_under_robust_mode(activation):
    assert stitch_pair_deviation(activation, Mode.RELATIVE_ROBUST, seed=0) <= 1e-6


@pytest.mark.parametrize("activation", [Activation.RELU, Activation.GELU, Activation.SIGMOID])
def test_intertwined_pair_breaks_absolute_stitching(activation):
    assert stitch_pair_deviation(activation, Mode.ABSOLUTE, seed=0, control=True) > 1e-2


# 5. Experiment grid

def test_smoke_experiment(tmp_path):
    cfg = load_config(overrides=SMOKE)
    report = experiment_runner.run_experiment(cfg, tmp_path)
    assert len(report.cells) == 4 * len(cfg.stitch.modes)
    assert all(c.acc_std == 0.0 and c.f1_std == 0.0 for c in report.cells)
    for name in ("report.csv", "deaths_pre.csv", "deaths_post.csv", "resolved_config.txt"):
        assert (tmp_path / name).exists()
    assert (tmp_path / "relative_robust" / "model_a_0.mlpw").exists()
    assert (tmp_path / "absolute" / "train_log_b_0.csv").exists()


@pytest.mark.parametrize("seed", [0, 6, 7, 9])
def test_experiment_with_full_batch_statistics(seed):
    overrides = [*SMOKE, f"train.seed={seed}", "stitch.modes=relative_robust", "stitch.eval_stats=full"]
    cfg = load_config(overrides=overrides)
    report = experiment_runner.run_experiment(cfg)
    assert len(report.cells) == 4
    assert all(0.0 <= c.acc_mean <= 100.0 for c in report.cells)


def test_grid_diagonal_matches_in_domain_evaluation():
    cfg = load_config(overrides=[*SMOKE, "stitch.modes=relative_robust"])
    data = cfg.data
    pair = generate_domain_pair(data.kind, data.samples, data.classes, data.dim, cfg.train.seed, data)
    train_idx, test_idx = split_indices(data.samples, data.test_fraction, cfg.train.seed)
    outcome = experiment_runner._run(pair, train_idx, test_idx, Mode.RELATIVE_ROBUST, cfg, cfg.train.seed)
    for domain in ("a", "b"):
        model = outcome.models[domain]
        transform = make_transform(
            Mode.RELATIVE_ROBUST, model.anchors, stats=model.weights.running_stats(), allow_zero=True,
        )
        preds = predict(model.weights, pair.domain(domain)[test_idx], transform)
        assert outcome.cells[(domain, domain)] == metrics(preds, pair.labels[test_idx], pair.n_classes)


@pytest.mark.slow
def test_robust_stitching_is_not_worse_across_domains():
    cfg = load_config()
    report = experiment_runner.run_experiment(cfg)
    robust = report.cross_domain_accuracy(Mode.RELATIVE_ROBUST)
    assert robust + 1.0 >= report.cross_domain_accuracy(Mode.RELATIVE_VANILLA)
    assert robust + 1.0 >= report.cross_domain_accuracy(Mode.ABSOLUTE)


def pooled_death_times(placement):
    cfg = load_config(overrides=[f"topo.placement={placement}", "stitch.runs=1", "stitch.modes=relative_robust"])
    data = cfg.data
    pair = generate_domain_pair(data.kind, data.samples, data.classes, data.dim, cfg.train.seed, data)
    train_idx, test_idx = split_indices(data.samples, data.test_fraction, cfg.train.seed)
    outcome = experiment_runner._run(pair, train_idx, test_idx, Mode.RELATIVE_ROBUST, cfg, cfg.train.seed)
    pre = np.concatenate([d for by_class in outcome.deaths_pre.values() for d in by_class.values()])
    post = np.concatenate([d for by_class in outcome.deaths_post.values() for d in by_class.values()])
    return pre, post, cfg.topo.beta


@pytest.fixture(scope="module")
def densified_death_times():
    return pooled_death_times("combined"), pooled_death_times("none")


@pytest.mark.slow
def test_densification_moves_death_times_toward_beta(densified_death_times):
    (pre, post, beta), (pre_plain, post_plain, _) = densified_death_times
    assert abs(pre.mean() - beta) < abs(pre_plain.mean() - beta)
    assert abs(post.mean() - beta) < abs(post_plain.mean() - beta)


# post-relative deaths of the two-class toy data stay near 0.6 while pre-relative ones reach 2.0
@pytest.mark.slow
@pytest.mark.xfail(
    reason="pre- and post-relative intervals do not overlap at the default training length", strict=False,
)
def test_densified_death_time_intervals_overlap(densified_death_times):
    (pre, post, _), _ = densified_death_times
    assert pre.mean() - pre.std() <= post.mean() + post.std()
    assert post.mean() - post.std() <= pre.mean() + pre.std()


@pytest.mark.slow
def test_experiment_report_is_reproducible(tmp_path):
    overrides = [*SMOKE, "train.seed=5"]
    experiment_runner.run_experiment(load_config(overrides=overrides), tmp_path / "first")
    experiment_runner.run_experiment(load_config(overrides=overrides), tmp_path / "second")
    assert (tmp_path / "first" / "report.csv").read_bytes() == (tmp_path / "second" / "report.csv").read_bytes()
