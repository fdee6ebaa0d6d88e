"""
On-disk formats: headered CSVs, the binary weight file, dataset manifests
and model directories.
"""
import struct

import numpy as np
import pytest

from app.config import DomainKind, Mode
from app.exceptions import DimensionMismatch, InputError
from app.models.experiment import DomainModel, TrainLogRow
from app.models.latent import AnchorSet, LatentBatch
from app.models.network import Activation
from app.repositories.csv_repository import csv_repository
from app.repositories.experiment_repository import experiment_repository
from app.repositories.storage import atomic_write, format_float, read_text
from app.repositories.weights_repository import weights_repository
from app.services.model import init_mlp
from app.services.stitching import generate_domain_pair, replay_domain_b


def assert_same_weights(left, right):
    assert left.activation is right.activation
    assert left.latent_layer == right.latent_layer
    for a, b in zip(left.weights + left.biases, right.weights + right.biases):
        np.testing.assert_array_equal(a, b)


def test_float_format_round_trips_exactly():
    for value in [0.1, 1 / 3, -2.5e-300, 1e16 + 2, np.pi]:
        assert float(format_float(value)) == value
    assert format_float(0.5) == "0.5"


def test_atomic_write_creates_parents_and_leaves_no_temp_files(tmp_path):
    target = tmp_path / "nested" / "out.txt"
    atomic_write(target, "first")
    atomic_write(target, "second")
    assert read_text(target) == "second"
    assert [p.name for p in target.parent.iterdir()] == ["out.txt"]


def test_read_text_missing_file(tmp_path):
    with pytest.raises(OSError):
        read_text(tmp_path / "absent.txt")


# CSV

def test_dataset_csv(tmp_path):
    inputs = np.array([[0.1, -2.0], [1 / 3, 4.0]])
    path = csv_repository.write_dataset(tmp_path / "d.csv", inputs, np.array([1, 0]))
    assert read_text(path).splitlines()[0] == "label,x0,x1"
    loaded, labels = csv_repository.read_dataset(path)
    np.testing.assert_array_equal(loaded, inputs)
    assert labels.tolist() == [1, 0]


def test_dataset_csv_errors(tmp_path):
    (tmp_path / "bad_header.csv").write_text("x0,x1\n1,2\n")
    (tmp_path / "ragged.csv").write_text("label,x0,x1\n0,1.0\n")
    (tmp_path / "empty.csv").write_text("")
    with pytest.raises(InputError):
        csv_repository.read_dataset(tmp_path / "bad_header.csv")
    with pytest.raises(DimensionMismatch):
        csv_repository.read_dataset(tmp_path / "ragged.csv")
    with pytest.raises(InputError):
        csv_repository.read_dataset(tmp_path / "empty.csv")


def test_latent_csv(tmp_path):
    batch = LatentBatch(data=[[1.0, 2.0, 3.0], [0.25, -1e-12, 7.0]])
    path = csv_repository.write_latent(tmp_path / "z.csv", batch)
    assert read_text(path).startswith("dim=3\n")
    np.testing.assert_array_equal(csv_repository.read_latent(path).data, batch.data)


def test_latent_csv_dimension_header(tmp_path):
    (tmp_path / "wrong.csv").write_text("dim=3\n1,2\n")
    (tmp_path / "missing.csv").write_text("a,b\n1,2\n")
    with pytest.raises(DimensionMismatch):
        csv_repository.read_latent(tmp_path / "wrong.csv")
    with pytest.raises(InputError):
        csv_repository.read_latent(tmp_path / "missing.csv")


def test_anchor_csv_keeps_ids_and_order(tmp_path):
    anchors = AnchorSet(anchors=[[1.0, 0.0], [0.5, 2.0], [-1.0, 1.0]], ids=[7, 2, 11])
    path = csv_repository.write_anchors(tmp_path / "anchors.csv", anchors)
    assert read_text(path).splitlines()[:2] == ["dim=2,id", "7,1,0"]
    loaded = csv_repository.read_anchors(path)
    assert loaded.ids == [7, 2, 11]
    np.testing.assert_array_equal(loaded.anchors, anchors.anchors)


def test_bool_cells_are_written_as_digits():
    text = csv_repository.render(["flag", "value"], [[True, 1.5], [False, 2]])
    assert text == "flag,value\n1,1.5\n0,2\n"


# Weight files

def test_weights_file(tmp_path):
    weights = init_mlp((4, 6, 5, 3), Activation.GELU, 3, latent_layer=2, head_input_dim=7)
    path = weights_repository.save(tmp_path / "w.mlpw", weights)
    loaded = weights_repository.load(path)
    assert_same_weights(loaded, weights)
    assert loaded.head_input_dim == 7
    assert loaded.running_mean is None


def test_weights_file_with_running_stats():
    weights = init_mlp((3, 4, 2), Activation.RELU, 0, latent_layer=1)
    weights = weights.model_copy(update={"running_mean": np.arange(4.0), "running_std": np.full(4, 0.5)})
    loaded = weights_repository.from_bytes(weights_repository.to_bytes(weights))
    np.testing.assert_array_equal(loaded.running_mean, np.arange(4.0))
    np.testing.assert_array_equal(loaded.running_std, np.full(4, 0.5))


def test_weights_file_layout_starts_with_magic():
    payload = weights_repository.to_bytes(init_mlp((2, 3, 2), Activation.IDENTITY, 0))
    assert payload[:4] == b"MLPW"
    assert struct.unpack_from("<II", payload, 4) == (1, 2)


@pytest.mark.parametrize("corrupt", [
    lambda p: b"NOPE" + p[4:],
    lambda p: p[:-5],
    lambda p: p + b"\x00",
    lambda p: p[:4] + struct.pack("<I", 99) + p[8:],
])
def test_corrupt_weight_files(corrupt):
    payload = weights_repository.to_bytes(init_mlp((2, 3, 2), Activation.RELU, 0))
    with pytest.raises(InputError):
        weights_repository.from_bytes(corrupt(payload))


# Experiment layouts

def test_manifest_replays_domain_b(tmp_path):
    for kind in DomainKind:
        pair = generate_domain_pair(kind, 60, 3, 4, seed=5)
        manifest = experiment_repository.save_domain_pair(tmp_path / kind.value, pair, 5)
        loaded = experiment_repository.load_manifest(tmp_path / kind.value / "manifest.json")
        assert loaded == manifest
        inputs_a, _ = csv_repository.read_dataset(tmp_path / kind.value / "domain_a.csv")
        inputs_b, _ = csv_repository.read_dataset(tmp_path / kind.value / "domain_b.csv")
        np.testing.assert_allclose(replay_domain_b(inputs_a, loaded.generator()), inputs_b, rtol=1e-12, atol=1e-12)


def test_model_directory(tmp_path):
    weights = init_mlp((3, 5, 4, 2), Activation.RELU, 1, latent_layer=2, head_input_dim=3)
    anchors = AnchorSet(anchors=np.arange(1.0, 13.0).reshape(3, 4), ids=[4, 0, 9])
    model = DomainModel(weights=weights, mode=Mode.RELATIVE_VANILLA, anchor_ids=[4, 0, 9], anchors=anchors)
    experiment_repository.save_model(tmp_path, "model_a", model)
    loaded = experiment_repository.load_model(tmp_path, "model_a")
    assert loaded.mode is Mode.RELATIVE_VANILLA
    assert loaded.anchor_ids == [4, 0, 9]
    np.testing.assert_array_equal(loaded.anchors.anchors, anchors.anchors)
    assert_same_weights(loaded.weights, weights)


def test_absolute_model_directory_has_no_anchor_file(tmp_path):
    model = DomainModel(weights=init_mlp((3, 4, 2), Activation.RELU, 0), mode=Mode.ABSOLUTE)
    experiment_repository.save_model(tmp_path, "model_b", model)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["model_b.json", "model_b.mlpw"]
    assert experiment_repository.load_model(tmp_path, "model_b").anchors is None


def test_train_log_columns(tmp_path):
    rows = [
        TrainLogRow(step=0, task_loss=1.5, r_pre=0.0, r_post=0.25, sched_weight=0.0, total=1.5, anchors_refreshed=True),
        TrainLogRow(step=1, task_loss=float("nan"), r_pre=float("nan"), r_post=float("nan"), sched_weight=0.5,
                    total=float("nan"), anchors_refreshed=False, skipped=True, reason="DegenerateEdge"),
    ]
    header, body = csv_repository.read_rows(experiment_repository.write_train_log(tmp_path / "log.csv", rows))
    assert header == ["step", "task_loss", "r_pre", "r_post", "sched_weight", "total", "anchors_refreshed", "skipped", "reason"]
    assert body[0] == ["0", "1.5", "0", "0.25", "0", "1.5", "1", "0", ""]
    assert body[1][-2:] == ["1", "DegenerateEdge"]


def test_topology_analysis_files(tmp_path):
    deaths = {0: np.array([1.0, 2.0]), 1: np.array([4.0])}
    experiment_repository.write_topology_analysis(tmp_path, deaths, {0: 1.0, 1: 1.0}, bins=4)
    header, rows = csv_repository.read_rows(tmp_path / "histogram.csv")
    assert header == ["class", "bin_left", "bin_right", "count"]
    assert len(rows) == 8
    assert [float(r[1]) for r in rows[:4]] == [0.0, 1.0, 2.0, 3.0]
    assert sum(int(r[3]) for r in rows if r[0] == "0") == 2
    _, summary = csv_repository.read_rows(tmp_path / "summary.csv")
    assert summary[0][:3] == ["0", "2", "1.5"]
