import logging
from pathlib import Path

import click
import numpy as np

from app.cli.common import KEYS_EPILOG
from app.exceptions import InputError, LengthMismatch
from app.repositories.csv_repository import csv_repository
from app.repositories.experiment_repository import experiment_repository
from app.services.topology import class_losses, death_times

logger = logging.getLogger(__name__)


def read_labels(path: Path) -> np.ndarray:
    """A CSV whose first column is headed 'label' (a bare label file or a dataset file)."""
    header, rows = csv_repository.read_rows(path)
    if not header or header[0] != "label":
        raise InputError(f"{path}: expected a 'label' column first")
    return np.array([int(row[0]) for row in rows], dtype=np.int64)


@click.command("analyze-topology", epilog=KEYS_EPILOG)
@click.option("--embeddings", type=click.Path(dir_okay=False, exists=True, path_type=Path), required=True)
@click.option("--labels", "labels_path", type=click.Path(dir_okay=False, exists=True, path_type=Path), required=True)
@click.option("--beta", type=float, default=3.0, show_default=True)
@click.option("--bins", type=int, default=20, show_default=True)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), required=True)
def analyze_topology(embeddings, labels_path, beta, bins, out):
    """Per-class death-time histograms and densification loss of an embedding file."""
    points = csv_repository.read_latent(embeddings).data
    labels = read_labels(labels_path)
    if labels.shape[0] != points.shape[0]:
        raise LengthMismatch(f"{points.shape[0]} embeddings but {labels.shape[0]} labels")

    classes = sorted(int(c) for c in np.unique(labels))
    groups = [points[labels == c] for c in classes]
    losses = dict(zip(classes, class_losses(groups, beta)))
    deaths = {c: death_times(g).deaths for c, g in zip(classes, groups)}
    experiment_repository.write_topology_analysis(out, deaths, losses, bins)
    for c in classes:
        click.echo(f"class {c}: {deaths[c].size} death times, loss {losses[c]:.6g}")
