import logging
from pathlib import Path

import click

from app.cli.common import KEYS_EPILOG, config_options, resolve_config
from app.config import Mode
from app.repositories.csv_repository import csv_repository
from app.repositories.experiment_repository import experiment_repository
from app.services.stitching import DOMAINS, select_anchor_ids, split_indices
from app.services.trainer import trainer

logger = logging.getLogger(__name__)


def dataset_classes(data_dir: Path, labels) -> int:
    manifest = data_dir / "manifest.json"
    if manifest.exists():
        return experiment_repository.load_manifest(manifest).classes
    return int(labels.max()) + 1


@click.command("train", epilog=KEYS_EPILOG)
@click.option("--data", "data_dir", type=click.Path(file_okay=False, exists=True, path_type=Path), required=True)
@click.option("--domain", type=click.Choice(DOMAINS), default="a", show_default=True)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), required=True)
@config_options
def train(data_dir, domain, out, config_path, overrides):
    """
    Train one domain model on the training split of domain_<domain>.csv.

    Models trained with the same seed on both domains share anchor indices
    and can be stitched.
    """
    config = resolve_config(config_path, overrides)
    inputs, labels = csv_repository.read_dataset(data_dir / f"domain_{domain}.csv")
    seed = config.train.seed
    train_idx, _ = split_indices(inputs.shape[0], config.data.test_fraction, seed)

    anchor_ids = None
    if config.train.mode is not Mode.ABSOLUTE:
        k = config.train.anchors or config.train.hidden_sizes[-1]
        anchor_ids = select_anchor_ids(train_idx.shape[0], k, seed)

    result = trainer.train_domain_model(
        inputs[train_idx], labels[train_idx], config, config.train.mode,
        anchor_ids=anchor_ids, n_classes=dataset_classes(data_dir, labels),
    )
    experiment_repository.save_model(out, f"model_{domain}", result.model)
    experiment_repository.write_train_log(out / f"train_log_{domain}.csv", result.log)
    experiment_repository.write_resolved_config(out / "resolved_config.txt", config)
    click.echo(f"trained {config.train.mode.value} model for domain {domain} in {len(result.log)} steps -> {out}")
