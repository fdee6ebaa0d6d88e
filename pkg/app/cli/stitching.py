import logging
from pathlib import Path

import click

from app.cli.common import KEYS_EPILOG, config_options, resolve_config
from app.cli.training import dataset_classes
from app.models.experiment import StitchCell, StitchReport
from app.repositories.csv_repository import csv_repository
from app.repositories.experiment_repository import experiment_repository
from app.services.stitching import DOMAINS, experiment_runner, split_indices, stitch_evaluate

logger = logging.getLogger(__name__)


@click.command("stitch", epilog=KEYS_EPILOG)
@click.option("--data", "data_dir", type=click.Path(file_okay=False, exists=True, path_type=Path), required=True)
@click.option("--models", "models_dir", type=click.Path(file_okay=False, exists=True, path_type=Path), required=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True, help="report.csv to write.")
@config_options
def stitch(data_dir, models_dir, out, config_path, overrides):
    """
    Evaluate every (head, encoder) pairing of model_a and model_b on the
    test split of the encoder's domain.
    """
    config = resolve_config(config_path, overrides)
    models = {d: experiment_repository.load_model(models_dir, f"model_{d}") for d in DOMAINS}
    if models["a"].anchor_ids != models["b"].anchor_ids:
        logger.warning("Domain models were trained with different anchor indices; stitching will not be aligned")

    datasets = {d: csv_repository.read_dataset(data_dir / f"domain_{d}.csv") for d in DOMAINS}
    _, labels = datasets["a"]
    _, test_idx = split_indices(labels.shape[0], config.data.test_fraction, config.train.seed)
    n_classes = dataset_classes(data_dir, labels)

    report = StitchReport()
    for gamma in DOMAINS:
        for phi in DOMAINS:
            inputs, truth = datasets[phi]
            scores = stitch_evaluate(
                models[phi], models[gamma], models[phi].anchors, inputs[test_idx], truth[test_idx],
                n_classes, config.stitch.f1, config.stitch.eval_stats, config.train.norm_epsilon,
            )
            report.cells.append(StitchCell(
                mode=models[phi].mode, gamma_domain=gamma, phi_domain=phi,
                acc_mean=scores.acc, acc_std=0.0, f1_mean=scores.f1, f1_std=0.0, mae_mean=scores.mae, mae_std=0.0,
            ))
            click.echo(f"head {gamma} <- encoder {phi}: acc={scores.acc:.2f} f1={scores.f1:.2f} mae={scores.mae:.2f}")
    experiment_repository.write_report(out, report)


@click.command("experiment", epilog=KEYS_EPILOG)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), required=True)
@config_options
def experiment(out, config_path, overrides):
    """Generate a domain pair, train every mode over the seeded runs and write the stitching report."""
    config = resolve_config(config_path, overrides)
    report = experiment_runner.run_experiment(config, out)
    for mode in config.stitch.modes:
        click.echo(f"{mode.value}: mean cross-domain accuracy {report.cross_domain_accuracy(mode):.2f}")
