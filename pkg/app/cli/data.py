import logging
from pathlib import Path

import click

from app.cli.common import KEYS_EPILOG, config_options, resolve_config
from app.config import DomainKind
from app.repositories.experiment_repository import experiment_repository
from app.services.stitching import generate_domain_pair

logger = logging.getLogger(__name__)


@click.command("gen-data", epilog=KEYS_EPILOG)
@click.option("--kind", type=click.Choice([k.value for k in DomainKind]), help="Hidden map from domain A to B.")
@click.option("--classes", type=int)
@click.option("--samples", type=int)
@click.option("--dim", type=int)
@click.option("--seed", type=int)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), required=True)
@config_options
def gen_data(kind, classes, samples, dim, seed, out, config_path, overrides):
    """
    Write a paired-domain dataset: domain_a.csv, domain_b.csv and a manifest
    holding the hidden generator parameters.
    """
    flags = {"data.kind": kind, "data.classes": classes, "data.samples": samples, "data.dim": dim, "train.seed": seed}
    config = resolve_config(config_path, overrides, (f"{k}={v}" for k, v in flags.items() if v is not None))
    data = config.data

    pair = generate_domain_pair(data.kind, data.samples, data.classes, data.dim, config.train.seed, data)
    experiment_repository.save_domain_pair(out, pair, config.train.seed)
    click.echo(f"wrote {data.samples} paired samples to {out}")
