import logging
from pathlib import Path
from typing import Iterable, Optional, Sequence

import click

from app.config import ExperimentConfig, describe_keys, load_config

logger = logging.getLogger(__name__)

KEYS_EPILOG = "Configuration keys and defaults:\n\n\b\n" + describe_keys()


def config_options(command):
    """--config FILE and repeatable --set key=value, resolved into an ExperimentConfig."""
    command = click.option(
        "--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Override one configuration key."
    )(command)
    command = click.option(
        "--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), help="Flat key = value file."
    )(command)
    return command


def resolve_config(config_path: Optional[Path], overrides: Sequence[str], extra: Iterable[str] = ()) -> ExperimentConfig:
    config = load_config(config_path, [*overrides, *extra])
    logger.debug(f"Resolved configuration from {config_path or 'defaults'} with {len(overrides)} override(s)")
    return config
