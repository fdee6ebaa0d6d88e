import logging

import click
from pydantic import ValidationError

from app.cli.data import gen_data
from app.cli.stitching import experiment, stitch
from app.cli.topology import analyze_topology
from app.cli.training import train
from app.cli.verify import verify
from app.config import settings
from app.exceptions import ConfigError, InputError, NumericalError
from app.logging_config import setup_logging

logger = logging.getLogger(__name__)

EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def exit_code(exc: Exception) -> int:
    if isinstance(exc, (ConfigError, InputError, ValidationError, OSError)):
        return EXIT_CONFIG
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    return EXIT_OTHER


class StitchwiseGroup(click.Group):
    """Command group whose failures are logged once and mapped to exit codes."""

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except (click.exceptions.Exit, click.ClickException, click.Abort):
            raise
        except Exception as exc:
            command = ctx.invoked_subcommand or ctx.info_name
            logger.error(f"Command {command} failed: {type(exc).__name__}: {exc}", exc_info=True)
            click.echo(f"error: {exc}", err=True)
            ctx.exit(exit_code(exc))


@click.group(cls=StitchwiseGroup)
@click.option("--log-level", default=None, help="Overrides LOG_LEVEL from the environment.")
def cli(log_level):
    """Robust relative representations, topological densification and zero-shot stitching."""
    setup_logging(log_level or settings.LOG_LEVEL)


cli.add_command(gen_data)
cli.add_command(train)
cli.add_command(stitch)
cli.add_command(experiment)
cli.add_command(analyze_topology)
cli.add_command(verify)


if __name__ == "__main__":
    cli()
