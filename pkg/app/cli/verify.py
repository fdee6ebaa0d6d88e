import logging

import click

from app.cli.common import KEYS_EPILOG
from app.services.verification import SUITES, verifier

logger = logging.getLogger(__name__)


@click.command("verify", epilog=KEYS_EPILOG)
@click.option("--suite", type=click.Choice([*SUITES, "all"]), default="all", show_default=True)
@click.pass_context
def verify(ctx, suite):
    """Run the seeded property suites; exits 1 if any property fails."""
    failures = 0
    for name, results in verifier.run(suite).items():
        click.echo(f"[{name}]")
        for r in results:
            status = "PASS" if r.passed else "FAIL"
            click.echo(f"  {status}  {r.name}  worst={r.worst:.3e}  tol={r.tolerance:.1e}  cases={r.cases}")
            failures += not r.passed
    if failures:
        logger.warning(f"{failures} propert{'y' if failures == 1 else 'ies'} failed")
        ctx.exit(1)
