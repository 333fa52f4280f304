import logging
import sys

import click
from dotenv import load_dotenv

from services import __version__
from services.errors import EXIT_IO, TensorRingError

load_dotenv()

logger = logging.getLogger('ringfit')


class RingfitGroup(click.Group):
    """Maps package errors onto the documented exit codes."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except TensorRingError as exc:
            logger.error("%s", exc)
            click.echo(f"Error: {exc}", err=True)
            ctx.exit(exc.exit_code)
        except OSError as exc:
            logger.error("I/O failure: %s", exc)
            click.echo(f"Error: {exc}", err=True)
            ctx.exit(EXIT_IO)


@click.group(cls=RingfitGroup)
@click.option('-v', '--verbose', is_flag=True, help='Log at DEBUG level.')
@click.version_option(__version__, prog_name='ringfit')
def cli(verbose):
    """Bayesian tensor ring completion: simulate, fit, predict, eval, bench, runs."""
    from services.config import get_settings

    level = 'DEBUG' if verbose else get_settings().log_level
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')


# Register commands
from commands.simulate import simulate_cmd
from commands.fit import fit_cmd
from commands.predict import predict_cmd
from commands.evaluate import eval_cmd
from commands.bench import bench_cmd
from commands.runs import runs_cmd

cli.add_command(simulate_cmd)
cli.add_command(fit_cmd)
cli.add_command(predict_cmd)
cli.add_command(eval_cmd)
cli.add_command(bench_cmd)
cli.add_command(runs_cmd)


def main():
    cli(prog_name='ringfit')


if __name__ == '__main__':
    sys.exit(main())
