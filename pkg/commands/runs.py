import json
import logging

import click

from services.runs import recent_runs

logger = logging.getLogger(__name__)


@click.command('runs')
@click.option('--limit', type=click.IntRange(min=1), default=20, show_default=True)
@click.option('--command', 'command_name', help='Only runs of this command.')
@click.option('--json', 'as_json', is_flag=True, help='One JSON object per line.')
def runs_cmd(limit, command_name, as_json):
    """List the most recent runs in the registry, newest first."""
    records = recent_runs(limit=limit, command=command_name)
    if not records:
        click.echo("no recorded runs")
        return
    for record in records:
        if as_json:
            click.echo(json.dumps(record.to_dict(), sort_keys=True, default=str))
            continue
        started = record.started_at.strftime('%Y-%m-%d %H:%M:%S') if record.started_at else '-'
        wall = f"{record.wall_seconds:.2f}s" if record.wall_seconds is not None else '-'
        click.echo(f"{record.id}\t{record.command}\t{record.status.value}\t{started}\t{wall}")
