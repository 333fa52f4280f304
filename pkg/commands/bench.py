"""
`bench`: time one Gibbs sweep and one online EM epoch on order-D tensors of
side I, for each I in --sizes, at a fixed (very high) missing rate.

Raw columns are the best of --repeats runs. The marginal columns subtract the
same run on a single observation of the same shape, leaving the part of the
cost that grows with the observed entries; at sizes with few observations the
per-entry cost is taken from a denser workload on the same shape.
"""

import logging
import math
import os
import time
from typing import Callable, List, Optional, Sequence

import click
import numpy as np

from models import SparseTensor, TensorKind
from services.config import GibbsConfig, OnlineConfig, RankAdaptionConfig, get_settings
from services.errors import CapacityError, InputError
from services.gibbs import gibbs_sweep, initial_state
from services.online_em import run_online
from services.runs import track_run
from services.sampling import make_rng
from services.tensor_ring import eval_entries, random_model
from commands.common import resolve_threads

logger = logging.getLogger(__name__)

COLUMNS = ('I', 'nnz', 'gibbs_seconds', 'online_seconds', 'gibbs_marginal', 'online_marginal')
MIN_WORKLOAD = 4096


def observed_count(shape: Sequence[int], missing_rate: float) -> int:
    return max(1, int(round((1.0 - missing_rate) * math.prod(shape))))


def sparse_observations(shape: Sequence[int], missing_rate: float, rank: int, rng,
                        noise_std: float = 0.1, n_obs: Optional[int] = None) -> SparseTensor:
    """Noisy entries of a random TR tensor at uniformly chosen positions, without a dense pass."""
    n_obs = observed_count(shape, missing_rate) if n_obs is None else int(n_obs)
    if not 1 <= n_obs <= math.prod(shape):
        raise InputError(f"cannot observe {n_obs} entries of shape {tuple(shape)}")
    limit = get_settings().max_dense_entries
    if n_obs > limit:
        raise CapacityError(f"{n_obs} observed entries for shape {tuple(shape)} exceed the limit of {limit}")
    flat = np.sort(rng.choice(math.prod(shape), size=n_obs, replace=False))
    indices = np.stack(np.unravel_index(flat, tuple(shape)), axis=1)
    truth = random_model(shape, rank, rng)
    values = eval_entries(truth, indices) + rng.normal(0.0, noise_std, size=n_obs)
    return SparseTensor(tuple(shape), indices, values, TensorKind.CONTINUOUS)


def best_time(run: Callable[[], object], repeats: int = 3) -> float:
    best = math.inf
    for _ in range(max(1, repeats)):
        started = time.perf_counter()
        run()
        best = min(best, time.perf_counter() - started)
    return best


def marginal_seconds(seconds: float, baseline: float, n_work: int, nnz: int) -> float:
    """Cost above the single-observation baseline, per entry of an n_work workload, scaled to nnz."""
    return max(seconds - baseline, 0.0) / max(n_work - 1, 1) * nnz


def benchmark_sizes(sizes: Sequence[int], order: int = 4, rank: int = 2, missing_rate: float = 0.999,
                    seed: int = 0, threads: int = 1, batch_size: int = 512, repeats: int = 3,
                    min_workload: int = MIN_WORKLOAD) -> List[dict]:
    rows = []
    gibbs_config = GibbsConfig(init_rank=rank, burn_in=0, n_samples=1, seed=seed, threads=threads,
                               rank_adaption=RankAdaptionConfig(enabled=False), log_every=0).validate()
    online_config = OnlineConfig(rank=rank, epochs=1, seed=seed, batch_size=batch_size)

    def sweep(data):
        state = initial_state(data, None, gibbs_config)
        return best_time(lambda: gibbs_sweep(state, data, gibbs_config, adapt=False), repeats)

    def epoch(data):
        return best_time(lambda: run_online(data, online_config), repeats)

    for size in sizes:
        shape = (int(size),) * order
        data = sparse_observations(shape, missing_rate, rank, make_rng(seed))
        single = data.subset([0])
        n_work = min(max(data.nnz, min_workload), math.prod(shape))
        work = data if n_work == data.nnz else sparse_observations(shape, missing_rate, rank, make_rng(seed),
                                                                   n_obs=n_work)
        row = {'I': int(size), 'nnz': data.nnz, 'gibbs_seconds': sweep(data), 'online_seconds': epoch(data)}
        gibbs_work = row['gibbs_seconds'] if work is data else sweep(work)
        online_work = row['online_seconds'] if work is data else epoch(work)
        row['gibbs_marginal'] = marginal_seconds(gibbs_work, sweep(single), n_work, data.nnz)
        row['online_marginal'] = marginal_seconds(online_work, epoch(single), n_work, data.nnz)
        rows.append(row)
        logger.info("I=%d nnz=%d gibbs %.4fs (marginal %.4fs) online %.4fs (marginal %.4fs)", size, data.nnz,
                    row['gibbs_seconds'], row['gibbs_marginal'], row['online_seconds'], row['online_marginal'])
    return rows


def loglog_slope(x, y) -> float:
    """Least-squares slope of log(y) against log(x)."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape[0] < 2:
        raise InputError("need at least two points for a slope")
    if not ((x > 0).all() and (y > 0).all()):
        raise InputError("log-log slope needs positive values")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def format_table(rows: List[dict]) -> str:
    lines = ['\t'.join(COLUMNS)]
    for row in rows:
        lines.append('\t'.join([str(row['I']), str(row['nnz'])]
                               + [f"{row[column]:.6f}" for column in COLUMNS[2:]]))
    return '\n'.join(lines)


@click.command('bench')
@click.option('--sizes', default='10,30,50,70', show_default=True, help='Comma separated side lengths I.')
@click.option('--order', type=click.IntRange(min=1), default=4, show_default=True)
@click.option('--rank', type=click.IntRange(min=1), default=2, show_default=True)
@click.option('--missing', 'missing_rate', type=click.FloatRange(0.0, 1.0, max_open=True), default=0.999,
              show_default=True)
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--repeats', type=click.IntRange(min=1), default=3, show_default=True,
              help='Timed runs per cell; the best one is kept.')
@click.option('--threads', type=int, help='Worker threads for Polya-Gamma draws (default: all cores).')
@click.option('--out', 'out_path', type=click.Path(dir_okay=False), help='Also write the table here.')
def bench_cmd(sizes, order, rank, missing_rate, seed, repeats, threads, out_path):
    """Per-sweep Gibbs and per-epoch online EM timings against |Omega|."""
    try:
        sizes = [int(tok) for tok in sizes.split(',') if tok.strip()]
    except ValueError:
        raise click.BadParameter(f"{sizes!r} is not a comma separated list of integers", param_hint='--sizes')
    if not sizes or any(s < 1 for s in sizes):
        raise click.BadParameter("sizes must be positive", param_hint='--sizes')
    config = {'sizes': sizes, 'order': order, 'rank': rank, 'missing_rate': missing_rate, 'repeats': repeats}
    manifest_dir = os.path.dirname(os.path.abspath(out_path)) if out_path else None
    with track_run('bench', config, seed=seed, manifest_dir=manifest_dir) as manifest:
        rows = benchmark_sizes(sizes, order, rank, missing_rate, seed, resolve_threads(threads), repeats=repeats)
        table = format_table(rows)
        if len(rows) > 1:
            nnz = [r['nnz'] for r in rows]
            try:
                manifest.extra['gibbs_slope'] = loglog_slope(nnz, [r['gibbs_marginal'] for r in rows])
                manifest.extra['online_slope'] = loglog_slope(nnz, [r['online_marginal'] for r in rows])
                table += (f"\n# log-log slope of marginal time vs nnz: gibbs={manifest.extra['gibbs_slope']:.3f}"
                          f" online={manifest.extra['online_slope']:.3f}")
            except InputError as exc:
                logger.warning("no slope: %s", exc)
                table += "\n# log-log slope unavailable: marginal time was not positive at every size"
        if out_path:
            with open(out_path, 'w', encoding='utf-8') as handle:
                handle.write(table + '\n')
            manifest.outputs.append(out_path)
    click.echo(table)
