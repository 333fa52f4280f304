import logging

import click

from models import TensorKind
from services.checkpoint import save_checkpoint
from services.config import get_settings
from services.data_io import SyntheticSpec, generate_synthetic, write_sparse
from services.runs import track_run
from commands.common import SHAPE, output_paths

logger = logging.getLogger(__name__)


@click.command('simulate')
@click.option('--shape', type=SHAPE, required=True, help='Tensor shape, e.g. 10,10,10,10.')
@click.option('--rank', 'true_rank', type=click.IntRange(min=1), default=5, show_default=True,
              help='True TR rank, uniform over modes.')
@click.option('--snr', 'snr_db', type=float, default=20.0, show_default=True,
              help='Signal-to-noise ratio in dB (inf for noiseless).')
@click.option('--missing', 'missing_rate', type=click.FloatRange(0.0, 1.0, max_open=True), default=0.1,
              show_default=True, help='Fraction of entries held out as the test set.')
@click.option('--kind', type=click.Choice([k.value for k in TensorKind]), default='continuous',
              show_default=True)
@click.option('--logit-scale', type=float, default=1.0, show_default=True,
              help='Scale applied to the standardised signal before Bernoulli draws.')
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), required=True, help='Output directory.')
def simulate_cmd(shape, true_rank, snr_db, missing_rate, kind, logit_scale, seed, out_dir):
    """Generate a synthetic low-rank tensor and split it into train/test files."""
    spec = SyntheticSpec(shape=shape, true_rank=true_rank, snr_db=snr_db, missing_rate=missing_rate,
                         kind=TensorKind(kind), seed=seed, logit_scale=logit_scale)
    config = {'shape': list(shape), 'true_rank': true_rank, 'snr_db': snr_db, 'missing_rate': missing_rate,
              'kind': kind, 'logit_scale': logit_scale}
    with track_run('simulate', config, seed=seed, manifest_dir=out_dir) as manifest:
        dataset = generate_synthetic(spec, get_settings().max_dense_entries)
        train_path, test_path, truth_path = output_paths(out_dir, 'train.txt', 'test.txt', 'truth.npz')
        write_sparse(dataset.train, train_path)
        write_sparse(dataset.test, test_path)
        save_checkpoint(truth_path, [dataset.truth], engine='truth',
                        meta={'offset': dataset.offset, 'noise_std': dataset.noise_std, 'kind': kind,
                              'true_ranks': list(dataset.truth.ranks)})
        manifest.outputs.extend([train_path, test_path, truth_path])
        manifest.extra.update({'train_entries': dataset.train.nnz, 'test_entries': dataset.test.nnz,
                               'noise_std': dataset.noise_std, 'offset': dataset.offset})
    click.echo(f"wrote {dataset.train.nnz} train and {dataset.test.nnz} test entries to {out_dir}")
