import logging
import os

import click
from scipy.special import expit

from models import SparseTensor, TensorKind
from services.checkpoint import load_checkpoint
from services.data_io import read_sparse, write_sparse
from services.errors import InputError
from services.gibbs import posterior_mean, posterior_probability
from services.runs import track_run

logger = logging.getLogger(__name__)


@click.command('predict')
@click.argument('checkpoint_path', type=click.Path(dir_okay=False))
@click.argument('index_path', type=click.Path(dir_okay=False))
@click.option('--out', 'out_path', type=click.Path(dir_okay=False), required=True,
              help='Predictions file (sparse format); binary models also write OUT.prob.')
def predict_cmd(checkpoint_path, index_path, out_path):
    """Posterior-mean predictions at the entries listed in INDEX_PATH.

    Values in INDEX_PATH are ignored. For binary models the predictions file
    holds logits and OUT.prob the posterior predictive probabilities.
    """
    out_dir = os.path.dirname(os.path.abspath(out_path))
    with track_run('predict', {'checkpoint': checkpoint_path}, inputs=[checkpoint_path, index_path],
                   manifest_dir=out_dir) as manifest:
        checkpoint = load_checkpoint(checkpoint_path)
        targets = read_sparse(index_path)
        if targets.shape != tuple(checkpoint.shape):
            raise InputError(f"index file shape {targets.shape} does not match model shape {checkpoint.shape}")
        meta = checkpoint.meta
        offset = float(meta.get('offset', 0.0))
        binary = meta.get('kind') == TensorKind.BINARY.value

        x = posterior_mean(checkpoint.models, targets.indices) + offset
        if not binary:
            x = x * float(meta.get('y_std', 1.0)) + float(meta.get('y_mean', 0.0))
        write_sparse(SparseTensor(targets.shape, targets.indices, x, TensorKind.CONTINUOUS), out_path)
        manifest.outputs.append(out_path)
        if binary:
            if len(checkpoint.models) > 1:
                probs = posterior_probability(checkpoint.models, targets.indices)
            else:
                probs = expit(x)
            prob_path = out_path + '.prob'
            write_sparse(SparseTensor(targets.shape, targets.indices, probs, TensorKind.CONTINUOUS), prob_path)
            manifest.outputs.append(prob_path)
        manifest.extra.update({'entries': targets.nnz, 'samples': len(checkpoint.models)})
    logger.info("predicted %d entries from %d sample(s)", targets.nnz, len(checkpoint.models))
    click.echo(f"wrote {targets.nnz} predictions to {out_path}")
