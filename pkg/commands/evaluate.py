import logging
import os

import click
import numpy as np

from models import SparseTensor
from services.checkpoint import load_checkpoint
from services.data_io import read_sparse
from services.errors import InputError
from services.metrics import compute_metrics
from services.runs import track_run

logger = logging.getLogger(__name__)


def align_predictions(predictions: SparseTensor, test: SparseTensor) -> np.ndarray:
    """Prediction values reordered to match the test entries."""
    if predictions.shape != test.shape:
        raise InputError(f"prediction shape {predictions.shape} does not match test shape {test.shape}")
    wanted = np.ravel_multi_index(tuple(test.indices.T), test.shape)
    if predictions.nnz == 0:
        if wanted.size:
            raise InputError(f"no prediction for test entry {tuple(int(i) + 1 for i in test.indices[0])}")
        return predictions.values
    keys = np.ravel_multi_index(tuple(predictions.indices.T), predictions.shape)
    order = np.argsort(keys)
    pos = np.minimum(np.searchsorted(keys[order], wanted), keys.shape[0] - 1)
    hit = keys[order][pos] == wanted
    if not hit.all():
        bad = test.indices[np.argmin(hit)]
        raise InputError(f"no prediction for test entry {tuple(int(i) + 1 for i in bad)}")
    return predictions.values[order[pos]]


def _checkpoint_ranks(path, key):
    checkpoint = load_checkpoint(path)
    if key in checkpoint.meta:
        return list(checkpoint.meta[key])
    if checkpoint.samples is not None:
        return list(checkpoint.samples.estimated_ranks())
    return list(checkpoint.models[0].ranks)


@click.command('eval')
@click.argument('predictions_path', type=click.Path(dir_okay=False))
@click.argument('test_path', type=click.Path(dir_okay=False))
@click.option('--probabilities', is_flag=True, help='Binary predictions are probabilities, not logits.')
@click.option('--data-range', type=float, help='Peak value range for PSNR (default: spread of test values).')
@click.option('--model', 'model_path', type=click.Path(dir_okay=False), help='Fitted checkpoint for rank error.')
@click.option('--truth', 'truth_path', type=click.Path(dir_okay=False), help='Truth checkpoint for rank error.')
@click.option('--out', 'out_path', type=click.Path(dir_okay=False), help='Also write the report here.')
def eval_cmd(predictions_path, test_path, probabilities, data_range, model_path, truth_path, out_path):
    """Compare predictions with held-out entries and print key=value metrics."""
    if (model_path is None) != (truth_path is None):
        raise InputError("--model and --truth must be given together")
    inputs = [p for p in (predictions_path, test_path, model_path, truth_path) if p]
    manifest_dir = os.path.dirname(os.path.abspath(out_path)) if out_path else None
    with track_run('eval', {'probabilities': probabilities, 'data_range': data_range}, inputs=inputs,
                   manifest_dir=manifest_dir) as manifest:
        predictions = read_sparse(predictions_path)
        test = read_sparse(test_path)
        pred = align_predictions(predictions, test)
        estimated = truth = None
        if model_path is not None:
            estimated = _checkpoint_ranks(model_path, 'estimated_ranks')
            truth = _checkpoint_ranks(truth_path, 'true_ranks')
        report = compute_metrics(pred, test, data_range=data_range, logits=not probabilities,
                                 estimated_ranks=estimated, true_ranks=truth)
        logger.debug("evaluated %d test entries", test.nnz)
        text = report.format()
        if out_path:
            with open(out_path, 'w', encoding='utf-8') as handle:
                handle.write(text + '\n')
            manifest.outputs.append(out_path)
        manifest.extra['metrics'] = report.to_dict()
    click.echo(text)
