"""
`fit`: run the Gibbs sampler or online EM on a sparse tensor file.

Writes into --out:
    model.npz          checkpoint (retained samples + live state, or the point model)
    rank_trace.txt     ranks after every sweep (online: the fixed ranks)
    train_log.jsonl    one JSON record per sweep / iteration
    train_metrics.txt  metrics of the fitted model on the training entries
    fit_manifest.json
"""

import dataclasses
import json
import logging

import click
from scipy.special import expit

from services.checkpoint import load_checkpoint, save_checkpoint
from services.config import (GibbsConfig, OnlineConfig, build_config, config_snapshot, flatten_snapshot,
                             read_config_file)
from services.data_io import read_sparse, standardize
from services.errors import InputError
from services.gibbs import posterior_mean, posterior_probability, run_gibbs
from services.metrics import compute_metrics
from services.online_em import run_online, select_online_rank
from services.runs import track_run
from services.tensor_ring import eval_entries
from commands.common import output_paths, resolve_threads

logger = logging.getLogger(__name__)

GIBBS_ONLY = ('burn_in', 'n_samples', 'thin', 'adaption', 'epsilon', 'max_rank', 'resume', 'checkpoint_every')
ONLINE_ONLY = ('batch_size', 'epochs', 'step_size', 'step_decay')


def _write_rank_trace(path, rank_trace):
    with open(path, 'w', encoding='utf-8') as handle:
        for t, ranks in enumerate(rank_trace, start=1):
            handle.write(f"{t} " + ' '.join(str(r) for r in ranks) + '\n')


def _train_metrics(predict, data, mean, std):
    """Metrics on the training entries in the original data scale."""
    x = predict(data.indices)
    if data.is_binary:
        return compute_metrics(x, data)
    return compute_metrics(x * std + mean, data)


def _fit_gibbs(data, scaled, options, file_values, paths, meta):
    model_path, trace_path, log_path = paths
    overrides = {
        'a0': options['a0'], 'alpha0': options['alpha0'], 'beta0': options['beta0'], 'psi': options['psi'],
        'burn_in': options['burn_in'], 'n_samples': options['n_samples'], 'thin': options['thin'],
        'adaption': options['adaption'], 'epsilon': options['epsilon'], 'max_rank': options['max_rank'],
        'seed': options['seed'], 'threads': resolve_threads(options['threads']),
        'deterministic': options['deterministic'],
    }
    if options['rank'] is not None:
        try:
            overrides['init_rank'] = int(options['rank'])
        except ValueError:
            raise InputError(f"--rank must be an integer for the Gibbs engine, got {options['rank']!r}")

    resume = None
    if options['resume']:
        checkpoint = load_checkpoint(options['resume'])
        if checkpoint.engine != 'gibbs' or checkpoint.samples is None or checkpoint.samples.state is None:
            raise InputError(f"{options['resume']} is not a resumable Gibbs checkpoint")
        if tuple(checkpoint.shape) != data.shape:
            raise InputError(f"checkpoint shape {checkpoint.shape} does not match data shape {data.shape}")
        config = build_config(GibbsConfig, {**flatten_snapshot(checkpoint.config), **file_values}, overrides)
        resume = checkpoint.samples
        logger.info("resuming Gibbs chain at sweep %d", resume.state.iteration)
    else:
        config = build_config(GibbsConfig, file_values, overrides)

    snapshot = config_snapshot(config)

    def save_progress(samples):
        every = options['checkpoint_every']
        if every and samples.state.iteration % every == 0:
            save_checkpoint(model_path, samples.models, 'gibbs', samples, snapshot, meta)

    samples = run_gibbs(scaled, config=config, resume=resume, on_sweep=save_progress)
    meta['estimated_ranks'] = list(samples.estimated_ranks())
    save_checkpoint(model_path, samples.models, 'gibbs', samples, snapshot, meta)
    _write_rank_trace(trace_path, samples.rank_trace)
    with open(log_path, 'w', encoding='utf-8') as handle:
        for entry in samples.log:
            handle.write(json.dumps(entry) + '\n')

    models = samples.models or [samples.state.model]
    if data.is_binary:
        predict = lambda idx: posterior_probability(models, idx)
    else:
        predict = lambda idx: posterior_mean(models, idx)
    logger.info("kept %d samples; estimated ranks %s", len(samples.models), meta['estimated_ranks'])
    return snapshot, predict


def _fit_online(data, scaled, options, file_values, paths, meta):
    model_path, trace_path, log_path = paths
    auto = options['rank'] is not None and options['rank'].strip().lower() == 'auto'
    overrides = {
        'a0': options['a0'], 'alpha0': options['alpha0'], 'beta0': options['beta0'], 'psi': options['psi'],
        'batch_size': options['batch_size'], 'epochs': options['epochs'], 'step_size': options['step_size'],
        'step_decay': options['step_decay'], 'seed': options['seed'],
    }
    if options['rank'] is not None and not auto:
        overrides['rank'] = options['rank']
    config = build_config(OnlineConfig, file_values, overrides)
    if auto:
        best, scores = select_online_rank(scaled, config)
        meta['rank_scores'] = {str(k): v for k, v in scores.items()}
        config = dataclasses.replace(config, rank=best)
        logger.info("selected rank %d on the hold-out split", best)

    with open(log_path, 'w', encoding='utf-8') as handle:
        model, state = run_online(scaled, config, log_stream=handle)
    meta['estimated_ranks'] = list(model.ranks)
    meta['free_energy'] = state.free_energy_trace[-1]
    snapshot = config_snapshot(config)
    save_checkpoint(model_path, [model], 'online', config=snapshot, meta=meta)
    _write_rank_trace(trace_path, [model.ranks])

    if data.is_binary:
        predict = lambda idx: expit(eval_entries(model, idx))
    else:
        predict = lambda idx: eval_entries(model, idx)
    return snapshot, predict


@click.command('fit')
@click.argument('data_path', type=click.Path(dir_okay=False))
@click.option('--engine', type=click.Choice(['gibbs', 'online']), default='gibbs', show_default=True)
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), required=True, help='Output directory.')
@click.option('--config', 'config_path', type=click.Path(dir_okay=False),
              help='KEY=value file with engine hyperparameters (flags take precedence).')
@click.option('--seed', type=int)
@click.option('--rank', help='Initial rank (gibbs), or fixed rank / "auto" (online).')
@click.option('--a0', type=float)
@click.option('--alpha0', type=float)
@click.option('--beta0', type=float)
@click.option('--psi', type=float)
@click.option('--burn-in', type=int)
@click.option('--samples', 'n_samples', type=int)
@click.option('--thin', type=int)
@click.option('--adaption/--no-adaption', default=None, help='Rank adaption during burn-in.')
@click.option('--epsilon', type=float, help='Pruning threshold on |lambda|.')
@click.option('--max-rank', type=int)
@click.option('--batch-size', type=int)
@click.option('--epochs', type=int)
@click.option('--step-size', type=float)
@click.option('--step-decay', type=float)
@click.option('--threads', type=int, help='Worker threads for Polya-Gamma draws (default: all cores).')
@click.option('--deterministic/--no-deterministic', default=None,
              help='Make results independent of --threads.')
@click.option('--standardize/--no-standardize', 'standardize_values', default=None,
              help='Fit continuous data on zero-mean, unit-variance values (default: on).')
@click.option('--resume', type=click.Path(dir_okay=False), help='Continue a Gibbs checkpoint.')
@click.option('--checkpoint-every', type=int, help='Save a Gibbs checkpoint every N sweeps.')
def fit_cmd(data_path, engine, out_dir, config_path, standardize_values, **options):
    """Fit a Bayesian tensor ring model to DATA_PATH."""
    misplaced = GIBBS_ONLY if engine == 'online' else ONLINE_ONLY
    for name in misplaced:
        if options.get(name) is not None:
            raise InputError(f"--{name.replace('_', '-')} does not apply to the {engine} engine")

    file_values = read_config_file(config_path)
    inputs = [data_path] + [p for p in (config_path, options['resume']) if p]
    with track_run('fit', {'engine': engine, **{k: v for k, v in options.items() if v is not None}},
                   seed=options['seed'], inputs=inputs, manifest_dir=out_dir) as manifest:
        data = read_sparse(data_path)
        meta = {'kind': data.kind.value, 'y_mean': 0.0, 'y_std': 1.0, 'standardized': False}
        scaled = data
        if options['resume']:
            standardize_values = load_checkpoint(options['resume']).meta.get('standardized', False)
        elif standardize_values is None:
            standardize_values = not data.is_binary
        if standardize_values:
            scaled, mean, std = standardize(data)
            meta.update(y_mean=mean, y_std=std, standardized=True)
        paths = output_paths(out_dir, 'model.npz', 'rank_trace.txt', 'train_log.jsonl')
        fitter = _fit_gibbs if engine == 'gibbs' else _fit_online
        snapshot, predict = fitter(data, scaled, options, file_values, paths, meta)

        report = _train_metrics(predict, data, meta['y_mean'], meta['y_std'])
        metrics_path, = output_paths(out_dir, 'train_metrics.txt')
        with open(metrics_path, 'w', encoding='utf-8') as handle:
            handle.write(report.format() + '\n')
        manifest.config = {'engine': engine, **snapshot}
        manifest.outputs.extend(list(paths) + [metrics_path])
        manifest.extra.update({'estimated_ranks': meta['estimated_ranks'], 'train_metrics': report.to_dict()})
    click.echo(f"{engine}: estimated ranks {tuple(meta['estimated_ranks'])}")
    click.echo(report.format())
