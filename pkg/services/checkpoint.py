"""
Checkpoints: a numpy `.npz` archive with a JSON header.

Arrays are stored under flat keys (`model__3__core__0`, `state__delta__1`,
...). The header records the engine, sampler counters, rank trace, the
PCG64 bit-generator state and free-form metadata, so a Gibbs chain reloaded
from a checkpoint continues exactly where it stopped.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from models import TRModel
from services.errors import ParseError
from services.gibbs import AugmentationState, GibbsState, MGPState, PosteriorSamples

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    engine: str
    models: List[TRModel]
    samples: Optional[PosteriorSamples] = None
    config: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.models[0].shape


def _put_model(arrays: dict, prefix: str, model: TRModel):
    for d, (core, weight) in enumerate(zip(model.cores, model.weights)):
        arrays[f'{prefix}__core__{d}'] = core
        arrays[f'{prefix}__weight__{d}'] = weight


def _get_model(archive, prefix: str, n_modes: int) -> TRModel:
    return TRModel(tuple(archive[f'{prefix}__core__{d}'] for d in range(n_modes)),
                   tuple(archive[f'{prefix}__weight__{d}'] for d in range(n_modes)))


def save_checkpoint(path, models: List[TRModel], engine: str, samples: Optional[PosteriorSamples] = None,
                    config: dict = None, meta: dict = None) -> None:
    if not models and (samples is None or samples.state is None):
        raise ValueError("nothing to checkpoint")
    arrays = {}
    for s, model in enumerate(models):
        _put_model(arrays, f'model__{s}', model)
    header = {
        'format_version': FORMAT_VERSION,
        'engine': engine,
        'n_models': len(models),
        'n_modes': (models[0] if models else samples.state.model).ndim,
        'config': config or {},
        'meta': meta or {},
        'state': None,
    }
    if samples is not None:
        header['rank_trace'] = [list(r) for r in samples.rank_trace]
        header['taus'] = list(samples.taus)
        header['log'] = samples.log
        state = samples.state
        if state is not None:
            _put_model(arrays, 'state', state.model)
            for d, delta in enumerate(state.mgp.delta):
                arrays[f'state__delta__{d}'] = delta
            if state.aug.omega is not None:
                arrays['state__omega'] = state.aug.omega
            header['state'] = {
                'iteration': state.iteration,
                'tau': state.aug.tau,
                'rng': state.rng.bit_generator.state,
            }
    arrays['header'] = np.array(json.dumps(header))
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'wb') as handle:
        np.savez_compressed(handle, **arrays)
    logger.debug("wrote %s checkpoint with %d model(s) to %s", engine, len(models), path)


def load_checkpoint(path) -> Checkpoint:
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise ParseError(f"not a readable checkpoint: {exc}", path) from exc
    with archive:
        if 'header' not in archive.files:
            raise ParseError("checkpoint has no header", path)
        header = json.loads(str(archive['header']))
        if header.get('format_version') != FORMAT_VERSION:
            raise ParseError(f"unsupported checkpoint version {header.get('format_version')}", path)
        n_modes = header['n_modes']
        models = [_get_model(archive, f'model__{s}', n_modes) for s in range(header['n_models'])]
        samples = None
        if 'rank_trace' in header:
            samples = PosteriorSamples(
                models=list(models),
                taus=list(header['taus']),
                rank_trace=[tuple(r) for r in header['rank_trace']],
                log=list(header['log']),
            )
            live = header.get('state')
            if live is not None:
                rng = np.random.Generator(np.random.PCG64())
                rng.bit_generator.state = live['rng']
                model = _get_model(archive, 'state', n_modes)
                mgp = MGPState(tuple(archive[f'state__delta__{d}'] for d in range(n_modes)))
                if live['tau'] is not None:
                    aug = AugmentationState(tau=live['tau'])
                else:
                    aug = AugmentationState(omega=archive['state__omega'])
                samples.state = GibbsState(model, mgp, aug, live['iteration'], rng)
    if not models and samples is not None and samples.state is not None:
        models = [samples.state.model]
    return Checkpoint(header['engine'], models, samples, header.get('config', {}), header.get('meta', {}))
