"""
Gibbs sampler for the weighted tensor ring with a multiplicative Gamma process
prior on the weights.

One sweep updates, in order: δ (shrinkage), λ (weights), the core tensors,
then τ for continuous data or the Pólya-Gamma variables ω for binary data,
and finally adapts the ranks (burn-in only).

Continuous and binary likelihoods share one code path through working
weights: every Gaussian conditional has precision prior + Σ w a² and mean
numerator Σ a (κ - w b), with (w, κ) = (τ, τ y) for continuous data and
(ω, y - 1/2) for binary data.
"""

import logging
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from scipy.special import expit

from models import SparseTensor, TRModel
from services.config import GibbsConfig, RankAdaptionConfig
from services.errors import InputError, ModeError, NumericalError
from services.sampling import make_rng, sample_bernoulli, sample_gamma, sample_pg_chunked
from services.tensor_ring import (check_indices, eval_entries, factor_magnitudes, grow_rank, prune_rank,
                                  random_model, subchains, weight_coefficients)

logger = logging.getLogger(__name__)

PG_CHUNK = 4096


@dataclass(frozen=True)
class MGPState:
    """Per-mode shrinkage variables δ^(d); φ^(d) is their running product."""

    delta: tuple

    def __post_init__(self):
        delta = tuple(np.array(d, dtype=np.float64).reshape(-1) for d in self.delta)
        for d, values in enumerate(delta):
            if not (values > 0).all():
                raise InputError(f"delta for mode {d} must be positive")
        object.__setattr__(self, 'delta', delta)

    @property
    def phi(self):
        return tuple(np.cumprod(d) for d in self.delta)

    @property
    def ranks(self):
        return tuple(d.shape[0] for d in self.delta)

    @classmethod
    def from_prior(cls, ranks: Sequence[int], a0: float, rng) -> 'MGPState':
        return cls(tuple(rng.gamma(a0, 1.0, size=int(r)) for r in ranks))


@dataclass(frozen=True)
class AugmentationState:
    """Noise precision τ (continuous data) or per-entry ω (binary data)."""

    tau: Optional[float] = None
    omega: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.tau is None) == (self.omega is None):
            raise InputError("exactly one of tau and omega must be set")
        if self.tau is not None and not self.tau > 0:
            raise InputError(f"tau must be positive, got {self.tau}")
        if self.omega is not None:
            omega = np.array(self.omega, dtype=np.float64).reshape(-1)
            if not (omega > 0).all():
                raise InputError("omega values must be positive")
            object.__setattr__(self, 'omega', omega)


@dataclass
class GibbsState:
    model: TRModel
    mgp: MGPState
    aug: AugmentationState
    iteration: int
    rng: np.random.Generator


@dataclass
class PosteriorSamples:
    models: List[TRModel] = field(default_factory=list)
    taus: List[float] = field(default_factory=list)
    rank_trace: List[tuple] = field(default_factory=list)
    log: List[dict] = field(default_factory=list)
    state: Optional[GibbsState] = None

    def estimated_ranks(self) -> tuple:
        """Per-mode posterior mode of the rank over retained samples."""
        traces = [m.ranks for m in self.models]
        if not traces:
            traces = [self.state.model.ranks] if self.state is not None else self.rank_trace[-1:]
        if not traces:
            raise InputError("no samples to estimate ranks from")
        return tuple(Counter(t[d] for t in traces).most_common(1)[0][0] for d in range(len(traces[0])))


def _working_response(aug: AugmentationState, data: SparseTensor):
    if data.is_binary:
        if aug.omega is None:
            raise ModeError("binary data needs Pólya-Gamma variables, not a noise precision")
        if aug.omega.shape[0] != data.nnz:
            raise InputError(f"{aug.omega.shape[0]} omegas for {data.nnz} observations")
        return aug.omega, data.values - 0.5
    if aug.tau is None:
        raise ModeError("continuous data needs a noise precision tau")
    return np.full(data.nnz, aug.tau), aug.tau * data.values


def delta_conditional(weights: np.ndarray, delta: np.ndarray, a0: float, r: int):
    """Shape and rate of the Gamma full conditional of δ_r (0-based r)."""
    rank = delta.shape[0]
    others = np.array(delta, dtype=np.float64)
    others[r] = 1.0
    partial = np.cumprod(others)[r:]
    shape = a0 + 0.5 * (rank - r)
    rate = 1.0 + 0.5 * np.sum(np.asarray(weights[r:]) ** 2 * partial)
    return shape, rate


def sample_delta(mgp: MGPState, model: TRModel, rng, a0: float = 2.0) -> MGPState:
    updated = []
    for d, delta in enumerate(mgp.delta):
        delta = np.array(delta)
        for r in range(delta.shape[0]):
            shape, rate = delta_conditional(model.weights[d], delta, a0, r)
            delta[r] = sample_gamma(rng, shape, rate)
        updated.append(delta)
    return MGPState(tuple(updated))


def sample_lambda(mgp: MGPState, aug: AugmentationState, model: TRModel, data: SparseTensor,
                  rng, modes: Optional[Sequence[int]] = None) -> TRModel:
    w, kappa = _working_response(aug, data)
    idx = data.indices
    weights = [np.array(lam) for lam in model.weights]
    phi = mgp.phi
    for d in range(model.ndim) if modes is None else modes:
        absorbed = [c * lam[None, None, :] for c, lam in zip(model.cores, weights)]
        coeff = weight_coefficients(model, d, idx, subchains(model, d, idx, cores=absorbed))
        lam = weights[d]
        x = coeff @ lam
        for r in range(lam.shape[0]):
            a = coeff[:, r]
            rest = x - a * lam[r]
            precision = phi[d][r] + np.dot(w, a * a)
            mean = np.dot(a, kappa - w * rest) / precision
            lam[r] = rng.normal(mean, 1.0 / np.sqrt(precision))
            x = rest + a * lam[r]
    return model.replace(weights=weights)


def sample_cores(aug: AugmentationState, model: TRModel, data: SparseTensor, rng,
                 psi: float = 1.0, modes: Optional[Sequence[int]] = None) -> TRModel:
    w, kappa = _working_response(aug, data)
    idx = data.indices
    cores = [np.array(c) for c in model.cores]
    for d in range(model.ndim) if modes is None else modes:
        absorbed = [c * lam[None, None, :] for c, lam in zip(cores, model.weights)]
        sub = subchains(model, d, idx, cores=absorbed)
        coeff = np.swapaxes(sub * model.weights[d][None, :, None], 1, 2)
        core = cores[d]
        rows = idx[:, d]
        size = core.shape[0]
        x = np.einsum('nab,nab->n', core[rows], coeff)
        for r in range(core.shape[1]):
            for s in range(core.shape[2]):
                c = coeff[:, r, s]
                rest = x - c * core[rows, r, s]
                t = np.bincount(rows, weights=w * c * c, minlength=size)
                num = np.bincount(rows, weights=c * (kappa - w * rest), minlength=size)
                precision = psi + t
                core[:, r, s] = rng.normal(num / precision, 1.0 / np.sqrt(precision))
                x = rest + c * core[rows, r, s]
        cores[d] = core
    return model.replace(cores=cores)


def sample_tau(aug: AugmentationState, model: TRModel, data: SparseTensor, rng,
               alpha0: float = 1.0, beta0: float = 0.3) -> AugmentationState:
    if data.is_binary:
        raise ModeError("tau is only sampled for continuous data")
    residual = data.values - eval_entries(model, data.indices) if data.nnz else np.empty(0)
    shape = alpha0 + 0.5 * data.nnz
    rate = beta0 + 0.5 * float(np.dot(residual, residual))
    if not np.isfinite(rate):
        raise NumericalError("non-finite residuals while sampling tau", {'rate': rate})
    return AugmentationState(tau=float(sample_gamma(rng, shape, rate)))


def sample_omega(aug: Optional[AugmentationState], model: TRModel, data: SparseTensor, rng,
                 threads: int = 1, deterministic: bool = True) -> AugmentationState:
    if not data.is_binary:
        raise ModeError("omega is only sampled for binary data")
    x = eval_entries(model, data.indices)
    if not np.isfinite(x).all():
        raise NumericalError("non-finite linear predictor while sampling omega")
    chunk = PG_CHUNK if deterministic else max(1, -(-data.nnz // max(1, threads)))
    return AugmentationState(omega=sample_pg_chunked(rng, x, chunk_size=chunk, threads=threads))


def _adapt(mgp: MGPState, model: TRModel, iteration: int, config: GibbsConfig, rng):
    adaption: RankAdaptionConfig = config.rank_adaption
    deltas = list(mgp.delta)
    events = []
    for d in range(model.ndim):
        magnitude = factor_magnitudes(model, d)
        small = np.flatnonzero(magnitude < adaption.epsilon)
        room = max(model.ranks[d] - adaption.min_rank, 0)
        doomed = small[np.argsort(magnitude[small], kind='stable')][:room]
        if doomed.size:
            for r in sorted(doomed, reverse=True):
                model = prune_rank(model, d, int(r))
                deltas[d] = np.delete(deltas[d], r)
            events.append({'mode': d, 'event': 'prune', 'count': int(doomed.size)})
            logger.debug("iteration %d: pruned %d factor(s) in mode %d", iteration, doomed.size, d)
            continue
        if model.ranks[d] >= adaption.max_rank:
            continue
        if rng.random() < adaption.grow_probability(iteration):
            new_delta = rng.gamma(config.a0, 1.0)
            phi_new = float(np.prod(deltas[d]) * new_delta)
            model = grow_rank(model, d, 1.0 / np.sqrt(config.psi), rng, weight_precision=phi_new)
            deltas[d] = np.append(deltas[d], new_delta)
            events.append({'mode': d, 'event': 'grow', 'count': 1})
            logger.debug("iteration %d: grew mode %d to rank %d", iteration, d, model.ranks[d])
    return model, MGPState(tuple(deltas)), events


def adapt_rank(mgp: MGPState, model: TRModel, iteration: int, config: GibbsConfig, rng):
    """Prune factors whose absorbed magnitude is below ε; otherwise grow with probability exp(κ0 + κ1 t)."""
    if not config.rank_adaption.enabled:
        return model, mgp
    model, mgp, _ = _adapt(mgp, model, iteration, config, rng)
    return model, mgp


def initial_state(data: SparseTensor, init: Union[TRModel, str, None], config: GibbsConfig) -> GibbsState:
    rng = make_rng(config.seed)
    if isinstance(init, TRModel):
        if init.shape != data.shape:
            raise InputError(f"initial model shape {init.shape} does not match data shape {data.shape}")
        model = init
        mgp = MGPState.from_prior(model.ranks, config.a0, rng)
    else:
        rank = config.init_rank
        if isinstance(init, str) and init.startswith('random(') and init.endswith(')'):
            rank = int(init[len('random('):-1])
        elif init not in (None, 'random'):
            raise InputError(f"unknown initialisation {init!r}")
        model = random_model(data.shape, rank, rng, scale=config.init_scale)
        mgp = MGPState.from_prior(model.ranks, config.a0, rng)
        weights = tuple(rng.normal(0.0, 1.0 / np.sqrt(phi)) for phi in mgp.phi)
        model = model.replace(weights=weights)
    if data.is_binary:
        aug = sample_omega(None, model, data, rng, config.threads, config.deterministic)
    else:
        aug = AugmentationState(tau=1.0)
    return GibbsState(model, mgp, aug, 0, rng)


def gibbs_sweep(state: GibbsState, data: SparseTensor, config: GibbsConfig, adapt: bool = True) -> list:
    """One sweep in place on `state`; returns the rank adaption events."""
    rng = state.rng
    state.mgp = sample_delta(state.mgp, state.model, rng, config.a0)
    state.model = sample_lambda(state.mgp, state.aug, state.model, data, rng)
    state.model = sample_cores(state.aug, state.model, data, rng, config.psi)
    if data.is_binary:
        state.aug = sample_omega(state.aug, state.model, data, rng, config.threads, config.deterministic)
    else:
        state.aug = sample_tau(state.aug, state.model, data, rng, config.alpha0, config.beta0)
    events = []
    if adapt and config.rank_adaption.enabled:
        state.model, state.mgp, events = _adapt(state.mgp, state.model, state.iteration, config, rng)
    state.iteration += 1
    return events


def run_gibbs(data: SparseTensor, init: Union[TRModel, str, None] = None, config: GibbsConfig = None,
              resume: Optional[PosteriorSamples] = None,
              on_sweep: Optional[Callable[[PosteriorSamples], None]] = None) -> PosteriorSamples:
    """Burn in, then collect every `thin`-th model for `n_samples` draws.

    Ranks adapt during burn-in only. Passing a previous result (for example a
    loaded checkpoint) as `resume` continues that chain bit-exactly.
    """
    config = (config or GibbsConfig()).validate()
    if data.nnz == 0:
        raise InputError("cannot fit an empty tensor")
    if resume is not None:
        samples = resume
        if samples.state is None:
            raise InputError("resume needs the live sampler state")
    else:
        samples = PosteriorSamples(state=initial_state(data, init, config))
    state = samples.state
    total = config.burn_in + config.n_samples * config.thin
    started = time.perf_counter()

    while state.iteration < total:
        t = state.iteration
        events = gibbs_sweep(state, data, config, adapt=t < config.burn_in)
        fitted = eval_entries(state.model, data.indices)
        if data.is_binary:
            residual = data.values - expit(fitted)
        else:
            residual = data.values - fitted
        residual_norm = float(np.sqrt(np.mean(residual ** 2)))
        if not np.isfinite(residual_norm):
            raise NumericalError("Gibbs chain diverged", {'iteration': t + 1, 'ranks': state.model.ranks})
        samples.rank_trace.append(state.model.ranks)
        samples.log.append({
            'iteration': t + 1,
            'ranks': list(state.model.ranks),
            'residual_rms': residual_norm,
            'tau': state.aug.tau,
            'grown': sum(e['count'] for e in events if e['event'] == 'grow'),
            'pruned': sum(e['count'] for e in events if e['event'] == 'prune'),
        })
        if t >= config.burn_in and (t - config.burn_in + 1) % config.thin == 0:
            samples.models.append(state.model)
            if state.aug.tau is not None:
                samples.taus.append(state.aug.tau)
        if config.log_every and (t + 1) % config.log_every == 0:
            logger.info("sweep %d/%d ranks=%s residual_rms=%.4g tau=%s (%.1fs)", t + 1, total,
                        state.model.ranks, residual_norm,
                        f"{state.aug.tau:.4g}" if state.aug.tau is not None else '-',
                        time.perf_counter() - started)
        if on_sweep is not None:
            on_sweep(samples)
    return samples


def posterior_mean(models: Sequence[TRModel], indices) -> np.ndarray:
    """Average of the linear predictor over retained samples."""
    if not models:
        raise InputError("no retained samples")
    idx = check_indices(models[0].shape, indices)
    return np.mean([eval_entries(m, idx) for m in models], axis=0)


def posterior_probability(models: Sequence[TRModel], indices) -> np.ndarray:
    """Posterior predictive P(y = 1): the sample average of sigmoid(x)."""
    if not models:
        raise InputError("no retained samples")
    idx = check_indices(models[0].shape, indices)
    return np.mean([expit(eval_entries(m, idx)) for m in models], axis=0)


# Joint-distribution checks: forward simulation vs successive conditionals.

def forward_sample(shape, ranks, indices, binary: bool, config: GibbsConfig, rng):
    """Draw (model, δ, τ or ω, data) from the joint prior and likelihood."""
    mgp = MGPState.from_prior(ranks, config.a0, rng)
    cores = random_model(shape, ranks, rng, scale=1.0 / np.sqrt(config.psi)).cores
    weights = tuple(rng.normal(0.0, 1.0 / np.sqrt(phi)) for phi in mgp.phi)
    model = TRModel(cores, weights)
    data = redraw_data(model, indices, binary, None, rng, config)
    if binary:
        aug = sample_omega(None, model, data[0], rng)
    else:
        aug = AugmentationState(tau=data[1])
    return model, mgp, aug, data[0]


def redraw_data(model: TRModel, indices, binary: bool, tau: Optional[float], rng, config: GibbsConfig):
    """Fresh observations at `indices` given the parameters.

    Returns (data, tau); tau is drawn from its prior when not given.
    """
    x = eval_entries(model, indices)
    if binary:
        y = sample_bernoulli(rng, expit(x))
        return SparseTensor(model.shape, indices, y, 'binary'), None
    if tau is None:
        tau = float(rng.gamma(config.alpha0, 1.0 / config.beta0))
    y = x + rng.normal(0.0, 1.0 / np.sqrt(tau), size=x.shape[0])
    return SparseTensor(model.shape, indices, y, 'continuous'), tau


def successive_conditional(shape, ranks, indices, binary: bool, config: GibbsConfig, rng,
                           rounds: int, statistic: Callable[[GibbsState], Sequence[float]]) -> np.ndarray:
    """Alternate one Gibbs sweep (no adaption) with a data redraw.

    Returns `statistic` evaluated after every round, shape (rounds, k).
    """
    model, mgp, aug, data = forward_sample(shape, ranks, indices, binary, config, rng)
    state = GibbsState(model, mgp, aug, 0, rng)
    out = []
    for _ in range(rounds):
        gibbs_sweep(state, data, config, adapt=False)
        data, _ = redraw_data(state.model, indices, binary, state.aug.tau, rng, config)
        if binary:
            state.aug = sample_omega(state.aug, state.model, data, rng)
        out.append(statistic(state))
    return np.asarray(out, dtype=np.float64)
