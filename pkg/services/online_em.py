"""
Online variational Bayes EM.

The E-step keeps closed-form variational factors for the shrinkage variables
δ (Gamma), the Pólya-Gamma variables ω (binary data) and the noise precision
τ (continuous data). The M-step takes one adaptive first-order ascent step on
the cores and weights using the mini-batch estimate of the free energy,
scaled by |Ω| / |batch| so the data term is unbiased.

Gradients are analytic: x_i is affine in every weight and every core entry,
with the same coefficients the Gibbs sampler uses.
"""

import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, TextIO

import numpy as np
from scipy.special import digamma, gammaln

from models import SparseTensor, TRModel
from services.config import OnlineConfig
from services.errors import InputError, NumericalError
from services.gibbs import delta_conditional
from services.sampling import make_rng, pg_mean
from services.tensor_ring import (absorbed_cores, eval_entries, matched_core_scale, random_model, subchains,
                                  weight_coefficients)

logger = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)


class AdamAscent:
    """Per-coordinate adaptive ascent (Adam moments with bias correction)."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.steps = 0
        self.first = None
        self.second = None

    def step(self, params: List[np.ndarray], grads: List[np.ndarray], lr: float) -> List[np.ndarray]:
        if self.first is None or any(m.shape != g.shape for m, g in zip(self.first, grads)):
            self.first = [np.zeros_like(g) for g in grads]
            self.second = [np.zeros_like(g) for g in grads]
            self.steps = 0
        self.steps += 1
        correction1 = 1.0 - self.beta1 ** self.steps
        correction2 = 1.0 - self.beta2 ** self.steps
        updated = []
        for k, (p, g) in enumerate(zip(params, grads)):
            self.first[k] = self.beta1 * self.first[k] + (1.0 - self.beta1) * g
            self.second[k] = self.beta2 * self.second[k] + (1.0 - self.beta2) * g * g
            m_hat = self.first[k] / correction1
            v_hat = self.second[k] / correction2
            updated.append(p + lr * m_hat / (np.sqrt(v_hat) + self.eps))
        return updated


@dataclass
class VariationalState:
    e_delta: tuple
    delta_rate: tuple
    e_omega: Optional[np.ndarray] = None
    tau_shape: Optional[float] = None
    tau_rate: Optional[float] = None
    tau_sse: Optional[float] = None
    epoch_sse: float = 0.0
    epoch_count: int = 0
    epochs_folded: int = 0
    free_energy_trace: List[float] = field(default_factory=list)
    optimizer: AdamAscent = field(default_factory=AdamAscent)

    def __post_init__(self):
        for d, values in enumerate(self.e_delta):
            if not (np.asarray(values) > 0).all():
                raise InputError(f"expected delta for mode {d} must be positive")
        if self.e_omega is not None and not (np.asarray(self.e_omega) > 0).all():
            raise InputError("expected omega values must be positive")

    @property
    def e_phi(self):
        # E[φ_r] = Π_{l<=r} E[δ_l] under independent Gamma factors
        return tuple(np.cumprod(d) for d in self.e_delta)

    @property
    def e_tau(self) -> Optional[float]:
        if self.tau_shape is None:
            return None
        return self.tau_shape / self.tau_rate

    def delta_shapes(self, a0: float):
        return tuple(a0 + 0.5 * (len(d) - np.arange(len(d))) for d in self.e_delta)


def initial_variational_state(ranks: Sequence[int], data: SparseTensor, config: OnlineConfig, rng):
    delta = tuple(rng.gamma(config.a0, 1.0, size=r) for r in ranks)
    state = VariationalState(
        e_delta=delta,
        delta_rate=tuple(np.ones(r) for r in ranks),
        optimizer=AdamAscent(config.beta1, config.beta2, config.adam_eps),
    )
    if not data.is_binary:
        state.tau_shape = config.alpha0 + 0.5 * data.nnz
        state.tau_rate = state.tau_shape
    return state


def e_step(model: TRModel, batch: SparseTensor, state: VariationalState, config: OnlineConfig = None,
           scale: Optional[float] = None) -> VariationalState:
    """Closed-form expectations for δ, and for ω or τ on this batch.

    τ uses the forgotten statistic of finished epochs blended with the running
    mean squared residual of the current one; `end_epoch` folds the epoch in.
    """
    config = config or OnlineConfig()
    if batch.nnz == 0:
        raise InputError("E-step needs a non-empty batch")
    e_delta, rates = [], []
    for d, delta in enumerate(state.e_delta):
        delta = np.array(delta, dtype=np.float64)
        rate = np.ones_like(delta)
        for r in range(delta.shape[0]):
            shape, rate[r] = delta_conditional(model.weights[d], delta, config.a0, r)
            delta[r] = shape / rate[r]
        e_delta.append(delta)
        rates.append(rate)

    new = replace(state, e_delta=tuple(e_delta), delta_rate=tuple(rates))
    x = eval_entries(model, batch.indices)
    if batch.is_binary:
        new.e_omega = np.asarray(pg_mean(x), dtype=np.float64).reshape(-1)
    else:
        new.e_omega = None
        scale = 1.0 if scale is None else scale
        total = scale * batch.nnz
        new.epoch_sse = state.epoch_sse + float(np.sum((batch.values - x) ** 2))
        new.epoch_count = state.epoch_count + batch.nnz
        current = total * new.epoch_sse / new.epoch_count
        if state.tau_sse is not None:
            current = config.tau_decay * state.tau_sse + (1.0 - config.tau_decay) * current
        new.tau_shape = config.alpha0 + 0.5 * total
        new.tau_rate = config.beta0 + 0.5 * current
    return new


def end_epoch(state: VariationalState, config: OnlineConfig = None) -> VariationalState:
    """Fold the finished epoch's residuals into the τ statistic, forgetting by tau_decay once."""
    config = config or OnlineConfig()
    new = replace(state, epoch_sse=0.0, epoch_count=0, epochs_folded=state.epochs_folded + 1)
    if state.epoch_count:
        if state.tau_sse is None:
            new.tau_sse = state.epoch_sse
        else:
            new.tau_sse = config.tau_decay * state.tau_sse + (1.0 - config.tau_decay) * state.epoch_sse
    return new


def _data_gradient_weights(model: TRModel, batch: SparseTensor, state: VariationalState, x=None):
    """d(data term)/dx_i for every batch entry, before scaling."""
    x = eval_entries(model, batch.indices) if x is None else x
    if batch.is_binary:
        if state.e_omega is None or state.e_omega.shape[0] != batch.nnz:
            raise InputError("run the E-step on this batch before using it")
        return (batch.values - 0.5) - state.e_omega * x
    return state.e_tau * (batch.values - x)


def free_energy(model: TRModel, batch: SparseTensor, state: VariationalState, scale: float,
                config: OnlineConfig = None) -> float:
    """Mini-batch estimate of the expected complete-data log joint.

    The binary data term drops constants in ω: Σ (y - 1/2) x - E[ω] x² / 2.
    """
    config = config or OnlineConfig()
    value = 0.0
    if batch.nnz:
        x = eval_entries(model, batch.indices)
        if batch.is_binary:
            if state.e_omega is None or state.e_omega.shape[0] != batch.nnz:
                raise InputError("run the E-step on this batch before using it")
            data_term = np.sum((batch.values - 0.5) * x - 0.5 * state.e_omega * x * x)
        else:
            e_log_tau = digamma(state.tau_shape) - math.log(state.tau_rate)
            data_term = np.sum(-0.5 * state.e_tau * (batch.values - x) ** 2 + 0.5 * (e_log_tau - _LOG_2PI))
        value += scale * float(data_term)

    psi = config.psi
    for core in model.cores:
        value += -0.5 * psi * float(np.sum(core * core)) + 0.5 * core.size * (math.log(psi) - _LOG_2PI)

    shapes = state.delta_shapes(config.a0)
    for d, lam in enumerate(model.weights):
        e_log_delta = digamma(shapes[d]) - np.log(state.delta_rate[d])
        e_log_phi = np.cumsum(e_log_delta)
        value += float(np.sum(0.5 * e_log_phi - 0.5 * _LOG_2PI - 0.5 * state.e_phi[d] * lam * lam))
        value += float(np.sum((config.a0 - 1.0) * e_log_delta - state.e_delta[d] - gammaln(config.a0)))

    if not batch.is_binary and state.tau_shape is not None:
        e_log_tau = digamma(state.tau_shape) - math.log(state.tau_rate)
        value += ((config.alpha0 - 1.0) * e_log_tau - config.beta0 * state.e_tau
                  + config.alpha0 * math.log(config.beta0) - gammaln(config.alpha0))
    return value


def free_energy_gradient(model: TRModel, batch: SparseTensor, state: VariationalState, scale: float,
                         config: OnlineConfig = None):
    """Analytic gradients (core_grads, weight_grads) of `free_energy`."""
    config = config or OnlineConfig()
    core_grads = [-config.psi * core for core in model.cores]
    weight_grads = [-phi * lam for phi, lam in zip(state.e_phi, model.weights)]
    if batch.nnz == 0 or scale == 0:
        return core_grads, weight_grads

    idx = batch.indices
    g = scale * _data_gradient_weights(model, batch, state)
    absorbed = absorbed_cores(model)
    for d in range(model.ndim):
        sub = subchains(model, d, idx, cores=absorbed)
        weight_grads[d] = weight_grads[d] + weight_coefficients(model, d, idx, sub).T @ g
        coeff = np.swapaxes(sub * model.weights[d][None, :, None], 1, 2)
        data_grad = np.zeros_like(model.cores[d])
        np.add.at(data_grad, idx[:, d], g[:, None, None] * coeff)
        core_grads[d] = core_grads[d] + data_grad
    return core_grads, weight_grads


def m_step(model: TRModel, batch: SparseTensor, state: VariationalState, config: OnlineConfig = None,
           scale: Optional[float] = None, step_size: Optional[float] = None) -> TRModel:
    config = config or OnlineConfig()
    scale = 1.0 if scale is None else scale
    step_size = config.step_size if step_size is None else step_size
    core_grads, weight_grads = free_energy_gradient(model, batch, state, scale, config)
    grads = core_grads + weight_grads
    if not all(np.isfinite(g).all() for g in grads):
        norms = {f"block{k}": float(np.linalg.norm(np.nan_to_num(g, nan=0.0, posinf=0.0, neginf=0.0)))
                 for k, g in enumerate(grads)}
        bad = [k for k, g in enumerate(grads) if not np.isfinite(g).all()]
        raise NumericalError("non-finite gradient in M-step",
                             {'blocks': bad, 'step': state.optimizer.steps, **norms})
    params = [np.array(c) for c in model.cores] + [np.array(w) for w in model.weights]
    updated = state.optimizer.step(params, grads, step_size)
    n_modes = model.ndim
    return TRModel(tuple(updated[:n_modes]), tuple(updated[n_modes:]))


def run_online(data: SparseTensor, config: OnlineConfig = None, log_stream: Optional[TextIO] = None,
               init: Optional[TRModel] = None):
    """Epoch-wise shuffled mini-batches of (E-step, M-step).

    Writes one JSON record per iteration to `log_stream` when given.
    """
    config = (config or OnlineConfig()).validate()
    n_obs = data.nnz
    if n_obs == 0:
        raise InputError("cannot fit an empty tensor")
    batch_size = config.batch_size
    if batch_size > n_obs:
        logger.warning("batch size %d exceeds %d observations; using full batches", batch_size, n_obs)
        batch_size = n_obs

    rng = make_rng(config.seed)
    if init is None:
        scale = config.init_scale
        if scale is None:
            second_moment = 1.0 if data.is_binary else float(np.mean(data.values ** 2))
            scale = matched_core_scale(len(data.shape), config.rank, second_moment or 1.0)
        model = random_model(data.shape, config.rank, rng, scale=scale)
    else:
        model = init
    state = initial_variational_state(model.ranks, data, config, rng)

    n_batches = -(-n_obs // batch_size)
    iteration = 0
    started = time.perf_counter()
    for epoch in range(config.epochs):
        order = rng.permutation(n_obs)
        for b in range(n_batches):
            rows = order[b * batch_size:(b + 1) * batch_size]
            batch = data.subset(rows)
            scale = n_obs / rows.shape[0]
            step = config.step_at(iteration)
            state = e_step(model, batch, state, config, scale)
            energy = free_energy(model, batch, state, scale, config)
            state.free_energy_trace.append(energy)
            model = m_step(model, batch, state, config, scale, step)
            if log_stream is not None:
                log_stream.write(json.dumps({
                    'iteration': iteration + 1,
                    'epoch': epoch + 1,
                    'free_energy': energy,
                    'step_size': step,
                    'wall_time': round(time.perf_counter() - started, 6),
                }) + '\n')
            iteration += 1
        state = end_epoch(state, config)
        if (epoch + 1) % max(1, config.epochs // 10) == 0:
            logger.info("epoch %d/%d free_energy=%.6g (%.1fs)", epoch + 1, config.epochs,
                        state.free_energy_trace[-1], time.perf_counter() - started)
    return model, state


def select_online_rank(data: SparseTensor, config: OnlineConfig = None, candidates=(3, 5, 10),
                       holdout: float = 0.2):
    """Pick the rank with the best hold-out score on a seeded split of `data`."""
    from services.metrics import compute_metrics

    config = config or OnlineConfig()
    rng = make_rng(config.seed)
    mask = rng.random(data.nnz) < holdout
    if mask.all() or not mask.any():
        raise InputError("hold-out split left one side empty; need more observations")
    train, valid = data.subset(~mask), data.subset(mask)
    scores = {}
    for rank in candidates:
        model, _ = run_online(train, replace(config, rank=int(rank)))
        pred = eval_entries(model, valid.indices)
        report = compute_metrics(pred, valid, logits=True)
        scores[int(rank)] = report.auc if valid.is_binary else -report.rmse
        logger.info("rank %d hold-out score %.4f", rank, scores[int(rank)])
    best = max(scores, key=scores.get)
    return best, scores
