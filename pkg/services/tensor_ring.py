"""
Tensor ring algebra.

A weighted tensor ring stores D cores G^(d) of shape (I_d, R_{d-1}, R_d) and
weight vectors λ^(d) sitting on the output bond of each core. An entry is

    x_i = tr(G^(1),i1 Λ^(1) G^(2),i2 Λ^(2) ... G^(D),iD Λ^(D))

All functions here are pure: they never modify the model they are given.
Batched variants take an (N, D) integer array of indices and evaluate every
observation with one chain of batched matrix products.
"""

import logging
from typing import Optional, Sequence

import numpy as np

from models import TRModel
from services.config import get_settings
from services.errors import CapacityError, InputError

logger = logging.getLogger(__name__)


def random_model(shape: Sequence[int], ranks, rng: np.random.Generator,
                 scale: float = 1.0, weights=None) -> TRModel:
    """Cores with i.i.d. N(0, scale^2) entries; weights default to ones."""
    shape = [int(s) for s in shape]
    if np.isscalar(ranks):
        ranks = [int(ranks)] * len(shape)
    ranks = [int(r) for r in ranks]
    if len(ranks) != len(shape):
        raise InputError(f"need {len(shape)} ranks, got {len(ranks)}")
    if any(r < 1 for r in ranks):
        raise InputError(f"ranks must be positive, got {ranks}")
    cores = [rng.normal(0.0, scale, size=(shape[d], ranks[d - 1], ranks[d]))
             for d in range(len(shape))]
    if weights is None:
        weights = [np.ones(r) for r in ranks]
    return TRModel(tuple(cores), tuple(weights))


def matched_core_scale(ndim: int, rank: int, second_moment: float = 1.0) -> float:
    """Core entry std giving unit-weight ring entries the requested second moment.

    With i.i.d. N(0, s^2) core entries an entry has variance R^D s^(2D).
    """
    if not second_moment > 0:
        raise InputError(f"second moment must be positive, got {second_moment}")
    return float(np.sqrt(second_moment ** (1.0 / ndim) / rank))


def check_indices(model_shape: Sequence[int], indices) -> np.ndarray:
    """Coerce to an (N, D) int array and reject out-of-range components."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim == 1:
        idx = idx.reshape(1, -1)
    shape = np.asarray(model_shape, dtype=np.int64)
    if idx.ndim != 2 or idx.shape[1] != shape.shape[0]:
        raise InputError(f"indices must have {shape.shape[0]} components, got array of shape {idx.shape}")
    if idx.size and ((idx < 0) | (idx >= shape)).any():
        bad = np.flatnonzero(((idx < 0) | (idx >= shape)).any(axis=1))[0]
        raise InputError(f"index {tuple(int(i) for i in idx[bad])} out of bounds for shape {tuple(model_shape)}")
    return idx


def absorbed_cores(model: TRModel):
    """Cores with their weights folded into the output bond: G~ = G Λ."""
    return [core * weight[None, None, :] for core, weight in zip(model.cores, model.weights)]


def absorb_weights(model: TRModel) -> TRModel:
    return TRModel(tuple(absorbed_cores(model)), tuple(np.ones_like(w) for w in model.weights))


def eval_entries(model: TRModel, indices) -> np.ndarray:
    idx = check_indices(model.shape, indices)
    cores = absorbed_cores(model)
    chain = cores[0][idx[:, 0]]
    for d in range(1, model.ndim):
        chain = chain @ cores[d][idx[:, d]]
    return np.trace(chain, axis1=1, axis2=2)


def eval_entry(model: TRModel, index) -> float:
    return float(eval_entries(model, [tuple(index)])[0])


def subchains(model: TRModel, mode: int, indices, cores=None) -> np.ndarray:
    """Products G~^(d+1) ... G~^(d-1) for every index, shape (N, R_d, R_{d-1}).

    `cores` may pass precomputed absorbed cores to skip the weight scaling.
    """
    n_modes = model.ndim
    if not 0 <= mode < n_modes:
        raise InputError(f"mode {mode} out of range for a {n_modes}-mode model")
    idx = check_indices(model.shape, indices)
    cores = absorbed_cores(model) if cores is None else cores
    if n_modes == 1:
        rank = model.ranks[0]
        return np.broadcast_to(np.eye(rank), (idx.shape[0], rank, rank)).copy()
    first = (mode + 1) % n_modes
    chain = cores[first][idx[:, first]]
    for step in range(2, n_modes):
        k = (mode + step) % n_modes
        chain = chain @ cores[k][idx[:, k]]
    return chain


def subchain_slice(model: TRModel, mode: int, index) -> np.ndarray:
    return subchains(model, mode, [tuple(index)])[0]


def weight_coefficients(model: TRModel, mode: int, indices, subchain=None) -> np.ndarray:
    """Slopes a_i^r of x_i as an affine function of λ^(mode)_r, shape (N, R_d).

    x_i = sum_r a_i^r λ_r, so the intercept for factor r is x_i - a_i^r λ_r.
    """
    idx = check_indices(model.shape, indices)
    if subchain is None:
        subchain = subchains(model, mode, idx)
    raw = model.cores[mode][idx[:, mode]]
    return np.einsum('nab,nba->na', subchain, raw)


def core_coefficients(model: TRModel, mode: int, indices, subchain=None) -> np.ndarray:
    """Slopes c_i of x_i in each entry of the core slice G^(mode),i_mode.

    Returned with the slice's own shape (N, R_{d-1}, R_d):
    x_i = sum_{r,r'} G_{r r'} C_i[r, r'] with C_i = (Λ^(d) S_i)^T.
    """
    if subchain is None:
        subchain = subchains(model, mode, indices)
    scaled = subchain * model.weights[mode][None, :, None]
    return np.swapaxes(scaled, 1, 2)


def factor_magnitudes(model: TRModel, mode: int) -> np.ndarray:
    """|λ_r| times the rms of the core column and row factor r connects, shape (R_d,).

    Moving scale between λ_r and either core leaves the value unchanged.
    """
    nxt = (mode + 1) % model.ndim
    column = np.sqrt(np.mean(model.cores[mode] ** 2, axis=(0, 1)))
    row = np.sqrt(np.mean(model.cores[nxt] ** 2, axis=(0, 2)))
    return np.abs(model.weights[mode]) * column * row


def reconstruct_dense(model: TRModel, max_entries: Optional[int] = None) -> np.ndarray:
    limit = get_settings().max_dense_entries if max_entries is None else int(max_entries)
    size = int(np.prod(model.shape, dtype=np.float64))
    if size > limit:
        raise CapacityError(f"dense reconstruction of shape {model.shape} has {size} entries, limit is {limit}")
    cores = absorbed_cores(model)
    # (R_start, prod(I so far), R_current)
    acc = np.transpose(cores[0], (1, 0, 2))
    for core in cores[1:]:
        acc = np.einsum('aib,jbc->aijc', acc, core)
        acc = acc.reshape(acc.shape[0], -1, acc.shape[-1])
    dense = np.einsum('aia->i', acc)
    return dense.reshape(model.shape)


def rotate(model: TRModel, k: int) -> TRModel:
    """Cyclic shift so that mode k becomes mode 0.

    Entry (i_k, ..., i_{D-1}, i_0, ..., i_{k-1}) of the result equals entry
    (i_0, ..., i_{D-1}) of the input.
    """
    k %= model.ndim
    return TRModel(model.cores[k:] + model.cores[:k], model.weights[k:] + model.weights[:k])


def grow_rank(model: TRModel, mode: int, init_scale: float, rng: np.random.Generator,
              weight: Optional[float] = None, weight_precision: float = 1.0) -> TRModel:
    """Append one factor to the output bond of `mode`.

    The new column of core `mode` and new row of the next core are drawn from
    N(0, init_scale^2). The new weight is `weight` if given, otherwise a draw
    from N(0, 1 / weight_precision).
    """
    if not init_scale > 0:
        raise InputError(f"init_scale must be positive, got {init_scale}")
    if not weight_precision > 0:
        raise InputError(f"weight_precision must be positive, got {weight_precision}")
    n_modes = model.ndim
    cores = [np.array(c) for c in model.cores]
    weights = [np.array(w) for w in model.weights]

    size, rank_in, _ = cores[mode].shape
    cores[mode] = np.concatenate([cores[mode], rng.normal(0.0, init_scale, (size, rank_in, 1))], axis=2)
    nxt = (mode + 1) % n_modes
    size, _, rank_out = cores[nxt].shape
    cores[nxt] = np.concatenate([cores[nxt], rng.normal(0.0, init_scale, (size, 1, rank_out))], axis=1)

    if weight is None:
        weight = rng.normal(0.0, 1.0 / np.sqrt(weight_precision))
    weights[mode] = np.append(weights[mode], float(weight))
    return TRModel(tuple(cores), tuple(weights))


def prune_rank(model: TRModel, mode: int, factor: int) -> TRModel:
    """Remove factor `factor` from the output bond of `mode`."""
    rank = model.ranks[mode]
    if rank < 2:
        raise InputError(f"cannot prune mode {mode} below rank 1")
    if not 0 <= factor < rank:
        raise InputError(f"factor {factor} out of range for rank {rank}")
    cores = [np.array(c) for c in model.cores]
    weights = [np.array(w) for w in model.weights]
    cores[mode] = np.delete(cores[mode], factor, axis=2)
    nxt = (mode + 1) % model.ndim
    cores[nxt] = np.delete(cores[nxt], factor, axis=1)
    weights[mode] = np.delete(weights[mode], factor)
    return TRModel(tuple(cores), tuple(weights))
