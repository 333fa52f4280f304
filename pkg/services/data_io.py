"""
Synthetic data, the sparse tensor text format and dataset transforms.

File format (UTF-8, whitespace separated, indices 1-based):

    shape I1 I2 ... ID
    kind continuous|binary
    i1 i2 ... iD value
    ...
"""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit

from models import SparseTensor, TensorKind, TRModel
from services.errors import InputError, ParseError
from services.sampling import make_rng, sample_bernoulli
from services.tensor_ring import reconstruct_dense, random_model

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SyntheticSpec:
    shape: Tuple[int, ...] = (10, 10, 10, 10)
    true_rank: int = 5
    snr_db: float = 20.0
    missing_rate: float = 0.1
    kind: TensorKind = TensorKind.CONTINUOUS
    seed: int = 0
    logit_scale: float = 1.0

    def validate(self):
        if not self.shape or any(int(s) < 1 for s in self.shape):
            raise InputError(f"shape must list positive sizes, got {self.shape}")
        if self.true_rank < 1:
            raise InputError(f"true rank must be positive, got {self.true_rank}")
        if not 0.0 <= self.missing_rate < 1.0:
            raise InputError(f"missing rate must lie in [0, 1), got {self.missing_rate}")
        kind = TensorKind(self.kind)
        if kind is TensorKind.CONTINUOUS and self.snr_db is not None:
            if math.isnan(self.snr_db) or self.snr_db == -math.inf:
                raise InputError(f"SNR must be finite or +inf, got {self.snr_db}")
        if kind is TensorKind.BINARY and not self.logit_scale > 0:
            raise InputError(f"logit scale must be positive, got {self.logit_scale}")
        return self

    @property
    def noiseless(self) -> bool:
        return self.snr_db is None or self.snr_db == math.inf


@dataclass
class SyntheticDataset:
    """Generated train/test split plus the ground truth.

    The standardised signal equals eval_entries(truth) + offset everywhere.
    """

    train: SparseTensor
    test: SparseTensor
    truth: TRModel
    signal: np.ndarray
    offset: float = 0.0
    noise_std: float = 0.0
    extra: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.train, self.test, self.truth))


def all_indices(shape) -> np.ndarray:
    return np.indices(tuple(shape)).reshape(len(shape), -1).T


def generate_synthetic(spec: SyntheticSpec, max_entries: Optional[int] = None) -> SyntheticDataset:
    """Standard-normal TR cores, standardised signal, noise (or Bernoulli labels), uniform mask."""
    spec.validate()
    kind = TensorKind(spec.kind)
    shape = tuple(int(s) for s in spec.shape)
    rng = make_rng(spec.seed)

    raw = random_model(shape, spec.true_rank, rng)
    dense = reconstruct_dense(raw, max_entries)
    mean, std = float(dense.mean()), float(dense.std())
    if not std > 0:
        raise InputError("generated signal is constant; cannot standardise")
    gain = spec.logit_scale if kind is TensorKind.BINARY else 1.0
    signal = gain * (dense - mean) / std
    weights = list(raw.weights)
    weights[0] = weights[0] * (gain / std)
    truth = raw.replace(weights=weights)
    offset = -gain * mean / std

    flat = signal.reshape(-1)
    noise_std = 0.0
    if kind is TensorKind.BINARY:
        values = sample_bernoulli(rng, expit(flat))
    elif spec.noiseless:
        values = flat.copy()
    else:
        noise_std = math.sqrt(10.0 ** (-spec.snr_db / 10.0))
        values = flat + rng.normal(0.0, noise_std, size=flat.shape[0])

    observed = rng.random(flat.shape[0]) >= spec.missing_rate
    if not observed.any():
        raise InputError("mask removed every entry; lower the missing rate or enlarge the tensor")
    indices = all_indices(shape)
    train = SparseTensor(shape, indices[observed], values[observed], kind)
    test = SparseTensor(shape, indices[~observed], values[~observed], kind)
    logger.info("generated %s tensor %s: %d train, %d test entries", kind.value, shape, train.nnz, test.nnz)
    return SyntheticDataset(train, test, truth, signal, offset, noise_std)


def write_sparse(tensor: SparseTensor, path) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    binary = tensor.is_binary
    with open(path, 'w', encoding='utf-8') as handle:
        handle.write('shape ' + ' '.join(str(s) for s in tensor.shape) + '\n')
        handle.write(f'kind {tensor.kind.value}\n')
        for idx, value in zip(tensor.indices + 1, tensor.values):
            text = str(int(value)) if binary else repr(float(value))
            handle.write(' '.join(str(int(i)) for i in idx) + ' ' + text + '\n')


def read_sparse(path) -> SparseTensor:
    """Parse the sparse text format; errors carry the offending line number."""
    try:
        handle = open(path, 'r', encoding='utf-8')
    except OSError as exc:
        raise ParseError(f"cannot open file: {exc.strerror}", path) from exc
    with handle:
        lines = handle.read().splitlines()

    def header(lineno, keyword):
        if len(lines) < lineno or not lines[lineno - 1].split() or lines[lineno - 1].split()[0] != keyword:
            raise ParseError(f"expected a '{keyword}' header line", path, lineno)
        return lines[lineno - 1].split()[1:]

    try:
        shape = tuple(int(tok) for tok in header(1, 'shape'))
    except ValueError:
        raise ParseError("shape must list integers", path, 1)
    if not shape or any(s < 1 for s in shape):
        raise ParseError("shape must list positive sizes", path, 1)
    kind_tokens = header(2, 'kind')
    try:
        kind = TensorKind(kind_tokens[0] if len(kind_tokens) == 1 else '')
    except ValueError:
        raise ParseError("kind must be 'continuous' or 'binary'", path, 2)

    n_modes = len(shape)
    bounds = np.asarray(shape)
    indices, values, seen = [], [], {}
    for lineno, line in enumerate(lines[2:], start=3):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != n_modes + 1:
            raise ParseError(f"expected {n_modes} indices and a value, got {len(tokens)} fields", path, lineno)
        try:
            idx = tuple(int(tok) - 1 for tok in tokens[:n_modes])
            value = float(tokens[n_modes])
        except ValueError:
            raise ParseError("indices must be integers and the value a number", path, lineno)
        if any(i < 0 for i in idx) or any(i >= s for i, s in zip(idx, bounds)):
            raise ParseError(f"index {tuple(i + 1 for i in idx)} out of bounds for shape {shape}", path, lineno)
        if idx in seen:
            raise ParseError(f"duplicate index (first seen on line {seen[idx]})", path, lineno)
        if not math.isfinite(value):
            raise ParseError("value must be finite", path, lineno)
        if kind is TensorKind.BINARY and value not in (0.0, 1.0):
            raise ParseError(f"binary tensors only hold 0 or 1, got {tokens[n_modes]}", path, lineno)
        seen[idx] = lineno
        indices.append(idx)
        values.append(value)
    return SparseTensor(shape, np.array(indices, dtype=np.int64).reshape(len(indices), n_modes),
                        np.array(values), kind)


def split_train_test(tensor: SparseTensor, test_fraction: float, seed: int = 0):
    """Seeded random split of the observed entries."""
    if not 0.0 < test_fraction < 1.0:
        raise InputError(f"test fraction must lie in (0, 1), got {test_fraction}")
    mask = make_rng(seed).random(tensor.nnz) < test_fraction
    return tensor.subset(~mask), tensor.subset(mask)


def standardize(tensor: SparseTensor):
    """Zero-mean, unit-variance copy of a continuous tensor, plus (mean, std)."""
    if tensor.is_binary:
        raise InputError("binary tensors are not standardised")
    mean = float(tensor.values.mean()) if tensor.nnz else 0.0
    std = float(tensor.values.std()) if tensor.nnz else 1.0
    if not std > 0:
        std = 1.0
    return tensor.with_values((tensor.values - mean) / std), mean, std


def rebalance_binary(tensor: SparseTensor, seed: int = 0) -> SparseTensor:
    """Subsample the majority class so zeros and ones are equally frequent."""
    if not tensor.is_binary:
        raise InputError("only binary tensors can be rebalanced")
    rng = make_rng(seed)
    ones = np.flatnonzero(tensor.values > 0.5)
    zeros = np.flatnonzero(tensor.values <= 0.5)
    keep = min(ones.size, zeros.size)
    if keep == 0:
        raise InputError("rebalancing needs at least one zero and one one")
    rows = np.sort(np.concatenate([rng.choice(ones, keep, replace=False),
                                   rng.choice(zeros, keep, replace=False)]))
    return tensor.subset(rows)
