"""
Seeded random number generation and the samplers the engines need.

The Rng type is numpy's PCG64 `Generator`; nothing here touches global random
state. Parallel workers get independent child streams spawned from one
`SeedSequence` draw of the parent generator.

Pólya-Gamma PG(1, c) draws come from the `polyagamma` package (Devroye's exact
method). The truncated sum-of-Gammas construction is kept as an independent
oracle.
"""

import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from polyagamma import random_polyagamma

from services.errors import InputError

logger = logging.getLogger(__name__)

Rng = np.random.Generator

_PI2 = np.pi ** 2


def make_rng(seed) -> Rng:
    return np.random.Generator(np.random.PCG64(seed))


def spawn_streams(rng: Rng, count: int):
    """`count` child generators seeded from one draw of `rng`."""
    root = np.random.SeedSequence(int(rng.integers(0, 2 ** 63)))
    return [np.random.Generator(np.random.PCG64(child)) for child in root.spawn(count)]


def sample_normal(rng: Rng, mean, precision, size=None):
    precision = np.asarray(precision, dtype=np.float64)
    if np.any(~(precision > 0)):
        raise InputError("normal precision must be positive")
    return rng.normal(mean, 1.0 / np.sqrt(precision), size=size)


def sample_gamma(rng: Rng, shape, rate, size=None):
    shape = np.asarray(shape, dtype=np.float64)
    rate = np.asarray(rate, dtype=np.float64)
    if np.any(~(shape > 0)) or np.any(~(rate > 0)):
        raise InputError("gamma shape and rate must be positive")
    return rng.gamma(shape, 1.0 / rate, size=size)


def sample_bernoulli(rng: Rng, p, size=None):
    p = np.asarray(p, dtype=np.float64)
    if np.any((p < 0) | (p > 1)):
        raise InputError("bernoulli probabilities must lie in [0, 1]")
    return (rng.random(size=size if size is not None else p.shape) < p).astype(np.float64)


def pg_mean(c):
    """E[PG(1, c)] = tanh(c/2) / (2c), with the limit 1/4 at c = 0."""
    c = np.abs(np.asarray(c, dtype=np.float64))
    small = c < 1e-4
    safe = np.where(small, 1.0, c)
    out = np.where(small, 0.25 - c * c / 48.0, np.tanh(safe / 2.0) / (2.0 * safe))
    return out if out.ndim else float(out)


def pg_variance(c):
    """Var[PG(1, c)] = (sinh c - c) / (4 c^3 cosh^2(c/2)), limit 1/24 at 0."""
    c = np.abs(np.asarray(c, dtype=np.float64))
    small = c < 1e-3
    safe = np.where(small, 1.0, c)
    exact = (np.sinh(safe) - safe) / (4.0 * safe ** 3 * np.cosh(safe / 2.0) ** 2)
    out = np.where(small, 1.0 / 24.0 - c * c / 120.0, exact)
    return out if out.ndim else float(out)


def sample_pg(rng: Rng, c, b: int = 1):
    """Exact draws from PG(1, c) using the `polyagamma` Devroye sampler."""
    if b != 1:
        raise InputError(f"only PG(1, c) is supported, got b={b}")
    c_arr = np.asarray(c, dtype=np.float64)
    if not np.isfinite(c_arr).all():
        raise InputError("PG tilting parameter must be finite")
    if c_arr.ndim == 0:
        return float(random_polyagamma(1, float(c_arr), method='devroye', random_state=rng))
    if c_arr.size == 0:
        return np.empty(c_arr.shape)
    return np.asarray(random_polyagamma(1, c_arr, method='devroye', random_state=rng)).reshape(c_arr.shape)


def sample_pg_chunked(rng: Rng, c, chunk_size: int = 4096, threads: int = 1) -> np.ndarray:
    """PG(1, c) draws for a long vector, one independent stream per chunk.

    The result depends on `chunk_size` but not on `threads`.
    """
    c = np.asarray(c, dtype=np.float64).reshape(-1)
    n_chunks = max(1, -(-c.size // chunk_size))
    streams = spawn_streams(rng, n_chunks)
    pieces = [c[k * chunk_size:(k + 1) * chunk_size] for k in range(n_chunks)]
    if threads > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(sample_pg, streams, pieces))
    else:
        results = [sample_pg(stream, piece) for stream, piece in zip(streams, pieces)]
    return np.concatenate(results) if results else np.empty(0)


def sample_pg_truncated(rng: Rng, c, terms: int = 200):
    """Approximate PG(1, c) from a truncated sum of Gamma variables.

    The truncated sum is rescaled so its mean matches tanh(c/2)/(2c).
    """
    c_arr = np.abs(np.asarray(c, dtype=np.float64))
    flat = c_arr.reshape(-1)
    ksq = (np.arange(terms) + 0.5) ** 2
    denom = ksq[None, :] + flat[:, None] ** 2 / (4.0 * _PI2)
    gammas = rng.gamma(1.0, 1.0, size=(flat.size, terms))
    draws = 0.5 / _PI2 * np.sum(gammas / denom, axis=1)
    truncated_mean = 0.5 / _PI2 * np.sum(1.0 / denom, axis=1)
    draws *= np.asarray(pg_mean(flat)).reshape(-1) / truncated_mean
    if c_arr.ndim == 0:
        return float(draws[0])
    return draws.reshape(c_arr.shape)
