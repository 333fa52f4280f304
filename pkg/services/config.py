"""
Configuration for the engines and the command line.

Ambient settings (log level, run registry URL, dense size guard) come from the
environment, which app.py populates from a `.env` file with python-dotenv.
Hyperparameters live in frozen dataclasses and are layered as

    dataclass defaults < config file (KEY=value, read with dotenv_values) < flags
"""

import dataclasses
import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union, get_args, get_origin

from dotenv import dotenv_values

from services.errors import InputError

DEFAULT_DATABASE_URL = 'sqlite:///ringfit_runs.db'
DEFAULT_MAX_DENSE_ENTRIES = 10 ** 8


@dataclass(frozen=True)
class Settings:
    log_level: str = 'INFO'
    database_url: Optional[str] = DEFAULT_DATABASE_URL
    max_dense_entries: int = DEFAULT_MAX_DENSE_ENTRIES


def get_settings() -> Settings:
    database_url = os.environ.get('DATABASE_URL', DEFAULT_DATABASE_URL)
    if database_url.strip().lower() in ('', 'none', 'off'):
        database_url = None
    try:
        max_dense = int(float(os.environ.get('MAX_DENSE_ENTRIES', DEFAULT_MAX_DENSE_ENTRIES)))
    except ValueError:
        raise InputError(f"MAX_DENSE_ENTRIES must be a number, got {os.environ['MAX_DENSE_ENTRIES']!r}")
    return Settings(
        log_level=os.environ.get('LOG_LEVEL', 'INFO').upper(),
        database_url=database_url,
        max_dense_entries=max_dense,
    )


@dataclass(frozen=True)
class RankAdaptionConfig:
    enabled: bool = True
    epsilon: float = 0.01
    kappa0: float = -1.0
    kappa1: float = -5e-4
    min_rank: int = 1
    max_rank: int = 30

    def validate(self):
        if not self.epsilon > 0:
            raise InputError(f"epsilon must be positive, got {self.epsilon}")
        if self.kappa0 > 0 or self.kappa1 > 0:
            raise InputError("kappa0 and kappa1 must be <= 0 so the grow probability stays in (0, 1]")
        if self.min_rank < 1 or self.min_rank > self.max_rank:
            raise InputError(f"need 1 <= min_rank <= max_rank, got {self.min_rank}, {self.max_rank}")
        return self

    def grow_probability(self, iteration: int) -> float:
        return math.exp(min(0.0, self.kappa0 + self.kappa1 * iteration))


@dataclass(frozen=True)
class GibbsConfig:
    a0: float = 2.0
    alpha0: float = 1.0
    beta0: float = 0.3
    psi: float = 1.0
    burn_in: int = 1500
    n_samples: int = 100
    thin: int = 1
    init_rank: int = 5
    init_scale: float = math.sqrt(0.1)
    rank_adaption: RankAdaptionConfig = field(default_factory=RankAdaptionConfig)
    seed: int = 0
    threads: int = 1
    deterministic: bool = True
    log_every: int = 100

    def validate(self):
        if not self.a0 > 1:
            raise InputError(f"a0 must exceed 1, got {self.a0}")
        if not (self.alpha0 > 0 and self.beta0 > 0 and self.psi > 0):
            raise InputError("alpha0, beta0 and psi must be positive")
        if self.burn_in < 0 or self.n_samples < 0:
            raise InputError("burn_in and n_samples must be non-negative")
        if self.thin < 1:
            raise InputError(f"thin must be at least 1, got {self.thin}")
        if self.init_rank < 1 or not self.init_scale > 0:
            raise InputError("init_rank must be >= 1 and init_scale positive")
        self.rank_adaption.validate()
        adaption = self.rank_adaption
        if adaption.enabled and not adaption.min_rank <= self.init_rank <= adaption.max_rank:
            raise InputError(f"init_rank {self.init_rank} outside [{adaption.min_rank}, {adaption.max_rank}]")
        return self


@dataclass(frozen=True)
class OnlineConfig:
    batch_size: int = 512
    epochs: int = 200
    step_size: float = 0.01
    step_decay: float = 0.0
    step_delay: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    a0: float = 2.0
    alpha0: float = 1.0
    beta0: float = 0.3
    psi: float = 1.0
    rank: int = 5
    init_scale: Optional[float] = None
    tau_decay: float = 0.99
    seed: int = 0

    def validate(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise InputError("batch_size and epochs must be positive")
        if not self.step_size > 0 or self.step_decay < 0 or not self.step_delay > 0:
            raise InputError("step_size and step_delay must be positive, step_decay non-negative")
        if not self.a0 > 1:
            raise InputError(f"a0 must exceed 1, got {self.a0}")
        if not (self.alpha0 > 0 and self.beta0 > 0 and self.psi > 0):
            raise InputError("alpha0, beta0 and psi must be positive")
        if self.rank < 1:
            raise InputError(f"rank must be positive, got {self.rank}")
        if not 0 < self.tau_decay <= 1:
            raise InputError(f"tau_decay must lie in (0, 1], got {self.tau_decay}")
        if self.init_scale is not None and not self.init_scale > 0:
            raise InputError(f"init_scale must be positive, got {self.init_scale}")
        return self

    def step_at(self, iteration: int) -> float:
        """Step size schedule: step_size * (iteration + delay) ** -decay."""
        return self.step_size * (iteration + self.step_delay) ** (-self.step_decay)


# Flat keys accepted for the nested rank adaption block.
_ADAPTION_KEYS = {
    'adaption': 'enabled',
    'epsilon': 'epsilon',
    'kappa0': 'kappa0',
    'kappa1': 'kappa1',
    'min_rank': 'min_rank',
    'max_rank': 'max_rank',
}


def _coerce(name: str, value, kind):
    if value is None or not isinstance(value, str):
        return value
    if get_origin(kind) is Union:
        kind = next(arg for arg in get_args(kind) if arg is not type(None))
    text = value.strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in ('1', 'true', 'yes', 'on'):
                return True
            if lowered in ('0', 'false', 'no', 'off'):
                return False
            raise ValueError(text)
        if kind is int:
            return int(float(text))
        if kind is float:
            return float(text)
    except ValueError:
        raise InputError(f"invalid value {value!r} for {name}")
    return text


def read_config_file(path) -> dict:
    """KEY=value pairs from a config file, keys lower-cased."""
    if path is None:
        return {}
    if not os.path.exists(path):
        raise InputError(f"config file not found: {path}")
    return {k.strip().lower(): v for k, v in dotenv_values(path).items() if v is not None}


def build_config(cls, file_values: Mapping = None, overrides: Mapping = None):
    """Instantiate a config dataclass from layered sources and validate it.

    `overrides` holds command-line values; entries that are None are treated
    as not given.
    """
    file_values = dict(file_values or {})
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    own = {f.name: f for f in dataclasses.fields(cls) if f.name != 'rank_adaption'}
    nested = cls is GibbsConfig

    values, adaption = {}, {}
    for source in (file_values, overrides):
        for key, value in source.items():
            key = key.lower()
            if key in own:
                values[key] = _coerce(key, value, own[key].type)
            elif nested and key in _ADAPTION_KEYS:
                target = _ADAPTION_KEYS[key]
                kind = {f.name: f.type for f in dataclasses.fields(RankAdaptionConfig)}[target]
                adaption[target] = _coerce(key, value, kind)
            else:
                raise InputError(f"unknown configuration key {key!r} for {cls.__name__}")
    if nested:
        values['rank_adaption'] = RankAdaptionConfig(**adaption)
    return cls(**values).validate()


def config_snapshot(config) -> dict:
    return dataclasses.asdict(config)


def flatten_snapshot(snapshot: Mapping) -> dict:
    """Inverse of config_snapshot in the flat key space build_config accepts."""
    flat = {k: v for k, v in snapshot.items() if k != 'rank_adaption'}
    inverse = {target: key for key, target in _ADAPTION_KEYS.items()}
    for key, value in (snapshot.get('rank_adaption') or {}).items():
        flat[inverse[key]] = value
    return flat
