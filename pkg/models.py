from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterator, List, Sequence, Tuple
import enum
import json

import numpy as np
from sqlalchemy import Column, DateTime, Float, Integer, String, Text
from sqlalchemy import Enum as SQLEnum
from sqlalchemy.orm import declarative_base

from services.errors import InputError

Base = declarative_base()


class TensorKind(enum.Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"


class RunStatus(enum.Enum):
    PENDING = "PENDING"
    RUNNING = "RUNNING"
    SUCCESS = "SUCCESS"
    FAILED = "FAILED"


def _frozen(array, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SparseTensor:
    """Observed entries of an order-D tensor, stored as COO arrays.

    `indices` is an (N, D) array of 0-based index tuples and `values` the
    matching length-N vector.
    """

    shape: Tuple[int, ...]
    indices: np.ndarray
    values: np.ndarray
    kind: TensorKind = TensorKind.CONTINUOUS

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if not shape or any(s <= 0 for s in shape):
            raise InputError(f"shape must be a non-empty list of positive integers, got {self.shape}")
        indices = np.asarray(self.indices, dtype=np.int64)
        if indices.size == 0:
            indices = indices.reshape(0, len(shape))
        if indices.ndim != 2 or indices.shape[1] != len(shape):
            raise InputError(f"indices must have shape (N, {len(shape)}), got {indices.shape}")
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if values.shape[0] != indices.shape[0]:
            raise InputError(f"{indices.shape[0]} indices but {values.shape[0]} values")
        if indices.shape[0]:
            if (indices < 0).any() or (indices >= np.asarray(shape)).any():
                bad = np.flatnonzero(((indices < 0) | (indices >= np.asarray(shape))).any(axis=1))[0]
                raise InputError(f"index {tuple(indices[bad])} out of bounds for shape {shape}")
            if np.unique(indices, axis=0).shape[0] != indices.shape[0]:
                raise InputError("duplicate index tuples in sparse tensor")
            if not np.isfinite(values).all():
                raise InputError("sparse tensor values must be finite")
        kind = TensorKind(self.kind)
        if kind is TensorKind.BINARY and not np.isin(values, (0.0, 1.0)).all():
            raise InputError("binary tensors may only contain values 0 and 1")

        object.__setattr__(self, 'shape', shape)
        object.__setattr__(self, 'indices', _frozen(indices, np.int64))
        object.__setattr__(self, 'values', _frozen(values, np.float64))
        object.__setattr__(self, 'kind', kind)

    @classmethod
    def from_entries(cls, shape: Sequence[int], entries, kind=TensorKind.CONTINUOUS) -> 'SparseTensor':
        entries = list(entries)
        indices = [tuple(idx) for idx, _ in entries]
        values = [float(v) for _, v in entries]
        return cls(tuple(shape), np.array(indices, dtype=np.int64).reshape(len(entries), len(shape)),
                   np.array(values), kind)

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    @property
    def is_binary(self) -> bool:
        return self.kind is TensorKind.BINARY

    @property
    def entries(self) -> Iterator[Tuple[Tuple[int, ...], float]]:
        for idx, value in zip(self.indices, self.values):
            yield tuple(int(i) for i in idx), float(value)

    def subset(self, rows) -> 'SparseTensor':
        """Entries selected by a boolean mask or integer row list."""
        return SparseTensor(self.shape, self.indices[rows], self.values[rows], self.kind)

    def with_values(self, values) -> 'SparseTensor':
        return SparseTensor(self.shape, self.indices, values, self.kind)

    def __eq__(self, other):
        if not isinstance(other, SparseTensor):
            return NotImplemented
        return (self.shape == other.shape and self.kind is other.kind
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.values, other.values))

    def __repr__(self):
        return f'<SparseTensor shape={self.shape} nnz={self.nnz} kind={self.kind.value}>'


@dataclass(frozen=True)
class TRModel:
    """Weighted tensor ring: D cores and D weight vectors.

    cores[d] has shape (I_d, ranks[d-1], ranks[d]); weights[d] scales the
    output bond of core d, so ranks[d] == len(weights[d]).
    """

    cores: Tuple[np.ndarray, ...]
    weights: Tuple[np.ndarray, ...]

    def __post_init__(self):
        cores = tuple(_frozen(c, np.float64) for c in self.cores)
        weights = tuple(_frozen(np.reshape(w, -1), np.float64) for w in self.weights)
        if not cores or len(cores) != len(weights):
            raise InputError(f"need one weight vector per core, got {len(cores)} cores and {len(weights)} weights")
        n_modes = len(cores)
        for d, core in enumerate(cores):
            if core.ndim != 3:
                raise InputError(f"core {d} must be 3-dimensional, got shape {core.shape}")
            rank_in, rank_out = len(weights[d - 1]), len(weights[d])
            if core.shape[1:] != (rank_in, rank_out) or core.shape[0] == 0 or rank_out == 0:
                raise InputError(
                    f"core {d} has shape {core.shape}, expected (I_{d}, {rank_in}, {rank_out}) "
                    f"to close the ring over {n_modes} modes")
        object.__setattr__(self, 'cores', cores)
        object.__setattr__(self, 'weights', weights)

    @property
    def ndim(self) -> int:
        return len(self.cores)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(int(c.shape[0]) for c in self.cores)

    @property
    def ranks(self) -> Tuple[int, ...]:
        return tuple(int(w.shape[0]) for w in self.weights)

    def replace(self, cores=None, weights=None) -> 'TRModel':
        return TRModel(self.cores if cores is None else tuple(cores),
                       self.weights if weights is None else tuple(weights))

    def __repr__(self):
        return f'<TRModel shape={self.shape} ranks={self.ranks}>'


@dataclass
class RunManifest:
    """What a CLI invocation did; serialised next to its outputs."""

    command: str
    config: dict
    seed: int = None
    inputs: List[str] = field(default_factory=list)
    outputs: List[str] = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    version: str = ''
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            'command': self.command,
            'config': self.config,
            'seed': self.seed,
            'inputs': list(self.inputs),
            'outputs': list(self.outputs),
            'timings': dict(self.timings),
            'version': self.version,
            **({'extra': self.extra} if self.extra else {}),
        }


class RunRecord(Base):
    __tablename__ = 'runs'

    id = Column(Integer, primary_key=True)
    command = Column(String(50), nullable=False, index=True)
    status = Column(SQLEnum(RunStatus), default=RunStatus.PENDING, nullable=False)
    seed = Column(Integer, nullable=True)
    config_json = Column(Text, nullable=True)
    inputs = Column(Text, nullable=True)
    outputs = Column(Text, nullable=True)
    version = Column(String(100), nullable=True)
    started_at = Column(DateTime, default=datetime.utcnow)
    finished_at = Column(DateTime, nullable=True)
    wall_seconds = Column(Float, nullable=True)
    error = Column(Text, nullable=True)

    def to_dict(self):
        return {
            'id': self.id,
            'command': self.command,
            'status': self.status.value,
            'seed': self.seed,
            'config': json.loads(self.config_json) if self.config_json else None,
            'started_at': self.started_at.isoformat() if self.started_at else None,
            'finished_at': self.finished_at.isoformat() if self.finished_at else None,
            'wall_seconds': self.wall_seconds,
            'error': self.error,
        }

    def __repr__(self):
        return f'<RunRecord {self.id} {self.command} ({self.status.value})>'
