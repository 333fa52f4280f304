"""
Run bookkeeping: a `<command>_manifest.json` file next to each command's outputs plus a row in
the run registry (any SQLAlchemy URL, sqlite by default).

The registry is best effort. A broken database is logged and skipped; it never
fails the command that is being recorded.
"""

import json
import logging
import os
import subprocess
import time
import traceback
from contextlib import contextmanager
from datetime import datetime
from functools import lru_cache
from typing import Iterator, List, Optional, Sequence

from sqlalchemy import create_engine, select
from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import sessionmaker

from models import Base, RunManifest, RunRecord, RunStatus
from services import __version__
from services.config import get_settings

logger = logging.getLogger(__name__)

MANIFEST_NAME = '{command}_manifest.json'


@lru_cache(maxsize=1)
def version_string() -> str:
    """`git describe` of the source tree, or the package version outside a checkout."""
    here = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    try:
        out = subprocess.run(['git', 'describe', '--always', '--dirty', '--tags'], cwd=here,
                             capture_output=True, text=True, timeout=5, check=True)
        described = out.stdout.strip()
        if described:
            return f'{__version__}+{described}'
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


@lru_cache(maxsize=8)
def _session_factory(url: str) -> sessionmaker:
    engine = create_engine(url)
    Base.metadata.create_all(engine)
    return sessionmaker(bind=engine, expire_on_commit=False)


def open_registry(url: Optional[str] = None) -> Optional[sessionmaker]:
    url = url if url is not None else get_settings().database_url
    if not url:
        return None
    try:
        return _session_factory(url)
    except SQLAlchemyError as exc:
        logger.warning("run registry unavailable (%s): %s", url, exc)
        return None


def recent_runs(url: Optional[str] = None, limit: int = 20, command: Optional[str] = None) -> List[RunRecord]:
    factory = open_registry(url)
    if factory is None:
        return []
    with factory() as session:
        query = select(RunRecord)
        if command is not None:
            query = query.where(RunRecord.command == command)
        query = query.order_by(RunRecord.id.desc()).limit(limit)
        return list(session.scalars(query))


def write_manifest(manifest: RunManifest, directory) -> str:
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, MANIFEST_NAME.format(command=manifest.command))
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(manifest.to_dict(), handle, indent=2, sort_keys=True, default=str)
        handle.write('\n')
    return path


def _record(factory, record_id: Optional[int], **fields) -> Optional[int]:
    if factory is None:
        return None
    try:
        with factory() as session:
            if record_id is None:
                record = RunRecord(**fields)
                session.add(record)
            else:
                record = session.get(RunRecord, record_id)
                for key, value in fields.items():
                    setattr(record, key, value)
            session.commit()
            return record.id
    except SQLAlchemyError as exc:
        logger.warning("could not update run registry: %s", exc)
        return record_id


@contextmanager
def track_run(command: str, config: dict, seed: Optional[int] = None, inputs: Sequence[str] = (),
              manifest_dir: Optional[str] = None, registry_url: Optional[str] = None) -> Iterator[RunManifest]:
    """Record one command invocation.

    Yields the RunManifest so the command can add outputs, timings and extra
    fields. The registry row goes PENDING -> RUNNING -> SUCCESS or FAILED; the
    manifest is written only for successful runs.
    """
    manifest = RunManifest(command=command, config=config, seed=seed, inputs=[str(p) for p in inputs],
                           version=version_string())
    factory = open_registry(registry_url)
    record_id = _record(factory, None, command=command, status=RunStatus.PENDING, seed=seed,
                        config_json=json.dumps(config, default=str), inputs=json.dumps(manifest.inputs),
                        version=manifest.version, started_at=datetime.utcnow())
    _record(factory, record_id, status=RunStatus.RUNNING)
    started = time.perf_counter()
    try:
        yield manifest
    except BaseException as exc:
        error_msg = f"{exc}\n\nTraceback:\n{traceback.format_exc()}"
        _record(factory, record_id, status=RunStatus.FAILED, error=error_msg[:1000],
                finished_at=datetime.utcnow(), wall_seconds=time.perf_counter() - started)
        raise
    wall = time.perf_counter() - started
    manifest.timings.setdefault('wall_seconds', round(wall, 6))
    if manifest_dir is not None:
        manifest.outputs.append(write_manifest(manifest, manifest_dir))
    _record(factory, record_id, status=RunStatus.SUCCESS, outputs=json.dumps(manifest.outputs),
            finished_at=datetime.utcnow(), wall_seconds=wall)
    logger.debug("run %s (%s) finished in %.2fs", record_id, command, wall)
