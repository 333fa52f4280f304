"""Helpers shared by the command modules."""

import os
from typing import Tuple

import click

from services.errors import InputError


class ShapeParam(click.ParamType):
    """Comma separated positive sizes, e.g. 10,10,10,10."""

    name = 'shape'

    def convert(self, value, param, ctx):
        if isinstance(value, tuple):
            return value
        try:
            shape = tuple(int(tok) for tok in str(value).split(',') if tok.strip())
        except ValueError:
            self.fail(f"{value!r} is not a comma separated list of integers", param, ctx)
        if not shape or any(s < 1 for s in shape):
            self.fail(f"{value!r} must list positive sizes", param, ctx)
        return shape


SHAPE = ShapeParam()


def resolve_threads(threads) -> int:
    """Requested thread count; None means every available core."""
    if threads is None:
        return os.cpu_count() or 1
    if threads < 1:
        raise InputError(f"threads must be at least 1, got {threads}")
    return threads


def output_paths(out_dir: str, *names: str) -> Tuple[str, ...]:
    os.makedirs(out_dir, exist_ok=True)
    return tuple(os.path.join(out_dir, name) for name in names)
