"""Plain-text parameter checkpoints.

Layout::

    csipoint-checkpoint 1
    <name> <ndim> <extent>...
    <row-major values, space separated, repr precision>
    ...

Values are written with ``repr`` so they parse back to the same doubles and
save -> load -> save is byte-identical.
"""

from __future__ import annotations

import hashlib
import os
import tempfile
from collections import OrderedDict

import numpy as np

from ..errors import ParseError

MAGIC = "csipoint-checkpoint"
VERSION = 1


def dumps(state) -> str:
    lines = [f"{MAGIC} {VERSION}"]
    for name, value in state.items():
        arr = np.asarray(value, dtype=np.float64)
        if any(ch.isspace() for ch in name):
            raise ValueError(f"parameter name contains whitespace: {name!r}")
        lines.append(" ".join([name, str(arr.ndim), *map(str, arr.shape)]))
        lines.append(" ".join(repr(float(x)) for x in arr.ravel()))
    return "\n".join(lines) + "\n"


def loads(text: str, path=None) -> "OrderedDict[str, np.ndarray]":
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].split() != [MAGIC, str(VERSION)]:
        raise ParseError("missing or unsupported checkpoint header", 1, path)
    state: OrderedDict[str, np.ndarray] = OrderedDict()
    i = 1
    while i < len(lines):
        head = lines[i].split()
        try:
            name, ndim = head[0], int(head[1])
            shape = tuple(int(x) for x in head[2:])
        except (IndexError, ValueError):
            raise ParseError("bad parameter header", i + 1, path) from None
        if len(shape) != ndim:
            raise ParseError(f"{name}: ndim {ndim} does not match shape {shape}", i + 1, path)
        if i + 1 >= len(lines):
            raise ParseError(f"{name}: missing values line", i + 2, path)
        body = lines[i + 1].split()
        try:
            values = np.array([float(x) for x in body], dtype=np.float64)
        except ValueError:
            raise ParseError(f"{name}: non-numeric value", i + 2, path) from None
        if values.size != int(np.prod(shape, dtype=np.int64)):
            raise ParseError(f"{name}: expected {int(np.prod(shape))} values, got {values.size}", i + 2, path)
        if name in state:
            raise ParseError(f"duplicate parameter {name}", i + 1, path)
        state[name] = values.reshape(shape)
        i += 2
    return state


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the same directory and rename into place."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(state, path) -> None:
    atomic_write_text(path, dumps(state))


def load(path) -> "OrderedDict[str, np.ndarray]":
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read(), path=path)


def state_hash(state) -> str:
    """sha256 of the serialized form; equal states hash equal."""
    return hashlib.sha256(dumps(state).encode("utf-8")).hexdigest()
