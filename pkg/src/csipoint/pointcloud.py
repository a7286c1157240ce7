"""Point clouds: file I/O, unit-sphere normalization, fixed-size resampling."""

from __future__ import annotations

import math
import os

import numpy as np

from .errors import ContractError, ParseError
from .numerics.checkpoint import atomic_write_text

FORMATS = ("xyz", "ply")


def as_cloud(points) -> np.ndarray:
    """Validate and return an ``(N, 3)`` float64 array with N >= 1."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ContractError(f"point cloud must be (N, 3), got {arr.shape}")
    if arr.shape[0] < 1:
        raise ContractError("point cloud must contain at least one point")
    if not np.isfinite(arr).all():
        raise ContractError("point cloud has non-finite coordinates")
    return arr


def _format_for(path, fmt):
    if fmt is not None:
        fmt = fmt.lower()
        if fmt == "ply-ascii":
            fmt = "ply"
    else:
        ext = os.path.splitext(os.fspath(path))[1].lower().lstrip(".")
        fmt = ext if ext in FORMATS else "xyz"
    if fmt not in FORMATS:
        raise ValueError(f"unknown point format {fmt!r}")
    return fmt


def _parse_xyz_line(line: str, lineno: int, path) -> list[float]:
    fields = line.split()
    if len(fields) != 3:
        raise ParseError(f"expected 3 coordinates, got {len(fields)}", lineno, path)
    try:
        values = [float(f) for f in fields]
    except ValueError:
        raise ParseError(f"non-numeric coordinate in {line.strip()!r}", lineno, path) from None
    if not all(math.isfinite(v) for v in values):
        raise ParseError("non-finite coordinate", lineno, path)
    return values


def parse_points(text: str, fmt: str = "xyz", path=None) -> np.ndarray:
    lines = text.splitlines()
    rows = []
    if fmt == "xyz":
        for lineno, line in enumerate(lines, 1):
            if line.strip():
                rows.append(_parse_xyz_line(line, lineno, path))
    else:
        if not lines or lines[0].strip() != "ply":
            raise ParseError("missing 'ply' magic", 1, path)
        count = None
        props = []
        body_start = None
        for lineno, line in enumerate(lines[1:], 2):
            tokens = line.split()
            if not tokens:
                continue
            if tokens[0] == "format" and tokens[1:2] != ["ascii"]:
                raise ParseError("only ascii PLY is supported", lineno, path)
            if tokens[:2] == ["element", "vertex"]:
                try:
                    count = int(tokens[2])
                except (IndexError, ValueError):
                    raise ParseError("bad vertex count", lineno, path) from None
            elif tokens[0] == "element":
                raise ParseError(f"unsupported element {tokens[1:2]}", lineno, path)
            elif tokens[0] == "property":
                props.append(tokens[-1])
            elif tokens[0] == "end_header":
                body_start = lineno
                break
        if body_start is None:
            raise ParseError("missing end_header", None, path)
        if count is None:
            raise ParseError("missing 'element vertex' line", None, path)
        if props != ["x", "y", "z"]:
            raise ParseError(f"expected properties x y z, got {props}", None, path)
        for lineno, line in enumerate(lines[body_start:], body_start + 1):
            if line.strip():
                rows.append(_parse_xyz_line(line, lineno, path))
        if len(rows) != count:
            raise ParseError(f"header declares {count} vertices, body has {len(rows)}", None, path)
    if not rows:
        raise ParseError("no points", None, path)
    return np.array(rows, dtype=np.float64)


def load_points(path, fmt: str | None = None) -> np.ndarray:
    """Read an ``xyz`` or ascii ``ply`` file, keeping file order."""
    fmt = _format_for(path, fmt)
    with open(path, encoding="utf-8") as fh:
        return parse_points(fh.read(), fmt, path)


def format_points(cloud, fmt: str = "xyz") -> str:
    cloud = as_cloud(cloud)
    body = "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in cloud.tolist())
    if fmt == "xyz":
        return body
    header = f"ply\nformat ascii 1.0\nelement vertex {len(cloud)}\nproperty double x\nproperty double y\nproperty double z\nend_header\n"
    return header + body


def save_points(cloud, path, fmt: str | None = None) -> None:
    """Write with ``repr`` precision so a reload is exact."""
    fmt = _format_for(path, fmt)
    atomic_write_text(path, format_points(cloud, fmt))


def normalize_unit_sphere(cloud) -> tuple[np.ndarray, np.ndarray, float]:
    """Center on the centroid and scale so the farthest point has norm 1.

    Returns ``(normalized, centroid, scale)`` with
    ``original == normalized * scale + centroid``.  Zero-spread clouds use
    scale 1, as do clouds whose spread is at the rounding level of their
    coordinates (the centroid of identical points need not be exact).
    """
    cloud = as_cloud(cloud)
    centroid = cloud.mean(axis=0)
    centered = cloud - centroid
    scale = float(np.sqrt((centered * centered).sum(axis=1)).max())
    if scale <= 16 * np.finfo(np.float64).eps * float(np.abs(cloud).max()):
        return np.zeros_like(cloud), centroid, 1.0
    return centered / scale, centroid, scale


def apply_normalization(cloud, centroid, scale: float) -> np.ndarray:
    return (np.asarray(cloud, dtype=np.float64) - centroid) / scale


def invert_normalization(cloud, centroid, scale: float) -> np.ndarray:
    return np.asarray(cloud, dtype=np.float64) * scale + centroid


def resample_to_n(cloud, n: int, seed) -> np.ndarray:
    """Return exactly ``n`` points drawn from ``cloud``.

    Larger clouds are subsampled without replacement, smaller ones keep every
    point and pad with points drawn with replacement.  An ``n`` equal to the
    size returns the cloud unchanged.
    """
    cloud = as_cloud(cloud)
    if n < 1:
        raise ContractError("resample size must be >= 1")
    count = len(cloud)
    if count == n:
        return cloud.copy()
    rng = np.random.default_rng(seed)
    if count > n:
        idx = np.sort(rng.choice(count, size=n, replace=False))
    else:
        extra = rng.choice(count, size=n - count, replace=True)
        idx = np.concatenate([np.arange(count), extra])
    return cloud[idx]


class Normalizer:
    """A fixed centre/scale pair shared by every cloud of a dataset.

    Fitted once on the training clouds (all points pooled) so the same
    transform can be inverted for clouds predicted from CSI, where no
    ground-truth centroid is available.
    """

    def __init__(self, centroid=(0.0, 0.0, 0.0), scale: float = 1.0):
        self.centroid = np.asarray(centroid, dtype=np.float64).reshape(3)
        self.scale = float(scale)

    @classmethod
    def fit(cls, clouds) -> "Normalizer":
        pooled = np.concatenate([as_cloud(c) for c in clouds], axis=0)
        _, centroid, scale = normalize_unit_sphere(pooled)
        return cls(centroid, scale)

    def apply(self, cloud) -> np.ndarray:
        return apply_normalization(cloud, self.centroid, self.scale)

    def invert(self, cloud) -> np.ndarray:
        return invert_normalization(cloud, self.centroid, self.scale)

    def to_dict(self) -> dict:
        return {"centroid": [float(c) for c in self.centroid], "scale": self.scale}

    @classmethod
    def from_dict(cls, d) -> "Normalizer":
        return cls(d["centroid"], d["scale"])

    def __eq__(self, other):
        return isinstance(other, Normalizer) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"Normalizer(centroid={self.centroid.tolist()}, scale={self.scale})"
