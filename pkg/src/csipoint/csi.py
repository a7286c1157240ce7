"""CSI frames: amplitude/phase features, phase sanitization, LS estimation, logs.

A frame holds the complex channel ``h`` of shape ``(M, K)``: M subcarriers
by K antenna links.  The network input is the real ``(M, 2K)`` matrix
``[amplitude | phase]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, EstimationError, ParseError
from .numerics.checkpoint import atomic_write_text

DEFAULT_CENTER_HZ = 2.412e9
DEFAULT_SPACING_HZ = 312.5e3


@dataclass
class CsiFrame:
    h: np.ndarray
    center_hz: float = DEFAULT_CENTER_HZ
    spacing_hz: float = DEFAULT_SPACING_HZ
    timestamp: float = 0.0

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.complex128)
        if h.ndim == 1:
            h = h[:, None]
        if h.ndim != 2 or h.shape[0] < 1 or h.shape[1] < 1:
            raise ContractError(f"CSI matrix must be (M, K) with M, K >= 1, got {h.shape}")
        if not np.isfinite(h).all():
            raise ContractError("CSI matrix has non-finite entries")
        self.h = h

    @property
    def m(self) -> int:
        return self.h.shape[0]

    @property
    def k(self) -> int:
        return self.h.shape[1]


@dataclass
class PilotBlock:
    """Known pilots and the matching received symbols for every subcarrier.

    ``pilots`` is ``(M, Nt, T)`` and ``received`` is ``(M, Nr, T)`` for T
    pilot symbols.  Lower-rank inputs are promoted: a 1-D array is read as one
    scalar pilot per subcarrier.
    """

    pilots: np.ndarray
    received: np.ndarray

    def __post_init__(self):
        self.pilots = _promote(self.pilots)
        self.received = _promote(self.received)
        if self.pilots.shape[0] != self.received.shape[0] or self.pilots.shape[2] != self.received.shape[2]:
            raise ContractError(
                f"pilot block shapes disagree: pilots {self.pilots.shape}, received {self.received.shape}")


def _promote(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim == 0:
        a = a.reshape(1, 1, 1)
    elif a.ndim == 1:
        a = a[:, None, None]
    elif a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3:
        raise ContractError(f"pilot arrays must have at most 3 dimensions, got {a.ndim}")
    return a


def _matrix(frame_or_h) -> np.ndarray:
    if isinstance(frame_or_h, CsiFrame):
        return frame_or_h.h
    return np.asarray(frame_or_h, dtype=np.complex128)


def amplitude(frame) -> np.ndarray:
    return np.abs(_matrix(frame))


def phase(frame) -> np.ndarray:
    """Elementwise angle in (-pi, pi]."""
    h = _matrix(frame)
    out = np.arctan2(h.imag, h.real)
    # atan2 returns -pi for (negative, -0.0); fold onto the closed end
    out[out == -np.pi] = np.pi
    return out


def unwrap_phase(raw_phase) -> np.ndarray:
    """Remove 2*pi jumps along the subcarrier axis (axis 0)."""
    return np.unwrap(np.asarray(raw_phase, dtype=np.float64), axis=0)


def sanitize_phase(raw_phase) -> np.ndarray:
    """Unwrap along subcarriers, then subtract each link's least-squares line.

    The residual has zero mean and zero slope in subcarrier index.
    """
    unwrapped = unwrap_phase(raw_phase)
    if unwrapped.ndim == 1:
        unwrapped = unwrapped[:, None]
    m = unwrapped.shape[0]
    centered = unwrapped - unwrapped.mean(axis=0)
    if m == 1:
        return centered
    x = np.arange(m, dtype=np.float64)
    x -= x.mean()
    slope = (x @ centered) / (x @ x)
    return centered - np.outer(x, slope)


def to_features(frame, sanitize: bool = True) -> np.ndarray:
    """Real ``(M, 2K)`` matrix: amplitude columns, then (sanitized) phase."""
    ph = phase(frame)
    if sanitize:
        ph = sanitize_phase(ph)
    return np.concatenate([amplitude(frame), ph], axis=1)


def aggregate_frames(frames) -> CsiFrame:
    """Fuse repeated captures: mean amplitude, circular mean phase."""
    frames = list(frames)
    if not frames:
        raise ContractError("no frames to aggregate")
    if len({f.h.shape for f in frames}) != 1:
        raise ContractError("frames to aggregate have different shapes")
    stack = np.stack([f.h for f in frames])
    amp = np.abs(stack).mean(axis=0)
    unit = np.exp(1j * np.angle(stack)).sum(axis=0)
    first = frames[0]
    return CsiFrame(amp * np.exp(1j * np.angle(unit)), first.center_hz, first.spacing_hz, first.timestamp)


def ls_estimate(block: PilotBlock, rcond: float = 1e-12) -> np.ndarray:
    """Least-squares channel per subcarrier: r p^H (p p^H)^-1.

    Returns ``(M, Nr, Nt)``.
    """
    p, r = block.pilots, block.received
    p_h = np.conj(np.swapaxes(p, 1, 2))
    gram = p @ p_h
    out = np.empty((p.shape[0], r.shape[1], p.shape[1]), dtype=np.complex128)
    for k in range(p.shape[0]):
        s = np.linalg.svd(gram[k], compute_uv=False)
        if s[0] == 0.0 or s[-1] <= rcond * s[0]:
            raise EstimationError(f"pilot Gram matrix is singular at subcarrier {k}")
        out[k] = np.linalg.solve(gram[k].T, (r[k] @ p_h[k]).T).T
    return out


# -- log files -----------------------------------------------------------

def format_frame(frame: CsiFrame) -> str:
    values = np.stack([frame.h.real, frame.h.imag], axis=-1).ravel().tolist()
    head = f"t={float(frame.timestamp)!r},M={frame.m},K={frame.k}"
    return ",".join([head, *(repr(v) for v in values)])


def format_csi_log(frames) -> str:
    return "".join(format_frame(f) + "\n" for f in frames)


def _field(token: str, key: str, lineno: int, path, cast):
    name, sep, value = token.partition("=")
    if not sep or name.strip() != key:
        raise ParseError(f"expected '{key}=<value>', got {token!r}", lineno, path)
    try:
        return cast(value)
    except ValueError:
        raise ParseError(f"bad value for {key}: {value!r}", lineno, path) from None


def parse_csi_text(text: str, path=None, center_hz: float = DEFAULT_CENTER_HZ,
                   spacing_hz: float = DEFAULT_SPACING_HZ) -> list[CsiFrame]:
    frames = []
    shape = None
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        tokens = line.strip().split(",")
        if len(tokens) < 3:
            raise ParseError("expected t=,M=,K= header fields", lineno, path)
        t = _field(tokens[0], "t", lineno, path, float)
        m = _field(tokens[1], "M", lineno, path, int)
        k = _field(tokens[2], "K", lineno, path, int)
        if m < 1 or k < 1:
            raise ParseError("M and K must be positive", lineno, path)
        values = tokens[3:]
        if len(values) % 2:
            raise ParseError(f"odd number of real values ({len(values)})", lineno, path)
        if len(values) != 2 * m * k:
            raise ParseError(f"expected {2 * m * k} values for M={m}, K={k}, got {len(values)}", lineno, path)
        if shape is not None and (m, k) != shape:
            raise ParseError(f"frame shape M={m}, K={k} differs from earlier M={shape[0]}, K={shape[1]}", lineno, path)
        shape = (m, k)
        try:
            nums = np.array([float(v) for v in values])
        except ValueError:
            raise ParseError("non-numeric CSI value", lineno, path) from None
        if not np.isfinite(nums).all() or not math.isfinite(t):
            raise ParseError("non-finite CSI value", lineno, path)
        pairs = nums.reshape(m, k, 2)
        frames.append(CsiFrame(pairs[..., 0] + 1j * pairs[..., 1], center_hz, spacing_hz, t))
    frames.sort(key=lambda f: f.timestamp)
    return frames


def parse_csi_log(path, **kwargs) -> list[CsiFrame]:
    """Read the ``t=..,M=..,K=..,re,im,...`` line format, one frame per line."""
    with open(path, encoding="utf-8") as fh:
        return parse_csi_text(fh.read(), path=path, **kwargs)


def write_csi_log(frames, path) -> None:
    atomic_write_text(path, format_csi_log(frames))
