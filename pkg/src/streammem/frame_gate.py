"""Motion-gated frame intake.

A single global Lucas-Kanade solve over the (optionally downsampled) frame
decides whether an incoming frame moved enough relative to the last kept
frame to be worth encoding.  Kept frames are encoded into vision embeddings
and accumulated in a bounded buffer that flushes fixed-length chunks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class Frame:
    """One grayscale frame with a timestamp and optional scene tags."""

    pixels: np.ndarray  # 2-D float array, intensities in [0, 1]
    timestamp: float
    tags: tuple[str, ...] = ()

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @staticmethod
    def from_rgb(rgb: np.ndarray, timestamp: float, tags: tuple[str, ...] = ()) -> "Frame":
        """Luminance by channel mean; deterministic and codec-free."""
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise InputError(f"expected HxWx3 array, got shape {rgb.shape}")
        return Frame(pixels=rgb.mean(axis=2), timestamp=timestamp, tags=tags)

    @staticmethod
    def from_pgm(path: str | Path, timestamp: float, tags: tuple[str, ...] = ()) -> "Frame":
        """Load an 8-bit PGM (P2 or P5) as intensities value/255."""
        data = Path(path).read_bytes()
        try:
            pixels = _parse_pgm(data)
        except (ValueError, IndexError) as exc:
            raise InputError(f"cannot parse PGM {path}: {exc}") from exc
        return Frame(pixels=pixels, timestamp=timestamp, tags=tags)


def _parse_pgm(data: bytes) -> np.ndarray:
    # Tokenize the header, skipping '#' comment lines.
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval <= 0 or maxval > 255:
        raise ValueError(f"unsupported maxval {maxval}")
    if magic == b"P5":
        raw = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos + 1)
        grid = raw.reshape(height, width).astype(np.float64)
    elif magic == b"P2":
        values = np.array(data[pos:].split()[: width * height], dtype=np.float64)
        grid = values.reshape(height, width)
    else:
        raise ValueError(f"not a PGM magic: {magic!r}")
    return grid / 255.0


@dataclass(frozen=True)
class MotionEstimate:
    """Global displacement between two frames, in pixels/frame."""

    u: float
    v: float
    magnitude: float  # min(sqrt(u^2+v^2)/norm_scale, 1); 0 when degenerate
    degenerate: bool


@dataclass(frozen=True)
class GateConfig:
    threshold_t: float = 0.35
    norm_scale: float = 3.0  # px/frame mapped to magnitude 1.0
    singular_eps: float = 1e-7
    downsample_max_edge: int = 64

    def __post_init__(self):
        if not 0.0 <= self.threshold_t <= 1.0:
            raise InputError(f"threshold_t must be in [0,1], got {self.threshold_t}")
        if self.norm_scale <= 0:
            raise InputError("norm_scale must be positive")
        if self.singular_eps <= 0:
            raise InputError("singular_eps must be positive")


def estimate_motion(prev: Frame, cur: Frame, cfg: GateConfig | None = None) -> MotionEstimate:
    """Single-window Lucas-Kanade flow over the whole (downsampled) frame.

    Spatial gradients by central differences on the previous frame, temporal
    derivative cur - prev.  A near-singular structure matrix (flat frames)
    yields a degenerate estimate with magnitude 0.
    """
    cfg = cfg or GateConfig()
    if prev.pixels.shape != cur.pixels.shape:
        raise InputError(
            f"frame size mismatch: {prev.pixels.shape} vs {cur.pixels.shape}"
        )
    stride = max(1, math.ceil(max(prev.pixels.shape) / cfg.downsample_max_edge))
    p = prev.pixels[::stride, ::stride].astype(np.float64)
    c = cur.pixels[::stride, ::stride].astype(np.float64)

    iy, ix = np.gradient(p)
    it = c - p

    sxx = float(np.sum(ix * ix))
    sxy = float(np.sum(ix * iy))
    syy = float(np.sum(iy * iy))
    det = sxx * syy - sxy * sxy
    trace = sxx + syy
    if abs(det) < cfg.singular_eps * (trace * trace + 1e-12):
        return MotionEstimate(u=0.0, v=0.0, magnitude=0.0, degenerate=True)

    bx = float(-np.sum(ix * it))
    by = float(-np.sum(iy * it))
    u = (syy * bx - sxy * by) / det * stride
    v = (sxx * by - sxy * bx) / det * stride
    magnitude = min(math.hypot(u, v) / cfg.norm_scale, 1.0)
    return MotionEstimate(u=u, v=v, magnitude=magnitude, degenerate=False)


@dataclass(frozen=True)
class GateDecision:
    kept: bool
    magnitude: float


class FrameGate:
    """Keeps the first frame, then keeps a frame iff motion against the last
    KEPT frame exceeds the threshold."""

    def __init__(self, cfg: GateConfig):
        self.cfg = cfg
        self._last_kept: Frame | None = None

    def update(self, cur: Frame) -> GateDecision:
        if self._last_kept is None:
            self._last_kept = cur
            return GateDecision(kept=True, magnitude=1.0)
        est = estimate_motion(self._last_kept, cur, self.cfg)
        if est.magnitude > self.cfg.threshold_t:
            self._last_kept = cur
            return GateDecision(kept=True, magnitude=est.magnitude)
        return GateDecision(kept=False, magnitude=est.magnitude)


@dataclass(frozen=True)
class VisionEmbedding:
    """n x d token matrix produced by the frame-encoder port."""

    tokens: np.ndarray
    source_timestamp: float
    source_tags: tuple[str, ...] = ()


@dataclass(frozen=True)
class Chunk:
    """A flushed buffer's worth of embeddings (the final chunk of a stream
    may be shorter than the configured length)."""

    embeddings: tuple[VisionEmbedding, ...]
    span: tuple[float, float]
    tags: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.embeddings)


def make_chunk(embeddings: list[VisionEmbedding]) -> Chunk:
    if not embeddings:
        raise InputError("cannot build an empty chunk")
    tags = sorted({t for e in embeddings for t in e.source_tags})
    return Chunk(
        embeddings=tuple(embeddings),
        span=(embeddings[0].source_timestamp, embeddings[-1].source_timestamp),
        tags=tuple(tags),
    )


@dataclass
class VisionBuffer:
    """Bounded accumulation buffer; emits one chunk per `capacity` pushes."""

    capacity: int
    entries: list[VisionEmbedding] = field(default_factory=list)

    def __post_init__(self):
        if self.capacity < 1:
            raise InputError("buffer capacity must be >= 1")

    def push(self, e: VisionEmbedding) -> Chunk | None:
        if self.entries and e.tokens.shape != self.entries[0].tokens.shape:
            raise InputError(
                f"embedding shape {e.tokens.shape} does not match buffered "
                f"{self.entries[0].tokens.shape}"
            )
        self.entries.append(e)
        if len(self.entries) >= self.capacity:
            chunk = make_chunk(self.entries)
            self.entries = []
            return chunk
        return None

    def flush(self) -> Chunk | None:
        """Emit whatever remains as a (possibly short) final chunk."""
        if not self.entries:
            return None
        chunk = make_chunk(self.entries)
        self.entries = []
        return chunk
