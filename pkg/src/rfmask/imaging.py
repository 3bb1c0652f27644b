"""IQ chunks to fingerprint images: fold the BPSK clouds, trim outliers, bin into a 2-D histogram."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class ImagingConfig:
    chunk_size: int = 100_000
    image_side: int = 64
    lower_q: float = 0.005
    upper_q: float = 0.995
    # math.inf disables clipping
    pixel_cap: float = 255

    def __post_init__(self):
        if not 0 <= self.lower_q < self.upper_q <= 1:
            raise ValueError("need 0 <= lower_q < upper_q <= 1")
        if self.image_side < 8:
            raise ValueError("image_side must be >= 8")
        if self.chunk_size < self.image_side**2:
            raise ValueError("chunk_size must be >= image_side**2")
        if self.pixel_cap <= 0:
            raise ValueError("pixel_cap must be positive")


@dataclass
class PointSet:
    points: np.ndarray  # (n, 2) columns I, Q
    degenerate: bool = False

    def __len__(self):
        return self.points.shape[0]


@dataclass
class FingerprintImage:
    pixels: np.ndarray  # rows: Q bins (ascending), columns: I bins (ascending)
    meta: dict = field(default_factory=dict)

    @property
    def side(self) -> int:
        return self.pixels.shape[0]

    def normalized(self, pixel_cap: float = 255) -> np.ndarray:
        return self.pixels.astype(np.float64) / pixel_cap


def _as_complex(x) -> np.ndarray:
    if hasattr(x, "samples"):
        x = x.samples
    elif hasattr(x, "symbols"):
        x = x.symbols
    return np.asarray(x, dtype=np.complex128).ravel()


def chunk(x, cfg: ImagingConfig = ImagingConfig()) -> list[np.ndarray]:
    """Split into consecutive full chunks of ``cfg.chunk_size``; the remainder is dropped."""
    s = _as_complex(x)
    n = s.size // cfg.chunk_size
    if n == 0:
        raise ValueError(f"input of {s.size} samples is shorter than one chunk ({cfg.chunk_size})")
    return [s[k * cfg.chunk_size:(k + 1) * cfg.chunk_size] for k in range(n)]


def mirror(points: np.ndarray) -> np.ndarray:
    """Fold the left BPSK cloud onto the right one: (I, Q) -> (-I, -Q) wherever I < 0."""
    if np.iscomplexobj(points) or np.ndim(points) == 1:
        c = np.asarray(points, dtype=np.complex128).ravel()
        p = np.column_stack([c.real, c.imag])
    else:
        p = np.asarray(points, dtype=np.float64)
    out = p.copy()
    neg = out[:, 0] < 0
    out[neg] *= -1
    return out


def _trim_bounds(v: np.ndarray, lower_q: float, upper_q: float) -> tuple[float, float]:
    # order statistics: exactly round(q * n) points fall outside each tail when values are distinct
    n = v.size
    s = np.sort(v)
    k_lo = int(round(lower_q * n))
    k_hi = int(round((1 - upper_q) * n))
    k_lo = min(k_lo, n - 1)
    k_hi = min(k_hi, n - 1 - k_lo)
    return float(s[k_lo]), float(s[n - 1 - k_hi])


def mirror_and_trim(x, cfg: ImagingConfig = ImagingConfig()) -> PointSet:
    """Mirror then drop points outside the per-axis ``[lower_q, upper_q]`` quantile band.

    A chunk whose points all coincide is returned mirrored but untrimmed, flagged degenerate.
    """
    pts = mirror(_as_complex(x))
    if pts.shape[0] == 0:
        raise ValueError("empty chunk")
    if np.all(pts == pts[0]):
        return PointSet(pts, degenerate=True)
    keep = np.ones(pts.shape[0], dtype=bool)
    for axis in (0, 1):
        lo, hi = _trim_bounds(pts[:, axis], cfg.lower_q, cfg.upper_q)
        keep &= (pts[:, axis] >= lo) & (pts[:, axis] <= hi)
    return PointSet(pts[keep])


def _edges(v: np.ndarray, bins: int) -> np.ndarray:
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        # zero extent on this axis: centre a unit-width box on the value
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, bins + 1)


def to_image(points, cfg: ImagingConfig = ImagingConfig(), meta: dict | None = None) -> FingerprintImage:
    """Bivariate histogram over the points' bounding box, ``image_side`` bins per axis.

    Bins are half-open ``[a, b)`` except the last one, which includes its right edge.
    Counts are clipped at ``cfg.pixel_cap``.
    """
    p = points.points if isinstance(points, PointSet) else np.asarray(points, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise ValueError("to_image needs a non-empty (n, 2) point set")
    if not np.all(np.isfinite(p)):
        raise ValueError("points must be finite")
    side = cfg.image_side
    ei, eq = _edges(p[:, 0], side), _edges(p[:, 1], side)
    h, _, _ = np.histogram2d(p[:, 1], p[:, 0], bins=[eq, ei])
    if math.isfinite(cfg.pixel_cap):
        h = np.minimum(h, cfg.pixel_cap)
    dtype = np.uint16 if cfg.pixel_cap <= np.iinfo(np.uint16).max else np.int64
    return FingerprintImage(h.astype(dtype), dict(meta or {}))


def frame_to_images(x, cfg: ImagingConfig = ImagingConfig(), meta: dict | None = None) -> list[FingerprintImage]:
    return [to_image(mirror_and_trim(c, cfg), cfg, meta) for c in chunk(x, cfg)]


def images_to_array(images, pixel_cap: float = 255) -> np.ndarray:
    """Stack images as float64 in [0, 1], shape (n, side, side)."""
    return np.stack([im.normalized(pixel_cap) for im in images])


# --------------------------------------------------------------------------- export


def write_pgm(image: FingerprintImage, path, pixel_cap: float = 255) -> Path:
    """Binary PGM (P5) plus a JSON sidecar ``<path>.json`` holding the metadata."""
    path = Path(path)
    px = image.pixels
    maxval = int(min(max(int(px.max()), 1), 65535)) if not math.isfinite(pixel_cap) else int(pixel_cap)
    h, w = px.shape
    # PGM rows run top to bottom; put the highest Q bin on top
    body = px[::-1]
    if maxval < 256:
        data = body.astype(np.uint8).tobytes()
    else:
        data = np.clip(body, 0, 65535).astype(">u2").tobytes()
    path.write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode() + data)
    Path(str(path) + ".json").write_text(json.dumps(image.meta, indent=2, sort_keys=True))
    return path


def read_pgm(path) -> FingerprintImage:
    path = Path(path)
    raw = path.read_bytes()
    # header: magic, width, height, maxval separated by single whitespace runs, then one byte
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    data = raw[pos + 1:]
    dt = np.uint8 if maxval < 256 else np.dtype(">u2")
    px = np.frombuffer(data, dtype=dt, count=w * h).reshape(h, w)[::-1].astype(np.uint16)
    side = Path(str(path) + ".json")
    meta = json.loads(side.read_text()) if side.exists() else {}
    return FingerprintImage(px, meta)
