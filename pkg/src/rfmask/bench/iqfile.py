"""Interleaved little-endian float32 I/Q recordings with JSON sidecars."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

SIDECAR_SUFFIX = ".json"


def sidecar_path(path) -> Path:
    return Path(str(path) + SIDECAR_SUFFIX)


def write_iq(path, samples, metadata: dict | None = None) -> Path:
    """Write complex samples as ``I0 Q0 I1 Q1 ...`` float32 LE plus ``<path>.json``.

    The sidecar always records ``num_samples`` and ``format`` so readers can check the length.
    """
    path = Path(path)
    s = np.asarray(samples).ravel()
    if not np.all(np.isfinite(s)):
        raise ValueError("samples must be finite")
    buf = np.empty(2 * s.size, dtype="<f4")
    buf[0::2] = s.real
    buf[1::2] = s.imag
    path.parent.mkdir(parents=True, exist_ok=True)
    buf.tofile(path)
    meta = dict(metadata or {})
    meta["num_samples"] = int(s.size)
    meta["format"] = "cf32_le"
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default))
    return path


def read_iq(path, check_sidecar: bool = True) -> tuple[np.ndarray, dict]:
    """Read samples (complex64) and the sidecar; a sidecar/file length mismatch raises."""
    path = Path(path)
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % 2:
        raise ValueError(f"{path}: odd number of float32 values")
    meta = {}
    sc = sidecar_path(path)
    if sc.exists():
        meta = json.loads(sc.read_text())
        n = meta.get("num_samples")
        if check_sidecar and n is not None and int(n) != raw.size // 2:
            raise ValueError(f"{path}: sidecar says {n} samples, file holds {raw.size // 2}")
    elif check_sidecar:
        raise FileNotFoundError(f"missing sidecar {sc}")
    return (raw[0::2] + 1j * raw[1::2]).astype(np.complex64), meta


def _json_default(o):
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o)}")
