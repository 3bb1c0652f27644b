"""Simulated measurement campaign: one received IQ recording per (device, noise kind, sigma) cell.

The noise-free cell is shared by all noise kinds, so a grid of N devices, K kinds and S
sigmas (including 0) maps to N * (1 + K * (S - 1)) recordings; cell ``(d, kind, 0)`` for
any kind resolves to the single ``(d, "none", 0)`` recording.
"""

from __future__ import annotations

import dataclasses
import datetime as _dt
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..channel import ChannelConfig, propagate
from ..imaging import ImagingConfig, chunk, frame_to_images
from ..receiver import SyncConfig, receive, receiver_settling_symbols
from ..rfchain import (DeviceFingerprint, ModulationConfig, NoiseKind, NoiseSpec, apply_fingerprint, byte_counter_bits,
                       inject_noise, make_fingerprint, modulate, pulse_shape)
from .config import ExperimentConfig
from .iqfile import read_iq, write_iq

_KIND_CODE = {k.value: i for i, k in enumerate(NoiseKind)}
SEGMENT_SYMBOLS = 500_000


@dataclass(frozen=True)
class Cell:
    device: int
    kind: str
    sigma: float

    @classmethod
    def of(cls, device: int, kind, sigma: float) -> "Cell":
        kind = NoiseKind(kind).value
        if sigma == 0 or kind == "none":
            return cls(int(device), "none", 0.0)
        return cls(int(device), kind, float(sigma))

    @property
    def filename(self) -> str:
        return f"dev{self.device:02d}_{self.kind}_s{self.sigma:.4f}.cf32"

    def rng_key(self, seed: int, link: str) -> list:
        return [int(seed), self.device, _KIND_CODE[self.kind], int(round(self.sigma * 1e6)), 1 if link == "wireless" else 0]


@dataclass(frozen=True)
class MeasurementRecord:
    path: Path
    metadata: dict


def simulate_measurement(fp: DeviceFingerprint, noise: NoiseSpec, link: ChannelConfig, n_symbols: int,
                         rng: np.random.Generator, mod: ModulationConfig = ModulationConfig(),
                         sync: SyncConfig = SyncConfig(), segment: int = SEGMENT_SYMBOLS) -> np.ndarray:
    """Received symbol-rate IQ of one transmitter: BPSK byte counter -> fingerprint -> injected
    noise -> RRC -> link -> receiver. Long captures are simulated in independent segments
    (each with its own random bit offset and carrier phase) and concatenated."""
    if n_symbols < 1:
        raise ValueError("n_symbols must be >= 1")
    overhead = receiver_settling_symbols(mod, sync) + mod.rrc_span_symbols + 64
    out, got = [], 0
    while got < n_symbols:
        want = min(segment, n_symbols - got)
        bits = byte_counter_bits(want + overhead, int(rng.integers(0, 2048)))
        s = apply_fingerprint(modulate(bits, mod), fp, rng)
        s = inject_noise(s, noise, rng)
        phase = float(rng.uniform(0, 2 * math.pi))
        ch = dataclasses.replace(link, phase_offset=(link.phase_offset + phase) % (2 * math.pi))
        y = receive(propagate(pulse_shape(s, mod), ch, rng), mod, sync).symbols
        take = min(y.size, want)
        out.append(y[:take])
        got += take
    return np.concatenate(out)


def fingerprints(cfg: ExperimentConfig) -> list[DeviceFingerprint]:
    d = cfg.dataset
    return [make_fingerprint(i, d.calibration_seed, d.fingerprint_strength) for i in range(d.devices)]


def cell_grid(cfg: ExperimentConfig, kinds=None, sigmas=None) -> list[Cell]:
    """Distinct cells of the grid, noise-free cells first."""
    d = cfg.dataset
    kinds = d.noise_kinds if kinds is None else kinds
    sigmas = d.sigmas if sigmas is None else sigmas
    cells = []
    for dev in range(d.devices):
        for k in kinds:
            for s in sigmas:
                c = Cell.of(dev, k, s)
                if c not in cells:
                    cells.append(c)
    return sorted(cells, key=lambda c: (c.sigma > 0, c.device, c.kind, c.sigma))


def _simulate_cell(args) -> np.ndarray:
    cfg, cell, n = args
    fp = make_fingerprint(cell.device, cfg.dataset.calibration_seed, cfg.dataset.fingerprint_strength)
    rng = np.random.default_rng(cell.rng_key(cfg.seed, cfg.channel.kind.value))
    y = simulate_measurement(fp, NoiseSpec(cell.kind, cell.sigma), cfg.channel, n, rng, cfg.modulation, cfg.sync)
    # round through the float32 file format so in-memory and on-disk datasets agree exactly
    return y.astype(np.complex64).astype(np.complex128)


class Dataset:
    """Received recordings for the configured grid, read from ``root`` when present and
    simulated (deterministically per cell) otherwise.

    Images are cached in memory. Raw IQ is cached only with ``keep_iq=True``; otherwise it
    is re-read or re-simulated on demand, which keeps a full grid within a few hundred MB.
    """

    def __init__(self, cfg: ExperimentConfig, root=None, keep_iq: bool = False):
        self.cfg = cfg
        self.root = Path(root) if root is not None else None
        self.keep_iq = keep_iq
        self._iq: dict = {}
        self._img: dict = {}

    def _on_disk(self, cell: Cell) -> bool:
        return self.root is not None and (self.root / cell.filename).exists()

    def _load(self, cell: Cell) -> np.ndarray:
        if self._on_disk(cell):
            return read_iq(self.root / cell.filename)[0].astype(np.complex128)
        return _simulate_cell((self.cfg, cell, self.cfg.dataset.samples_per_cell))

    def _store(self, cell: Cell, y: np.ndarray) -> None:
        if self.keep_iq:
            self._iq[cell] = y
        if cell not in self._img:
            self._img[cell] = np.stack([im.pixels for im in frame_to_images(y, self.cfg.imaging)])

    def prefetch(self, cells) -> None:
        """Simulate (in parallel when ``workers > 1``) and image every listed cell not yet cached."""
        todo = [c for c in cells if c not in self._img or (self.keep_iq and c not in self._iq)]
        sim = [c for c in todo if not self._on_disk(c)]
        if self.cfg.dataset.workers > 1 and len(sim) > 1:
            n = self.cfg.dataset.samples_per_cell
            with ProcessPoolExecutor(self.cfg.dataset.workers) as ex:
                for c, y in zip(sim, ex.map(_simulate_cell, [(self.cfg, c, n) for c in sim])):
                    self._store(c, y)
        for c in todo:
            if c not in self._img or (self.keep_iq and c not in self._iq):
                self._store(c, self._load(c))

    def iq(self, device: int, kind, sigma: float) -> np.ndarray:
        c = Cell.of(device, kind, sigma)
        if c in self._iq:
            return self._iq[c]
        y = self._load(c)
        self._store(c, y)
        return y

    def images(self, device: int, kind, sigma: float) -> np.ndarray:
        """Fingerprint images of a cell as a (n, side, side) count array."""
        c = Cell.of(device, kind, sigma)
        if c not in self._img:
            self._store(c, self._load(c))
        return self._img[c]

    def chunks(self, device: int, kind, sigma: float, length: int) -> np.ndarray:
        """Consecutive complex chunks of ``length`` samples, shape (n, length)."""
        return np.stack(chunk(self.iq(device, kind, sigma), ImagingConfig(chunk_size=length, image_side=8)))


def generate_dataset(cfg: ExperimentConfig, out_dir=None) -> list[MeasurementRecord]:
    """Simulate every grid cell and write ``<cell>.cf32`` plus a JSON sidecar into ``out_dir``."""
    out = Path(out_dir if out_dir is not None else Path(cfg.out) / "dataset")
    out.mkdir(parents=True, exist_ok=True)
    cells = cell_grid(cfg)
    fps = {fp.device_id: fp for fp in fingerprints(cfg)}
    records = []
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    for c in cells:
        y = _simulate_cell((cfg, c, cfg.dataset.samples_per_cell))
        meta = {
            "device_id": c.device,
            "fingerprint": fps[c.device].as_dict(),
            "noise_kind": c.kind,
            "sigma": c.sigma,
            "link_kind": cfg.channel.kind.value,
            "channel": cfg.channel.as_dict(),
            "sample_rate": cfg.modulation.symbol_rate,
            "seed": cfg.seed,
            "rng_key": c.rng_key(cfg.seed, cfg.channel.kind.value),
            "created": stamp,
            "config": cfg.as_dict(),
        }
        path = write_iq(out / c.filename, y, meta)
        records.append(MeasurementRecord(path, meta))
    return records
