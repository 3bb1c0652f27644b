"""Transmitter side: BPSK symbols, synthetic hardware fingerprints, noise injection, RRC shaping.

Everything here works on complex baseband at 1 sample/symbol until ``pulse_shape``
upsamples to ``samples_per_symbol``. Randomness always comes from an explicit
``numpy.random.Generator``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields

import numpy as np
from scipy import optimize, signal

# Raw fingerprint draws are truncated at this many standard deviations.
CALIBRATION_CAP = 3.0
# Impulse noise: probability that a sample carries an impulse.
IMPULSE_PROB = 0.05
# Phase-noise increment relative to the phase share of the fingerprint strength.
_PHASE_NOISE_SCALE = 1e-3


@dataclass(frozen=True)
class ModulationConfig:
    symbol_rate: float = 250_000.0
    samples_per_symbol: int = 4
    rrc_rolloff: float = 0.35
    # long enough that the TX+RX cascade ISI stays below 1e-3 of the peak
    rrc_span_symbols: int = 31
    tx_amplitude: float = 0.7
    # annotation only, the simulation is baseband-equivalent
    carrier_hz: float = 900e6

    def __post_init__(self):
        if self.symbol_rate <= 0:
            raise ValueError("symbol_rate must be positive")
        if self.samples_per_symbol < 2:
            raise ValueError("samples_per_symbol must be >= 2")
        if not 0 < self.rrc_rolloff <= 1:
            raise ValueError("rrc_rolloff must be in (0, 1]")
        if self.rrc_span_symbols < 6:
            raise ValueError("rrc_span_symbols must be >= 6")

    @property
    def sample_rate(self) -> float:
        return self.symbol_rate * self.samples_per_symbol


@dataclass(frozen=True)
class IQFrame:
    """Complex baseband samples plus their sample rate."""

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.complex128).ravel()
        if s.size < 1:
            raise ValueError("IQFrame needs at least one sample")
        if not np.all(np.isfinite(s)):
            raise ValueError("IQFrame samples must be finite")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.size

    def power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))


@dataclass(frozen=True)
class SymbolStream:
    """Complex values at one sample per symbol."""

    symbols: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "symbols", np.asarray(self.symbols, dtype=np.complex128).ravel())

    def __len__(self):
        return self.symbols.size


@dataclass(frozen=True)
class DeviceFingerprint:
    device_id: int
    gain_imbalance: float = 0.0
    quadrature_skew: float = 0.0
    dc_offset: complex = 0j
    static_phase: float = 0.0
    amam_cubic: float = 0.0
    phase_noise_std: float = 0.0

    def as_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["dc_offset"] = [float(self.dc_offset.real), float(self.dc_offset.imag)]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceFingerprint":
        d = dict(d)
        dc = d.get("dc_offset", 0j)
        if isinstance(dc, (list, tuple)):
            d["dc_offset"] = complex(dc[0], dc[1])
        return cls(**d)

    def vector(self) -> np.ndarray:
        return np.array([
            self.gain_imbalance, self.quadrature_skew, self.dc_offset.real,
            self.dc_offset.imag, self.static_phase, self.amam_cubic, self.phase_noise_std,
        ])


class NoiseKind(str, enum.Enum):
    NONE = "none"
    GAUSSIAN = "gaussian"
    IMPULSE = "impulse"
    LAPLACIAN = "laplacian"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class NoiseSpec:
    kind: NoiseKind = NoiseKind.NONE
    sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    @property
    def is_identity(self) -> bool:
        return self.kind is NoiseKind.NONE or self.sigma == 0


# --------------------------------------------------------------------------- fingerprints


def _distort(s: np.ndarray, fp: DeviceFingerprint) -> np.ndarray:
    """Static (memoryless) part of the fingerprint."""
    g, psi = fp.gain_imbalance, fp.quadrature_skew
    i = (1 + g / 2) * s.real
    q = (1 - g / 2) * (s.imag * np.cos(psi) + s.real * np.sin(psi))
    y = i + 1j * q
    if fp.amam_cubic:
        y = y * (1 - fp.amam_cubic * np.abs(y) ** 2)
    if fp.static_phase:
        y = y * np.exp(1j * fp.static_phase)
    return y + fp.dc_offset


def _perturbation_rms(fp: DeviceFingerprint) -> tuple[float, float]:
    """Amplitude and phase RMS perturbation of ideal unit BPSK symbols (no phase-noise walk)."""
    pts = np.array([1.0 + 0j, -1.0 + 0j])
    y = _distort(pts, fp)
    eps_a = np.abs(y) - 1
    eps_p = np.angle(y * np.conj(pts))
    return float(np.sqrt(np.mean(eps_a**2))), float(np.sqrt(np.mean(eps_p**2)))


def _truncnorm(rng: np.random.Generator, size: int) -> np.ndarray:
    x = rng.standard_normal(size)
    while np.any(np.abs(x) > CALIBRATION_CAP):
        bad = np.abs(x) > CALIBRATION_CAP
        x[bad] = rng.standard_normal(int(bad.sum()))
    return x


def make_fingerprint(device_id: int, calibration_seed: int, strength: float = 0.005) -> DeviceFingerprint:
    """Draw a device's impairments deterministically from ``(device_id, calibration_seed)``.

    Amplitude-type terms (gain imbalance, cubic AM/AM, real DC offset) and phase-type
    terms (skew, static phase, imaginary DC offset) are scaled separately so that each
    contributes ``strength / sqrt(2)`` RMS on ideal unit symbols; the aggregate
    displacement RMS is therefore ``strength``.
    """
    if strength <= 0:
        raise ValueError("strength must be positive")
    rng = np.random.default_rng([int(calibration_seed), int(device_id), 0x46505249])
    g, psi, dr, di, phi0, cubic, pn = _truncnorm(rng, 7)
    target = strength / np.sqrt(2)

    def build(sa: float, sp: float) -> DeviceFingerprint:
        return DeviceFingerprint(
            device_id=int(device_id),
            gain_imbalance=float(sa * g),
            quadrature_skew=float(sp * psi),
            dc_offset=complex(sa * dr, sp * di),
            static_phase=float(sp * phi0),
            amam_cubic=float(sa * cubic),
            phase_noise_std=float(abs(pn) * target * _PHASE_NOISE_SCALE),
        )

    # the two shares are almost decoupled: start from the linearised scales, then
    # alternate 1-D solves
    sa = target / _perturbation_rms(build(1e-6, 0.0))[0] * 1e-6
    sp = target / _perturbation_rms(build(0.0, 1e-6))[1] * 1e-6
    for _ in range(4):
        sa = optimize.brentq(lambda a: _perturbation_rms(build(a, sp))[0] - target, 0.0, 4 * sa, xtol=1e-16)
        sp = optimize.brentq(lambda p: _perturbation_rms(build(sa, p))[1] - target, 0.0, 4 * sp, xtol=1e-16)
    return build(sa, sp)


def apply_fingerprint(s: SymbolStream, fp: DeviceFingerprint, rng: np.random.Generator | None = None) -> SymbolStream:
    y = _distort(s.symbols, fp)
    if fp.phase_noise_std > 0:
        if rng is None:
            raise ValueError("phase noise needs an rng")
        walk = np.cumsum(rng.normal(0.0, fp.phase_noise_std, y.size))
        y = y * np.exp(1j * walk)
    return SymbolStream(y)


# --------------------------------------------------------------------------- modulation


def byte_counter_bits(n_bits: int, offset: int = 0) -> np.ndarray:
    """Bits of the repeating byte sequence 0..255, MSB first; period 2048 bits."""
    period = np.unpackbits(np.arange(256, dtype=np.uint8))
    idx = (np.arange(n_bits) + offset) % period.size
    return period[idx]


def modulate(bits, cfg: ModulationConfig = ModulationConfig()) -> SymbolStream:
    b = np.asarray(bits).ravel()
    if b.size == 0:
        raise ValueError("no bits to modulate")
    if not np.all((b == 0) | (b == 1)):
        raise ValueError("bits must be 0/1")
    return SymbolStream(cfg.tx_amplitude * (1.0 - 2.0 * b.astype(np.float64)))


def demap(s: SymbolStream) -> np.ndarray:
    return (s.symbols.real < 0).astype(np.uint8)


# --------------------------------------------------------------------------- noise


def sample_noise(kind, sigma: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean real noise with standard deviation ``sigma``."""
    kind = NoiseKind(kind)
    if n < 1:
        raise ValueError("n must be >= 1")
    if kind is NoiseKind.NONE or sigma == 0:
        return np.zeros(n)
    if kind is NoiseKind.GAUSSIAN:
        return rng.normal(0.0, sigma, n)
    if kind is NoiseKind.UNIFORM:
        h = sigma * np.sqrt(3.0)
        return rng.uniform(-h, h, n)
    if kind is NoiseKind.LAPLACIAN:
        return rng.laplace(0.0, sigma / np.sqrt(2.0), n)
    # Bernoulli-Gaussian impulses
    hits = rng.random(n) < IMPULSE_PROB
    out = np.zeros(n)
    out[hits] = rng.normal(0.0, sigma / np.sqrt(IMPULSE_PROB), int(hits.sum()))
    return out


def inject_noise(s: SymbolStream, spec: NoiseSpec, rng: np.random.Generator) -> SymbolStream:
    """Independent additive noise on I and Q, each with standard deviation ``spec.sigma``."""
    if spec.is_identity:
        return SymbolStream(s.symbols.copy())
    n = len(s)
    ni = sample_noise(spec.kind, spec.sigma, n, rng)
    nq = sample_noise(spec.kind, spec.sigma, n, rng)
    return SymbolStream(s.symbols + ni + 1j * nq)


# --------------------------------------------------------------------------- pulse shaping


def rrc_taps(cfg: ModulationConfig = ModulationConfig()) -> np.ndarray:
    """Unit-energy root-raised-cosine taps, ``span * sps + 1`` long."""
    sps, beta = cfg.samples_per_symbol, cfg.rrc_rolloff
    n = cfg.rrc_span_symbols * sps
    t = (np.arange(n + 1) - n / 2) / sps
    h = np.empty_like(t)
    for k, tk in enumerate(t):
        if abs(tk) < 1e-12:
            h[k] = 1 - beta + 4 * beta / np.pi
        elif abs(abs(4 * beta * tk) - 1) < 1e-9:
            h[k] = beta / np.sqrt(2) * (
                (1 + 2 / np.pi) * np.sin(np.pi / (4 * beta)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * beta))
            )
        else:
            h[k] = (np.sin(np.pi * tk * (1 - beta)) + 4 * beta * tk * np.cos(np.pi * tk * (1 + beta))) / (
                np.pi * tk * (1 - (4 * beta * tk) ** 2)
            )
    return h / np.sqrt(np.sum(h**2))


def group_delay(cfg: ModulationConfig = ModulationConfig()) -> int:
    """Delay of one RRC filter in samples."""
    return cfg.rrc_span_symbols * cfg.samples_per_symbol // 2


def pulse_shape(s: SymbolStream, cfg: ModulationConfig = ModulationConfig()) -> IQFrame:
    """Zero-stuff to ``sps`` and filter with the RRC; symbol k peaks at ``k*sps + group_delay``."""
    y = signal.upfirdn(rrc_taps(cfg), s.symbols, up=cfg.samples_per_symbol)
    return IQFrame(y, cfg.sample_rate)
