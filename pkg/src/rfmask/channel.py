"""Wired and wireless links between transmitter and receiver."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .rfchain import IQFrame


class LinkKind(str, enum.Enum):
    WIRED = "wired"
    WIRELESS = "wireless"


# LOS tap plus two delayed taps at -10 and -15 dB (delays in samples)
# indoor narrowband link: delay spread (tens of ns) is far below the 1 us sample period, so a
# line-of-sight tap plus one weak diffuse tap 50 ns later; the link is essentially flat-fading
DEFAULT_WIRELESS_TAPS = ((0.0, 1.0 + 0j), (0.05, 10 ** (-20 / 20) + 0j))


@dataclass(frozen=True)
class ChannelConfig:
    kind: LinkKind = LinkKind.WIRED
    attenuation_db: float = 30.0
    # None disables AWGN
    awgn_snr_db: float | None = None
    cfo_hz: float = 0.0
    phase_offset: float = 0.0
    multipath_taps: tuple = ()
    fading_coherence: int = 0
    # fractional sample delay applied to the whole waveform (transmitter/receiver clock skew)
    timing_offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", LinkKind(self.kind))
        if self.attenuation_db < 0:
            raise ValueError("attenuation_db must be >= 0")
        taps = tuple((float(d), complex(g)) for d, g in self.multipath_taps)
        if self.kind is LinkKind.WIRED and taps:
            raise ValueError("wired links carry no multipath taps")
        if any(d < 0 for d, _ in taps):
            raise ValueError("tap delays must be >= 0")
        if taps:
            energy = sum(abs(g) ** 2 for _, g in taps)
            # leave already-normalised taps untouched so configs round-trip exactly
            if abs(energy - 1.0) > 1e-12:
                taps = tuple((d, g / math.sqrt(energy)) for d, g in taps)
        object.__setattr__(self, "multipath_taps", taps)
        if self.fading_coherence < 0:
            raise ValueError("fading_coherence must be >= 0")
        if self.timing_offset < 0:
            raise ValueError("timing_offset must be >= 0")

    @classmethod
    def wired(cls, **kw) -> "ChannelConfig":
        kw.setdefault("awgn_snr_db", 45.0)
        return cls(kind=LinkKind.WIRED, **kw)

    @classmethod
    def wireless(cls, **kw) -> "ChannelConfig":
        kw.setdefault("awgn_snr_db", 35.0)
        kw.setdefault("cfo_hz", 200.0)
        kw.setdefault("multipath_taps", DEFAULT_WIRELESS_TAPS)
        kw.setdefault("fading_coherence", 200_000)
        return cls(kind=LinkKind.WIRELESS, **kw)

    def as_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "attenuation_db": self.attenuation_db,
            "awgn_snr_db": self.awgn_snr_db,
            "cfo_hz": self.cfo_hz,
            "phase_offset": self.phase_offset,
            "multipath_taps": [[d, [g.real, g.imag]] for d, g in self.multipath_taps],
            "fading_coherence": self.fading_coherence,
            "timing_offset": self.timing_offset,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelConfig":
        d = dict(d)
        d["multipath_taps"] = tuple((t[0], complex(*t[1])) for t in d.get("multipath_taps", ()))
        return cls(**d)


def fractional_delay(x: np.ndarray, delay: float, half_len: int = 16) -> np.ndarray:
    """Delay ``x`` by ``delay`` samples (integer part exact, fraction via Kaiser-windowed sinc)."""
    whole = int(math.floor(delay))
    frac = delay - whole
    y = x
    if frac > 1e-12:
        n = np.arange(-half_len, half_len + 1)
        h = np.sinc(n - frac) * np.kaiser(n.size, 8.0)
        h /= h.sum()
        y = np.convolve(x, h)[half_len : half_len + x.size]
    if whole:
        y = np.concatenate([np.zeros(whole, dtype=y.dtype), y[: y.size - whole]])
    return y


def _fading_gains(n: int, coherence: int, ntaps: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-mean-power complex perturbations drifting over ``coherence`` samples, shape (ntaps, n)."""
    # knots every coherence/4 samples, smoothed with a one-pole filter, then interpolated
    step = max(coherence // 4, 1)
    knots = n // step + 3
    burn = 16
    w = (rng.standard_normal((ntaps, knots + burn)) + 1j * rng.standard_normal((ntaps, knots + burn))) / math.sqrt(2)
    a = 0.75
    w = signal.lfilter([math.sqrt(1 - a * a)], [1, -a], w, axis=1)[:, burn:]
    t = np.arange(n) / step
    kt = np.arange(knots)
    re = np.stack([np.interp(t, kt, w[k].real) for k in range(ntaps)])
    im = np.stack([np.interp(t, kt, w[k].imag) for k in range(ntaps)])
    # linear interpolation between knots correlated by `a` loses (1 - a) / 3 of the power
    return (re + 1j * im) / math.sqrt(1 - (1 - a) / 3)


def propagate(frame: IQFrame, cfg: ChannelConfig, rng: np.random.Generator | None = None) -> IQFrame:
    """Attenuation, fading taps, timing offset, CFO, phase offset and AWGN, in that order.

    Output length equals input length; delayed taps are truncated at the frame end.
    The AWGN SNR is relative to the attenuated signal power.
    """
    x = frame.samples * 10 ** (-cfg.attenuation_db / 20)
    n = x.size
    if cfg.multipath_taps:
        taps = cfg.multipath_taps
        y = np.zeros(n, dtype=np.complex128)
        if cfg.fading_coherence > 0:
            if rng is None:
                raise ValueError("fading needs an rng")
            # Rician: the LOS tap keeps a strong fixed part, the others fade fully
            drift = _fading_gains(n, cfg.fading_coherence, len(taps), rng)
            k_factor = 10.0
            los = math.sqrt(k_factor / (k_factor + 1)) + math.sqrt(1 / (k_factor + 1)) * drift[0]
            gains = [los] + [drift[k] for k in range(1, len(taps))]
        else:
            gains = [np.ones(n)] * len(taps)
        for (d, g), gk in zip(taps, gains):
            y += g * gk * fractional_delay(x, d)
        x = y
    if cfg.timing_offset:
        x = fractional_delay(x, cfg.timing_offset)
    if cfg.cfo_hz or cfg.phase_offset:
        t = np.arange(n) / frame.sample_rate
        x = x * np.exp(1j * (2 * np.pi * cfg.cfo_hz * t + cfg.phase_offset))
    if cfg.awgn_snr_db is not None:
        if rng is None:
            raise ValueError("AWGN needs an rng")
        p = float(np.mean(np.abs(x) ** 2))
        std = math.sqrt(p * 10 ** (-cfg.awgn_snr_db / 10) / 2)
        x = x + std * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return IQFrame(x, frame.sample_rate)


def measure_snr(received: IQFrame, reference_clean: IQFrame) -> float:
    """SNR in dB by subtracting the known clean reference; ``inf`` when the residual is zero."""
    r = np.asarray(received.samples)
    s = np.asarray(reference_clean.samples)
    if r.shape != s.shape:
        raise ValueError("received and reference must have equal length")
    p_res = float(np.mean(np.abs(r - s) ** 2))
    if p_res == 0:
        return math.inf
    return 10 * math.log10(float(np.mean(np.abs(s) ** 2)) / p_res)


def analytic_snr_penalty(sigma: float, link_snr_db: float, signal_power: float = 1.0) -> float:
    """SNR loss in dB from adding independent per-axis noise of std ``sigma`` on top of a link
    at ``link_snr_db``: 10*log10(1 + 2 sigma^2 / P_noise)."""
    p_noise = signal_power * 10 ** (-link_snr_db / 10)
    return 10 * math.log10(1 + 2 * sigma**2 / p_noise)


def measure_snr_penalty(sigma: float, link_snr_db: float, n: int, rng: np.random.Generator,
                        kind="gaussian", amplitude: float = 1.0) -> tuple[float, float]:
    """Measured (SNR without injection, SNR with injection) in dB for random BPSK symbols of
    the given amplitude sent over an AWGN link, both against the clean transmitted symbols."""
    from .rfchain import NoiseSpec, SymbolStream, inject_noise

    s = amplitude * (1.0 - 2.0 * rng.integers(0, 2, n)).astype(np.complex128)
    p = float(np.mean(np.abs(s) ** 2))
    std = math.sqrt(p * 10 ** (-link_snr_db / 10) / 2)
    ch = std * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    injected = inject_noise(SymbolStream(s), NoiseSpec(kind, sigma), rng).symbols
    clean = IQFrame(s, 1.0)
    return measure_snr(IQFrame(s + ch, 1.0), clean), measure_snr(IQFrame(injected + ch, 1.0), clean)
