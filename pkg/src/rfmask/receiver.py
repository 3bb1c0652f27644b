"""Receiver chain: AGC -> Costas carrier recovery -> RRC matched filter -> Gardner symbol sync."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numba
import numpy as np

from .rfchain import IQFrame, ModulationConfig, SymbolStream, byte_counter_bits, group_delay, rrc_taps


class AlignmentError(ValueError):
    """Recovered symbols do not correlate with the reference sequence."""


@dataclass(frozen=True)
class SyncConfig:
    agc_target: float = 1.0
    agc_rate: float = 2e-4
    costas_loop_bw: float = 0.01
    gardner_loop_bw: float = 0.005
    # narrower bandwidth used once acquisition is over; Gardner self-noise at rolloff 0.35
    # would otherwise leave a few percent of timing jitter
    gardner_track_bw: float | None = 2e-4
    sps_in: int = 4

    def __post_init__(self):
        for name in ("costas_loop_bw", "gardner_loop_bw", "gardner_track_bw"):
            v = getattr(self, name)
            if v is None and name == "gardner_track_bw":
                continue
            if not 0 < v <= 0.1:
                raise ValueError(f"{name} must be in (0, 0.1]")
        if self.sps_in < 2:
            raise ValueError("sps_in must be >= 2")
        if self.agc_target <= 0 or not 0 < self.agc_rate < 1:
            raise ValueError("bad AGC settings")

    @property
    def acquisition_symbols(self) -> int:
        return int(8 / self.gardner_loop_bw)

    @property
    def gardner_settling(self) -> int:
        """Symbols after which the timing loop is in steady-state tracking.

        The tracking loop's transient decays as exp(-zeta * wn * k) with wn ~ 2 * bw per symbol;
        waiting ln(50) / (2 * zeta * bw) symbols brings the gear-shift error inside 2%.
        """
        track = self.gardner_track_bw or self.gardner_loop_bw
        return self.acquisition_symbols + int(math.ceil(math.log(50) / (2 * 0.7071 * track)))

    @property
    def agc_settling(self) -> int:
        """Samples for the AGC to pull a x2 gain error inside 2%."""
        return int(math.ceil(math.log(math.log(2) / 0.02) / self.agc_rate))


def _pi_gains(bw: float, damping: float = 0.7071) -> tuple[float, float]:
    denom = 1 + 2 * damping * bw + bw * bw
    return 4 * damping * bw / denom, 4 * bw * bw / denom


# --------------------------------------------------------------------------- AGC


@numba.njit(cache=True)
def _agc_loop(x, gain0, target, rate):
    y = np.empty_like(x)
    g = gain0
    for n in range(x.size):
        y[n] = x[n] * g
        g *= math.exp(rate * (target - abs(y[n])) / target)
    return y


def agc(frame: IQFrame, cfg: SyncConfig = SyncConfig()) -> IQFrame:
    """Multiplicative feedback AGC driving the mean sample amplitude to ``cfg.agc_target``.

    The initial gain comes from the first block's mean amplitude, which makes the output
    exactly invariant to a positive scaling of the input.
    """
    x = frame.samples
    head = np.mean(np.abs(x[: min(x.size, 1024)]))
    if not np.any(x) or head == 0:
        raise ValueError("AGC input has zero power")
    return IQFrame(_agc_loop(x, cfg.agc_target / head, cfg.agc_target, cfg.agc_rate), frame.sample_rate)


# --------------------------------------------------------------------------- Costas


@numba.njit(cache=True)
def _costas_loop(x, alpha, beta):
    y = np.empty_like(x)
    phase = 0.0
    freq = 0.0
    for n in range(x.size):
        v = x[n] * complex(math.cos(-phase), math.sin(-phase))
        y[n] = v
        err = v.imag if v.real >= 0 else -v.imag
        if err > 1.0:
            err = 1.0
        elif err < -1.0:
            err = -1.0
        freq += beta * err
        phase += freq + alpha * err
        if phase > math.pi:
            phase -= 2 * math.pi
        elif phase < -math.pi:
            phase += 2 * math.pi
    return y


def costas_bpsk(frame: IQFrame, cfg: SyncConfig = SyncConfig()) -> IQFrame:
    """Second-order BPSK Costas loop with a sign(I)*Q detector (insensitive to DC offsets)."""
    alpha, beta = _pi_gains(cfg.costas_loop_bw)
    return IQFrame(_costas_loop(frame.samples, alpha, beta), frame.sample_rate)


# --------------------------------------------------------------------------- matched filter


def matched_filter(frame: IQFrame, cfg: ModulationConfig = ModulationConfig()) -> IQFrame:
    """Full convolution with the transmitter's RRC taps (sample rate unchanged)."""
    h = rrc_taps(cfg)
    y = np.convolve(frame.samples, h[::-1].astype(np.complex128))
    return IQFrame(y, frame.sample_rate)


# --------------------------------------------------------------------------- Gardner


@numba.njit(cache=True)
def _cubic(x, t):
    # 4-point Lagrange interpolation at fractional index t, 1 <= t < len-2
    i = int(math.floor(t))
    mu = t - i
    xm1 = x[i - 1]
    x0 = x[i]
    x1 = x[i + 1]
    x2 = x[i + 2]
    c0 = -mu * (mu - 1) * (mu - 2) / 6
    c1 = (mu + 1) * (mu - 1) * (mu - 2) / 2
    c2 = -(mu + 1) * mu * (mu - 2) / 2
    c3 = (mu + 1) * mu * (mu - 1) / 6
    return c0 * xm1 + c1 * x0 + c2 * x1 + c3 * x2


@numba.njit(cache=True)
def _gardner_loop(x, sps, t0, kp_acq, ki_acq, kp_trk, ki_trk, n_acq, p0):
    nmax = int((x.size - 3 - t0) / sps) + 1
    out = np.empty(nmax, dtype=np.complex128)
    taus = np.empty(nmax)
    t = t0
    prev = _cubic(x, t)
    out[0] = prev
    taus[0] = t
    integ = 0.0
    k = 1
    # running symbol power keeps the detector gain amplitude-independent
    pwr = p0
    kp = kp_acq
    ki = ki_acq
    while True:
        if k == n_acq:
            kp = kp_trk
            ki = ki_trk
        t_next = t + sps * (1.0 - integ)
        if t_next + 3 >= x.size or k >= nmax:
            break
        mid = _cubic(x, 0.5 * (t + t_next))
        cur = _cubic(x, t_next)
        # positive when strobes are late
        e = ((cur.real - prev.real) * mid.real + (cur.imag - prev.imag) * mid.imag) / pwr
        if e > 1.0:
            e = 1.0
        elif e < -1.0:
            e = -1.0
        integ += ki * e
        t = t_next - sps * kp * e
        cur = _cubic(x, t)
        out[k] = cur
        taus[k] = t
        pwr += 0.01 * (cur.real * cur.real + cur.imag * cur.imag - pwr)
        prev = cur
        k += 1
    return out[:k], taus[:k]


def gardner_sync(frame: IQFrame, cfg: SyncConfig = SyncConfig(), start: float | None = None) -> SymbolStream:
    """Gardner timing recovery; one output symbol per symbol period.

    The detector runs on two strobes per symbol (on-time and mid-symbol) taken from the
    matched-filter output by cubic interpolation. ``start`` is the initial on-time index in
    input samples; by default the nominal TX+RX filter delay modulo one symbol.
    """
    sps = cfg.sps_in
    x = frame.samples
    settle = cfg.acquisition_symbols
    if x.size < settle * sps:
        raise ValueError(f"frame too short for Gardner settling ({x.size} < {settle * sps} samples)")
    kp, ki = _pi_gains(cfg.gardner_loop_bw, damping=1.0)
    kp2, ki2 = _pi_gains(cfg.gardner_track_bw or cfg.gardner_loop_bw, damping=1.0)
    if start is None:
        start = float(2 * group_delay(ModulationConfig(samples_per_symbol=sps)) % sps) or float(sps)
    p0 = float(np.mean(np.abs(x) ** 2)) + 1e-300
    y, _ = _gardner_loop(x, sps, float(max(start, 1.0)), kp, ki, kp2, ki2, cfg.acquisition_symbols, p0)
    return SymbolStream(y)


# --------------------------------------------------------------------------- full chain


def receive(frame: IQFrame, mod: ModulationConfig = ModulationConfig(), cfg: SyncConfig = SyncConfig(),
            discard: int | None = None) -> SymbolStream:
    """AGC -> Costas -> matched filter -> Gardner, dropping ``discard`` settling symbols."""
    f = costas_bpsk(agc(frame, cfg), cfg)
    f = matched_filter(f, mod)
    sym = gardner_sync(f, dataclasses.replace(cfg, sps_in=mod.samples_per_symbol))
    if discard is None:
        discard = receiver_settling_symbols(mod, cfg)
    # the filter tails at the end carry no full symbols
    tail = mod.rrc_span_symbols + 2
    return SymbolStream(sym.symbols[discard: max(len(sym) - tail, discard)])


def receiver_settling_symbols(mod: ModulationConfig = ModulationConfig(), cfg: SyncConfig = SyncConfig()) -> int:
    samples = max(cfg.agc_settling, int(8 / cfg.costas_loop_bw))
    return int(math.ceil(samples / mod.samples_per_symbol)) + cfg.gardner_settling


# --------------------------------------------------------------------------- BER


def align(symbols: SymbolStream, reference_bits, min_corr: float = 0.5) -> tuple[np.ndarray, int, int]:
    """Find the lag and sign that align hard decisions with a (periodic) reference bit pattern.

    Returns ``(reference_segment, lag, sign)`` where ``reference_segment`` has the symbols'
    length. ``reference_bits`` must contain at least ``len(symbols)`` bits beyond any lag.
    """
    ref = np.asarray(reference_bits).astype(np.float64)
    soft = np.sign(symbols.symbols.real)
    n = soft.size
    if ref.size < n:
        raise AlignmentError("reference shorter than symbol stream")
    ref_pm = 1.0 - 2.0 * ref
    # correlate a probe against the reference via FFT
    probe = soft[: min(n, 4096)]
    span = ref.size - n + 1
    m = 1 << int(math.ceil(math.log2(ref.size + probe.size)))
    c = np.fft.irfft(np.fft.rfft(ref_pm, m) * np.conj(np.fft.rfft(probe, m)), m)[:span]
    lag = int(np.argmax(np.abs(c)))
    corr = c[lag] / probe.size
    if abs(corr) < min_corr:
        raise AlignmentError(f"alignment correlation {abs(corr):.3f} below {min_corr}")
    return ref[lag: lag + n].astype(np.uint8), lag, 1 if corr > 0 else -1


def demap_and_ber(symbols: SymbolStream, reference_bits, min_corr: float = 0.5) -> float:
    """Bit error ratio after resolving lag and the BPSK pi ambiguity against ``reference_bits``."""
    if len(symbols) == 0:
        raise AlignmentError("no symbols")
    seg, _, sign = align(symbols, reference_bits, min_corr)
    bits = (sign * symbols.symbols.real < 0).astype(np.uint8)
    return float(np.mean(bits != seg))


def periodic_reference(n_bits: int, offset: int = 0) -> np.ndarray:
    """Byte-counter reference long enough to align ``n_bits`` received bits at any lag."""
    return byte_counter_bits(n_bits + 2 * 2048, offset)
