"""Receiver chain: AGC, Costas loop, matched filter, Gardner sync and BER."""

import numpy as np
import pytest

from rfmask.channel import ChannelConfig, propagate
from rfmask.receiver import (AlignmentError, SyncConfig, agc, align, costas_bpsk, demap_and_ber, gardner_sync,
                             matched_filter, periodic_reference, receive)
from rfmask.rfchain import (IQFrame, ModulationConfig, NoiseSpec, SymbolStream, apply_fingerprint, byte_counter_bits,
                            group_delay, inject_noise, make_fingerprint, modulate, pulse_shape, rrc_taps)

MOD = ModulationConfig()
FS = MOD.sample_rate
N_BITS = 100_000


def _link(n_bits, rng, channel, sigma=0.0, fp_strength=0.005, offset=0):
    bits = byte_counter_bits(n_bits, offset)
    s = apply_fingerprint(modulate(bits, MOD), make_fingerprint(1, 42, fp_strength), rng)
    s = inject_noise(s, NoiseSpec("gaussian", sigma), rng)
    return propagate(pulse_shape(s, MOD), channel, rng)


def _ber(frame, n_bits, offset=0):
    sym = receive(frame, MOD)
    assert len(sym) > 0.8 * n_bits
    return demap_and_ber(sym, periodic_reference(len(sym), offset))


class TestAgc:
    def test_constant_amplitude_converges(self):
        x = IQFrame(0.1 * np.exp(2j * np.pi * 0.01 * np.arange(60_000)), FS)
        y = np.abs(agc(x, SyncConfig(agc_target=1.0)).samples)
        assert 0.98 <= np.mean(y[-10_000:]) <= 1.02

    def test_input_at_target_passes_through(self):
        x = IQFrame(np.exp(2j * np.pi * 0.01 * np.arange(20_000)), FS)
        np.testing.assert_allclose(agc(x).samples[-1000:], x.samples[-1000:], rtol=1e-6)

    def test_amplitude_step_reconverges(self):
        cfg = SyncConfig()
        n = 4 * cfg.agc_settling
        amp = np.r_[np.full(n, 0.5), np.full(n, 1.0)]
        y = np.abs(agc(IQFrame(amp * np.exp(1j * np.arange(2 * n)), FS), cfg).samples)
        settled = y[n + cfg.agc_settling: n + cfg.agc_settling + 1000]
        assert np.all(np.abs(settled - 1.0) < 0.02)

    def test_zero_input_rejected(self):
        with pytest.raises(ValueError):
            agc(IQFrame(np.zeros(100), FS))

    @pytest.mark.parametrize("scale", [1e-3, 0.37, 25.0])
    def test_scale_invariance(self, scale):
        rng = np.random.default_rng(0)
        x = pulse_shape(modulate(rng.integers(0, 2, 5000)), MOD).samples
        a = agc(IQFrame(x, FS)).samples
        b = agc(IQFrame(scale * x, FS)).samples
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)

    def test_bad_config(self):
        with pytest.raises(ValueError):
            SyncConfig(costas_loop_bw=0.5)
        with pytest.raises(ValueError):
            SyncConfig(sps_in=1)


class TestCostas:
    def test_zero_offset_is_transparent(self):
        x = IQFrame(np.tile([1.0, -1.0, -1.0, 1.0], 5000).astype(complex), FS)
        np.testing.assert_allclose(costas_bpsk(x).samples, x.samples, atol=1e-12)

    def test_static_phase_removed(self):
        rng = np.random.default_rng(1)
        s = (1.0 - 2.0 * rng.integers(0, 2, 20_000)) * np.exp(1j * np.pi / 8)
        y = costas_bpsk(IQFrame(s, FS)).samples[5000:]
        residual = np.angle(np.mean(y * np.sign(y.real)))
        assert abs(residual) < 0.02

    def test_cfo_200hz_ber_zero(self):
        rng = np.random.default_rng(2)
        ch = ChannelConfig.wired(awgn_snr_db=20.0, cfo_hz=200.0)
        assert _ber(_link(N_BITS, rng, ch), N_BITS) == 0.0

    def test_deterministic(self):
        x = IQFrame(np.exp(1j * 0.3) * np.tile([1.0, -1.0], 3000), FS)
        np.testing.assert_array_equal(costas_bpsk(x).samples, costas_bpsk(x).samples)


class TestMatchedFilter:
    def test_cascade_isi(self):
        h = rrc_taps(MOD)
        c = matched_filter(IQFrame(h.astype(complex), FS), MOD).samples.real
        mid = int(np.argmax(c))
        assert c[mid] == pytest.approx(1.0, abs=1e-3)
        k = np.arange(1, mid // 4 + 1) * 4
        assert np.max(np.abs(c[mid + k])) < 1e-3 * c[mid]

    def test_white_noise_power_scales_with_tap_energy(self):
        rng = np.random.default_rng(3)
        x = (rng.standard_normal(400_000) + 1j * rng.standard_normal(400_000)) / np.sqrt(2)
        y = matched_filter(IQFrame(x, FS), MOD).samples
        assert np.mean(np.abs(y) ** 2) == pytest.approx(np.sum(rrc_taps(MOD) ** 2), rel=0.02)


class TestGardner:
    def test_perfect_timing_returns_decimated_input(self):
        rng = np.random.default_rng(4)
        bits = rng.integers(0, 2, 20_000)
        y = matched_filter(pulse_shape(modulate(bits, MOD), MOD), MOD)
        out = gardner_sync(y).symbols
        d = 2 * group_delay(MOD)
        ideal = y.samples[d: d + bits.size * 4: 4]
        # skip the initial acquisition; align the steady state by cross-correlation
        k = out.size // 2
        seg = out[k:k + 2000].real
        corr = np.correlate(ideal.real, seg, mode="valid")
        lag = int(np.argmax(corr))
        np.testing.assert_allclose(out[k:k + 2000], ideal[lag:lag + 2000], atol=0.02)

    @pytest.mark.parametrize("offset", [0.3, 0.5, 1.2])
    def test_fractional_offset_ber_zero(self, offset):
        rng = np.random.default_rng(5)
        ch = ChannelConfig.wired(awgn_snr_db=20.0, timing_offset=offset * MOD.samples_per_symbol)
        assert _ber(_link(N_BITS, rng, ch), N_BITS) == 0.0

    def test_steady_state_timing_error_small(self):
        rng = np.random.default_rng(6)
        ch = ChannelConfig.wired(awgn_snr_db=40.0, timing_offset=0.4 * MOD.samples_per_symbol)
        sym = receive(_link(60_000, rng, ch, fp_strength=1e-6), MOD).symbols
        # residual timing error shows up as amplitude scatter around +-a
        rel = np.std(np.abs(sym.real)) / np.mean(np.abs(sym.real))
        assert rel < 0.05

    @pytest.mark.parametrize("seed", [4, 7])
    def test_no_transient_after_settling(self, seed):
        # the first received symbols must already look like the steady state: a residual
        # gear-shift transient widens the amplitude spread and distorts the first image
        rng = np.random.default_rng(seed)
        ch = ChannelConfig.wired(awgn_snr_db=45.0, phase_offset=float(rng.uniform(0, 2 * np.pi)))
        sym = receive(_link(60_000, rng, ch, fp_strength=0.1, offset=int(rng.integers(0, 2048))), MOD).symbols
        a = np.abs(sym.real)
        head, tail = np.std(a[:2000]), np.std(a[-20_000:])
        assert head == pytest.approx(tail, rel=0.05)

    def test_short_frame_rejected(self):
        with pytest.raises(ValueError):
            gardner_sync(IQFrame(np.ones(100, complex), FS))


class TestEndToEnd:
    @pytest.mark.parametrize("sigma", [0.0, 0.05])
    def test_noise_injection_keeps_ber_zero(self, sigma):
        rng = np.random.default_rng(7)
        ch = ChannelConfig.wired(awgn_snr_db=20.0, cfo_hz=200.0, timing_offset=0.3 * 4)
        assert _ber(_link(N_BITS, rng, ch, sigma=sigma, offset=77), N_BITS, 77) == 0.0


class TestBer:
    def test_identical(self):
        bits = byte_counter_bits(10_000)
        sym = SymbolStream(1.0 - 2.0 * bits)
        assert demap_and_ber(sym, periodic_reference(10_000)) == 0.0

    def test_inverted(self):
        bits = byte_counter_bits(10_000)
        sym = SymbolStream(-(1.0 - 2.0 * bits))
        assert demap_and_ber(sym, periodic_reference(10_000)) == 0.0

    def test_one_flip(self):
        bits = byte_counter_bits(N_BITS).copy()
        bits[12345] ^= 1
        assert demap_and_ber(SymbolStream(1.0 - 2.0 * bits), periodic_reference(N_BITS)) == pytest.approx(1e-5)

    def test_unknown_lag_found(self):
        bits = byte_counter_bits(8000, offset=999)
        seg, lag, sign = align(SymbolStream(1.0 - 2.0 * bits), periodic_reference(8000))
        np.testing.assert_array_equal(seg, bits)
        assert sign == 1

    def test_uncorrelated_raises(self):
        rng = np.random.default_rng(8)
        with pytest.raises(AlignmentError):
            demap_and_ber(SymbolStream(rng.standard_normal(5000)), periodic_reference(5000))

    def test_empty_raises(self):
        with pytest.raises(AlignmentError):
            demap_and_ber(SymbolStream(np.zeros(0)), periodic_reference(10))
