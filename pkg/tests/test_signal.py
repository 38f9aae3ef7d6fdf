import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from orbfp import PACKET_SAMPLES, SAMPLE_RATE
from orbfp.emitter import add_awgn
from orbfp.errors import ParameterError, SignalLengthError
from orbfp.signal import (
    AugmentRanges,
    IqBuffer,
    apply_augmentation,
    augment,
    design_rrc,
    estimate_snr,
    fine_frequency_correct,
    frequency_shift,
    interpolate,
    sdpsk_demodulate,
    sdpsk_modulate,
)


def noisy(buf, snr_db, seed):
    return buf.replace(add_awgn(buf.samples, snr_db, np.random.default_rng(seed)))


# --- IqBuffer ----------------------------------------------------------------------


def test_iqbuffer_rejects_empty_and_nonfinite():
    with pytest.raises(ParameterError):
        IqBuffer(np.array([], dtype=complex))
    with pytest.raises(ParameterError):
        IqBuffer(np.array([1.0, np.nan]))
    with pytest.raises(ParameterError):
        IqBuffer(np.ones(4), sample_rate=0)


def test_iqbuffer_interleaved_round_trip(rng):
    iq = rng.standard_normal((10, 2)).astype(np.float32)
    buf = IqBuffer.from_iq(iq)
    assert np.array_equal(buf.to_iq(np.float32), iq)


# --- RRC -----------------------------------------------------------------------------


def test_rrc_17_taps_unit_energy_symmetric():
    f = design_rrc(0.4, 8, 2)
    assert f.taps.size == 17
    assert abs(np.sum(f.taps**2) - 1.0) < 1e-9
    assert np.allclose(f.taps, f.taps[::-1], atol=1e-9)


@given(
    alpha=st.floats(0.05, 1.0),
    span=st.integers(4, 20),
    sps=st.integers(2, 8),
)
def test_rrc_invariants(alpha, span, sps):
    if (span * sps) % 2:
        with pytest.raises(ParameterError):
            design_rrc(alpha, span, sps)
        return
    f = design_rrc(alpha, span, sps)
    assert f.taps.size == span * sps + 1
    assert np.all(np.isfinite(f.taps))
    assert abs(np.sum(f.taps**2) - 1.0) < 1e-9
    assert np.max(np.abs(f.taps - f.taps[::-1])) < 1e-9
    assert np.argmax(f.taps) == f.taps.size // 2


def test_rrc_singular_points_use_limits():
    # sps=4, alpha=0.25 puts t = Ts/(4 alpha) exactly on a tap
    f = design_rrc(0.25, 8, 4)
    assert np.all(np.isfinite(f.taps))
    # the limit value sits between its neighbours rather than spiking
    k = f.taps.size // 2 + 4
    assert abs(f.taps[k]) < max(abs(f.taps[k - 1]), abs(f.taps[k + 1])) + 0.05


@pytest.mark.parametrize("args", [(0.0, 8, 2), (1.5, 8, 2), (0.4, 3, 2), (0.4, 8, 1)])
def test_rrc_parameter_errors(args):
    with pytest.raises(ParameterError):
        design_rrc(*args)


def test_rrc_occupied_bandwidth_within_one_sideband_limit():
    # Averaged PSD of many random cyclic packets, on the packet's DFT grid.
    rng = np.random.default_rng(7)
    psd = np.zeros(PACKET_SAMPLES)
    for _ in range(400):
        x = sdpsk_modulate(rng.integers(0, 2, 96)).samples
        psd += np.abs(np.fft.fft(x)) ** 2
    psd /= psd.max()
    freqs = np.fft.fftfreq(PACKET_SAMPLES, 1 / SAMPLE_RATE)
    above = freqs[psd >= 1e-4]  # -40 dB
    assert np.max(np.abs(above)) <= 2400 * 1.4


# --- SDPSK ---------------------------------------------------------------------------


def test_packet_length_and_rate():
    buf = sdpsk_modulate(np.zeros(96, dtype=int))
    assert len(buf) == 192
    assert buf.sample_rate == 9600
    assert abs(buf.power - 1.0) < 1e-12


def test_modulate_rejects_empty():
    with pytest.raises(ParameterError):
        sdpsk_modulate([])


def test_constant_steps_give_constant_envelope_after_matched_filter():
    from orbfp.signal import circular_filter, default_filter

    buf = sdpsk_modulate(np.ones(64, dtype=int))
    r = circular_filter(buf.samples, default_filter().taps)[::2]
    env = np.abs(r)
    assert np.ptp(env) / env.mean() < 1e-6
    steps = np.angle(r[1:] * np.conj(r[:-1]))
    assert np.allclose(steps, math.pi / 2, atol=1e-6)


def test_noiseless_round_trip_1e5_bits(rng):
    bits = rng.integers(0, 2, 100_000)
    out, soft = sdpsk_demodulate(sdpsk_modulate(bits))
    assert np.count_nonzero(out != bits) == 0
    assert soft.shape == bits.shape


@given(st.lists(st.integers(0, 1), min_size=1, max_size=10_000), st.booleans())
def test_round_trip_property(bits, one_is_positive):
    bits = np.array(bits)
    buf = sdpsk_modulate(bits, one_is_positive=one_is_positive)
    out, _ = sdpsk_demodulate(buf, one_is_positive=one_is_positive)
    assert np.array_equal(out, bits)


@given(st.floats(0, 2 * math.pi, exclude_max=True))
def test_global_rotation_leaves_differential_bits_unchanged(phi):
    bits = np.random.default_rng(3).integers(0, 2, 96)
    buf = sdpsk_modulate(bits)
    rotated = augment(buf, AugmentRanges(phase=(phi, phi), scale=(1, 1), freq_frac=(0, 0)))
    a, _ = sdpsk_demodulate(buf)
    b, _ = sdpsk_demodulate(rotated)
    # bit 0 is decided against the absolute reference; the rest are differential
    assert np.array_equal(a[1:], b[1:])


def test_ber_decreases_with_snr():
    # Monte-Carlo oracle, 1e5 bits per point.
    rng = np.random.default_rng(11)
    bits = rng.integers(0, 2, 100_000)
    clean = sdpsk_modulate(bits)
    ber = {}
    for snr in (0, 6):
        out, _ = sdpsk_demodulate(noisy(clean, snr, 5))
        ber[snr] = np.mean(out != bits)
    assert ber[6] < ber[0]
    assert ber[0] > 0.01


def test_demodulate_short_buffer():
    with pytest.raises(SignalLengthError):
        sdpsk_demodulate(IqBuffer(np.ones(1, dtype=complex)))


# --- interpolation -------------------------------------------------------------------


def test_interpolate_192_to_12288():
    buf = sdpsk_modulate(np.zeros(96, dtype=int))
    out = interpolate(buf, 64)
    assert len(out) == 12288
    assert out.sample_rate == 64 * buf.sample_rate
    assert np.allclose(out.samples[::64], buf.samples, atol=1e-12)


def test_interpolate_constant_and_identity(rng):
    c = IqBuffer(np.full(32, 0.3 - 0.2j))
    assert np.allclose(interpolate(c, 5).samples, 0.3 - 0.2j, atol=1e-12)
    x = IqBuffer(rng.standard_normal(50) + 1j * rng.standard_normal(50))
    assert np.max(np.abs(interpolate(x, 1).samples - x.samples)) < 1e-9


def test_interpolation_matrix_matches_spectral_route(rng):
    from orbfp.signal import fft_interpolate, interpolation_matrix

    x = rng.standard_normal((3, 192))
    m = interpolation_matrix(192, 64)
    assert m.shape == (12288, 192) and np.isrealobj(m)
    assert np.allclose(x @ m.T, fft_interpolate(x, 64).real, atol=1e-12)


def test_interpolate_factor_zero():
    with pytest.raises(ParameterError):
        interpolate(IqBuffer(np.ones(8)), 0)


def test_interpolated_tone_is_spectrally_clean():
    n, k0, factor = 192, 13, 64
    tone = IqBuffer(np.exp(2j * np.pi * k0 * np.arange(n) / n))
    out = interpolate(tone, factor).samples
    spec = np.abs(np.fft.fft(out)) ** 2
    peak = int(np.argmax(spec))
    assert peak == k0
    spur = np.max(np.delete(spec, peak))
    assert 10 * np.log10(spur / spec[peak]) < -60
    # same physical frequency at the new rate
    t = np.arange(n * factor) / (n * factor)
    assert np.allclose(out, np.exp(2j * np.pi * k0 * t), atol=1e-9)


# --- augmentation --------------------------------------------------------------------


def test_phase_pi_negates_samples(rng):
    buf = IqBuffer(rng.standard_normal(192) + 1j * rng.standard_normal(192))
    out = augment(buf, AugmentRanges(phase=(math.pi, math.pi), scale=(1, 1), freq_frac=(0, 0)))
    assert np.allclose(out.to_iq(np.float64), -buf.to_iq(np.float64), atol=1e-12)


def test_scale_09_scales_power():
    buf = sdpsk_modulate(np.arange(96) % 2)
    out = augment(buf, AugmentRanges(phase=(0, 0), scale=(0.9, 0.9), freq_frac=(0, 0)))
    assert abs(out.power / buf.power - 0.81) < 1e-6


def test_frequency_augmentation_moves_dc_tone():
    n = 1000
    buf = IqBuffer(np.ones(n, dtype=complex))
    out = augment(buf, AugmentRanges(phase=(0, 0), scale=(1, 1), freq_frac=(0.01, 0.01)))
    peak = np.argmax(np.abs(np.fft.fft(out.samples)))
    assert np.fft.fftfreq(n)[peak] == pytest.approx(0.01)


def test_augment_identity_and_determinism(rng):
    buf = IqBuffer(rng.standard_normal(64) + 1j * rng.standard_normal(64))
    ident = augment(buf, AugmentRanges.identity())
    assert np.max(np.abs(ident.samples - buf.samples)) < 1e-9
    a = augment(buf, rng_seed=42)
    b = augment(buf, rng_seed=42)
    assert np.array_equal(a.samples, b.samples)


def test_augment_ranges_bounds():
    AugmentRanges(phase=(1.0, 1.0))
    for kwargs in ({"phase": (-0.1, 1.0)}, {"scale": (0.8, 1.0)}, {"freq_frac": (-0.02, 0.0)}):
        with pytest.raises(ParameterError):
            AugmentRanges(**kwargs)


@given(st.floats(0, 2 * math.pi, exclude_max=True))
def test_phase_only_augmentation_property(phi):
    bits = np.random.default_rng(5).integers(0, 2, 200)
    buf = sdpsk_modulate(bits)
    out = apply_augmentation(buf.samples, phi, 1.0, 0.0)
    assert np.array_equal(sdpsk_demodulate(buf.replace(out))[0][1:], bits[1:])


# --- SNR estimation ------------------------------------------------------------------


def test_snr_noiseless_high():
    rng = np.random.default_rng(2)
    for _ in range(20):
        assert estimate_snr(sdpsk_modulate(rng.integers(0, 2, 96))) >= 40


def test_snr_noise_only_low():
    rng = np.random.default_rng(3)
    for _ in range(100):
        x = rng.standard_normal(192) + 1j * rng.standard_normal(192)
        assert estimate_snr(IqBuffer(x)) <= 3


def test_snr_monotone_in_injected_snr():
    rng = np.random.default_rng(4)
    means = []
    for snr in (0, 6, 12, 18):
        est = [
            estimate_snr(noisy(sdpsk_modulate(rng.integers(0, 2, 96)), snr, int(rng.integers(1 << 30))))
            for _ in range(100)
        ]
        means.append(np.mean(est))
    assert all(b >= a for a, b in zip(means, means[1:]))


def test_snr_needs_four_symbols():
    with pytest.raises(SignalLengthError):
        estimate_snr(IqBuffer(np.ones(6, dtype=complex)))


# --- fine frequency correction -------------------------------------------------------


def test_zero_offset_estimate():
    buf = sdpsk_modulate(np.random.default_rng(8).integers(0, 2, 96))
    fc = fine_frequency_correct(buf)
    assert fc.ok and abs(fc.offset_hz) < 1


def test_recovers_50hz_at_20db():
    rng = np.random.default_rng(9)
    for trial in range(20):
        clean = sdpsk_modulate(rng.integers(0, 2, 96), ref_phase=rng.uniform(0, 2 * np.pi))
        shifted = clean.replace(frequency_shift(clean.samples, 50.0, clean.sample_rate))
        fc = fine_frequency_correct(noisy(shifted, 20, trial))
        assert fc.ok
        assert abs(fc.offset_hz - 50.0) <= 2.0


def test_correct_then_demodulate_is_error_free():
    rng = np.random.default_rng(10)
    for trial in range(20):
        bits = rng.integers(0, 2, 96)
        clean = sdpsk_modulate(bits)
        off = rng.uniform(-300, 300)
        shifted = clean.replace(frequency_shift(clean.samples, off, clean.sample_rate))
        fc = fine_frequency_correct(noisy(shifted, 25, trial))
        out, _ = sdpsk_demodulate(fc.buffer)
        assert np.array_equal(out[1:], bits[1:])


def test_failed_correction_returns_input_unmodified():
    x = IqBuffer(np.random.default_rng(0).standard_normal(192) * 0 + 1e-3 * np.exp(
        2j * np.pi * np.random.default_rng(1).random(192)))
    fc = fine_frequency_correct(x)
    assert not fc.ok
    assert fc.offset_hz == 0.0
    assert fc.buffer is x


def test_fine_correction_length_precondition():
    with pytest.raises(SignalLengthError):
        fine_frequency_correct(IqBuffer(np.ones(30, dtype=complex)))
