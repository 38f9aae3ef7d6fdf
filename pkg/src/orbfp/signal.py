"""Baseband DSP for SDPSK packets.

All routines work on complex128 internally and treat a packet buffer as one
period of a cyclic waveform: pulse shaping and matched filtering are circular
convolutions, so a packet of ``n`` bits is exactly ``n * sps`` samples long and
symbol ``k`` is centred on sample ``k * sps``.

Bit mapping: with ``one_is_positive=True`` (the default) a 1 bit advances the
carrier phase by +pi/2 and a 0 bit by -pi/2. The step for bit 0 is taken from an
explicit reference phase (the last symbol of the previous packet in a
continuous stream), which is the only decision not invariant to a global phase
rotation of the buffer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize_scalar

from . import SAMPLE_RATE, SPS
from .errors import ParameterError, SignalLengthError

__all__ = [
    "IqBuffer",
    "RrcFilter",
    "AugmentRanges",
    "FrequencyCorrection",
    "design_rrc",
    "default_filter",
    "sdpsk_modulate",
    "sdpsk_demodulate",
    "demodulate_bits",
    "interpolate",
    "fft_interpolate",
    "interpolation_matrix",
    "augment",
    "apply_augmentation",
    "augment_batch",
    "estimate_snr",
    "fine_frequency_correct",
    "frequency_shift",
]


@dataclass(frozen=True)
class IqBuffer:
    """Complex baseband recording.

    ``samples`` is stored as complex128; use :meth:`to_iq` for the interleaved
    ``(n, 2)`` float view used on disk and by the network.
    """

    samples: np.ndarray
    sample_rate: float = SAMPLE_RATE

    def __post_init__(self):
        x = np.asarray(self.samples)
        if x.ndim == 2 and x.shape[1] == 2 and not np.iscomplexobj(x):
            x = x[:, 0] + 1j * x[:, 1]
        x = np.ascontiguousarray(x, dtype=np.complex128).reshape(-1)
        if x.size == 0:
            raise ParameterError("IqBuffer must contain at least one sample")
        if not np.all(np.isfinite(x)):
            raise ParameterError("IqBuffer samples must be finite")
        if not (self.sample_rate > 0 and math.isfinite(self.sample_rate)):
            raise ParameterError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    @classmethod
    def from_iq(cls, iq, sample_rate: float = SAMPLE_RATE) -> "IqBuffer":
        iq = np.asarray(iq, dtype=np.float64)
        if iq.ndim != 2 or iq.shape[1] != 2:
            raise ParameterError(f"expected (n, 2) I/Q array, got shape {iq.shape}")
        return cls(iq[:, 0] + 1j * iq[:, 1], sample_rate)

    def to_iq(self, dtype=np.float32) -> np.ndarray:
        return np.stack([self.samples.real, self.samples.imag], axis=1).astype(dtype)

    def replace(self, samples) -> "IqBuffer":
        return IqBuffer(samples, self.sample_rate)

    @property
    def power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))

    def __len__(self) -> int:
        return self.samples.size


@dataclass(frozen=True)
class RrcFilter:
    taps: np.ndarray
    alpha: float
    span_symbols: int
    samples_per_symbol: int

    @property
    def delay(self) -> int:
        return (self.taps.size - 1) // 2


def design_rrc(alpha: float = 0.4, span_symbols: int = 24, sps: int = SPS) -> RrcFilter:
    """Unit-energy root-raised-cosine taps.

    The closed form has removable singularities at t = 0 and t = +-1/(4 alpha)
    (in symbol periods); both are replaced by their limits.
    """
    if not (0.0 < alpha <= 1.0):
        raise ParameterError(f"alpha must be in (0, 1], got {alpha}")
    if int(span_symbols) != span_symbols or span_symbols < 4:
        raise ParameterError(f"span_symbols must be an integer >= 4, got {span_symbols}")
    if int(sps) != sps or sps < 2:
        raise ParameterError(f"sps must be an integer >= 2, got {sps}")
    span_symbols, sps = int(span_symbols), int(sps)
    if (span_symbols * sps) % 2:
        raise ParameterError("span_symbols * sps must be even so the filter has a centre tap")

    n = span_symbols * sps + 1
    t = (np.arange(n) - (n - 1) / 2) / sps
    taps = np.empty(n)
    a = alpha
    eps = 1e-9
    for i, ti in enumerate(t):
        if abs(ti) < eps:
            taps[i] = 1.0 - a + 4.0 * a / math.pi
        elif abs(abs(4.0 * a * ti) - 1.0) < eps:
            taps[i] = (a / math.sqrt(2.0)) * (
                (1.0 + 2.0 / math.pi) * math.sin(math.pi / (4.0 * a))
                + (1.0 - 2.0 / math.pi) * math.cos(math.pi / (4.0 * a))
            )
        else:
            num = math.sin(math.pi * ti * (1.0 - a)) + 4.0 * a * ti * math.cos(math.pi * ti * (1.0 + a))
            den = math.pi * ti * (1.0 - (4.0 * a * ti) ** 2)
            taps[i] = num / den
    taps /= math.sqrt(np.sum(taps**2))
    # exact symmetry regardless of rounding in the loop above
    taps = 0.5 * (taps + taps[::-1])
    taps.setflags(write=False)
    return RrcFilter(taps, float(alpha), span_symbols, sps)


_DEFAULT_FILTERS: dict = {}


def default_filter(sps: int = SPS) -> RrcFilter:
    """The Orbcomm downlink pulse: alpha 0.4, 24-symbol span."""
    if sps not in _DEFAULT_FILTERS:
        _DEFAULT_FILTERS[sps] = design_rrc(0.4, 24, sps)
    return _DEFAULT_FILTERS[sps]


def _circular_kernel_fft(taps: np.ndarray, length: int) -> np.ndarray:
    """FFT of ``taps`` wrapped onto a circle of ``length`` with the centre tap at 0."""
    h = np.zeros(length)
    centre = (taps.size - 1) // 2
    idx = (np.arange(taps.size) - centre) % length
    np.add.at(h, idx, taps)
    return np.fft.fft(h)


def circular_filter(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Zero-phase circular convolution along the last axis."""
    length = x.shape[-1]
    return np.fft.ifft(np.fft.fft(x, axis=-1) * _circular_kernel_fft(taps, length), axis=-1)


def bit_steps(bits: np.ndarray, one_is_positive: bool) -> np.ndarray:
    sign = 1.0 if one_is_positive else -1.0
    return np.where(bits.astype(bool), sign, -sign) * (math.pi / 2)


def sdpsk_modulate(
    bits,
    sps: int = SPS,
    filt: RrcFilter | None = None,
    sample_rate: float = SAMPLE_RATE,
    *,
    ref_phase: float = 0.0,
    one_is_positive: bool = True,
) -> IqBuffer:
    """Map bits to +-pi/2 phase steps, RRC-shape cyclically, normalise to unit power."""
    bits = np.asarray(bits).astype(np.uint8).reshape(-1)
    if bits.size == 0:
        raise ParameterError("cannot modulate an empty bit sequence")
    if np.any(bits > 1):
        raise ParameterError("bits must be 0 or 1")
    filt = filt or default_filter(sps)
    if filt.samples_per_symbol != sps:
        raise ParameterError("filter samples_per_symbol does not match sps")
    phases = ref_phase + np.cumsum(bit_steps(bits, one_is_positive))
    up = np.zeros(bits.size * sps, dtype=np.complex128)
    up[::sps] = np.exp(1j * phases)
    y = circular_filter(up, filt.taps)
    y /= math.sqrt(np.mean(np.abs(y) ** 2))
    return IqBuffer(y, sample_rate)


def _differential(samples: np.ndarray, sps: int, filt: RrcFilter, ref_phase: float):
    """Matched-filter, sample at symbol centres and form r_k conj(r_{k-1})."""
    r = circular_filter(samples, filt.taps)[..., ::sps]
    prev = np.empty_like(r)
    prev[..., 1:] = r[..., :-1]
    prev[..., 0] = np.abs(r[..., 0]) * np.exp(1j * ref_phase)
    return r * np.conj(prev)


def sdpsk_demodulate(
    buf: IqBuffer,
    sps: int = SPS,
    filt: RrcFilter | None = None,
    *,
    ref_phase: float = 0.0,
    one_is_positive: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Differential detection.

    Returns ``(bits, soft)`` where ``soft`` is ``|Im(r_k conj(r_{k-1}))|``, the
    magnitude of the decision statistic. Bits 1..n-1 are invariant to a global
    phase rotation; bit 0 is decided against ``ref_phase``.
    """
    if len(buf) < sps:
        raise SignalLengthError(f"buffer of {len(buf)} samples is shorter than one symbol ({sps})")
    filt = filt or default_filter(sps)
    n_sym = len(buf) // sps
    z = _differential(buf.samples[: n_sym * sps], sps, filt, ref_phase)
    positive = z.imag > 0
    bits = (positive if one_is_positive else ~positive).astype(np.uint8)
    return bits, np.abs(z.imag)


def demodulate_bits(samples: np.ndarray, sps: int = SPS, filt: RrcFilter | None = None) -> np.ndarray:
    """Hard decisions for a batch of complex packets shaped ``(..., n * sps)``."""
    filt = filt or default_filter(sps)
    z = _differential(np.asarray(samples, dtype=np.complex128), sps, filt, 0.0)
    return (z.imag > 0).astype(np.uint8)


def fft_interpolate(x: np.ndarray, factor: int, axis: int = -1) -> np.ndarray:
    """Band-limited interpolation by spectral zero padding (cyclic signal model)."""
    if int(factor) != factor or factor < 1:
        raise ParameterError(f"interpolation factor must be an integer >= 1, got {factor}")
    factor = int(factor)
    x = np.asarray(x)
    if factor == 1:
        return x.copy()
    x = np.moveaxis(x, axis, -1)
    n = x.shape[-1]
    spec = np.fft.fft(x, axis=-1)
    out = np.zeros(x.shape[:-1] + (n * factor,), dtype=np.complex128)
    half = n // 2
    if n % 2 == 0:
        out[..., :half] = spec[..., :half]
        out[..., n * factor - half + 1 :] = spec[..., half + 1 :]
        out[..., half] = spec[..., half] / 2
        out[..., n * factor - half] = spec[..., half] / 2
    else:
        out[..., : half + 1] = spec[..., : half + 1]
        out[..., n * factor - half :] = spec[..., half + 1 :]
    y = np.fft.ifft(out, axis=-1) * factor
    if not np.iscomplexobj(x):
        y = y.real
    return np.moveaxis(y, -1, axis)


def interpolation_matrix(n: int, factor: int) -> np.ndarray:
    """Real ``(n * factor, n)`` matrix equal to :func:`fft_interpolate` on real input."""
    return fft_interpolate(np.eye(n), factor, axis=0)


def interpolate(buf: IqBuffer, factor: int) -> IqBuffer:
    y = fft_interpolate(buf.samples, factor)
    return IqBuffer(y, buf.sample_rate * int(factor))


@dataclass(frozen=True)
class AugmentRanges:
    """Sampling intervals for training-time augmentation.

    ``freq_frac`` is a fraction of the sample rate. Intervals may be zero width.
    """

    phase: tuple[float, float] = (0.0, 2 * math.pi)
    scale: tuple[float, float] = (0.9, 1.0)
    freq_frac: tuple[float, float] = (-0.01, 0.01)

    def __post_init__(self):
        for name, (lo, hi), (blo, bhi) in (
            ("phase", self.phase, (0.0, 2 * math.pi)),
            ("scale", self.scale, (0.9, 1.0)),
            ("freq_frac", self.freq_frac, (-0.01, 0.01)),
        ):
            if not (blo <= lo <= hi <= bhi):
                raise ParameterError(f"{name} range {(lo, hi)} must lie within [{blo}, {bhi}]")

    @classmethod
    def identity(cls) -> "AugmentRanges":
        return cls(phase=(0.0, 0.0), scale=(1.0, 1.0), freq_frac=(0.0, 0.0))


def apply_augmentation(samples: np.ndarray, phase: float, scale: float, freq_frac: float) -> np.ndarray:
    n = np.arange(np.shape(samples)[-1])
    return scale * np.exp(1j * phase) * samples * np.exp(2j * np.pi * freq_frac * n)


def _draw(rng: np.random.Generator, interval, size=None):
    lo, hi = interval
    if lo == hi:
        return np.full(size, lo) if size is not None else lo
    return rng.uniform(lo, hi, size)


def augment(buf: IqBuffer, ranges: AugmentRanges | None = None, rng_seed=None) -> IqBuffer:
    """Random rotation, gain and frequency shift; deterministic for a given seed."""
    ranges = ranges or AugmentRanges()
    rng = np.random.default_rng(rng_seed)
    phase = _draw(rng, ranges.phase)
    scale = _draw(rng, ranges.scale)
    freq = _draw(rng, ranges.freq_frac)
    return buf.replace(apply_augmentation(buf.samples, phase, scale, freq))


def augment_batch(x: np.ndarray, ranges: AugmentRanges, rng: np.random.Generator) -> np.ndarray:
    """Vectorised :func:`augment` over complex packets shaped ``(B, L)``."""
    b = x.shape[0]
    phase = _draw(rng, ranges.phase, b)[:, None]
    scale = _draw(rng, ranges.scale, b)[:, None]
    freq = _draw(rng, ranges.freq_frac, b)[:, None]
    n = np.arange(x.shape[1])[None, :]
    return scale * np.exp(1j * (phase + 2 * np.pi * freq * n)) * x


def estimate_snr(buf: IqBuffer, sps: int = SPS, alpha: float = 0.4, guard: float = 0.05) -> float:
    """SNR in dB over the full sampled bandwidth.

    The noise density is the mean periodogram level of the bins outside the
    occupied band ``|f| > (1 + alpha) Rs / 2 + guard * fs``; it is assumed
    white across the whole band. Signal power is total power minus that noise
    power. Results are clipped to [-30, 100] dB.
    """
    x = buf.samples
    if x.size < 4 * sps:
        raise SignalLengthError("SNR estimation needs at least 4 symbols")
    n = x.size
    freqs = np.fft.fftfreq(n)  # cycles/sample
    edge = (1.0 + alpha) / (2.0 * sps) + guard
    oob = np.abs(freqs) > edge
    if not np.any(oob):
        raise ParameterError("no out-of-band bins available at this oversampling factor")
    periodogram = np.abs(np.fft.fft(x)) ** 2 / n
    noise = float(np.mean(periodogram[oob]))
    total = float(np.mean(np.abs(x) ** 2))
    signal = total - noise
    if noise <= 0:
        return 100.0
    if signal <= 0:
        return -30.0
    return float(np.clip(10 * math.log10(signal / noise), -30.0, 100.0))


def frequency_shift(samples: np.ndarray, offset_hz: float, sample_rate: float) -> np.ndarray:
    n = np.arange(samples.shape[-1])
    return samples * np.exp(2j * np.pi * offset_hz * n / sample_rate)


class FrequencyCorrection(NamedTuple):
    buffer: IqBuffer
    offset_hz: float
    ok: bool


def fine_frequency_correct(
    buf: IqBuffer,
    sps: int = SPS,
    filt: RrcFilter | None = None,
    *,
    min_peak_ratio: float = 9.0,
) -> FrequencyCorrection:
    """Estimate and remove a residual carrier offset.

    Method: matched filter, take one sample per symbol, raise to the 4th power
    (SDPSK symbols lie on a pi/2 grid, so the modulation collapses to a tone at
    four times the offset) and locate the periodogram peak, refined by bounded
    scalar search. Unambiguous range is +-symbol_rate / 8.

    When the peak is less than ``min_peak_ratio`` times the mean periodogram
    level the estimate is rejected: ``ok`` is False and the buffer is returned
    unmodified with ``offset_hz`` 0.
    """
    if len(buf) < 16 * sps:
        raise SignalLengthError("fine frequency correction needs at least 16 symbols")
    filt = filt or default_filter(sps)
    n_sym = len(buf) // sps
    r = circular_filter(buf.samples[: n_sym * sps], filt.taps)[::sps]
    z = r**4
    nfft = max(4096, 16 * z.size)
    spec = np.abs(np.fft.fft(z, nfft)) ** 2
    peak = int(np.argmax(spec))
    if spec[peak] < min_peak_ratio * float(np.mean(spec)):
        return FrequencyCorrection(buf, 0.0, False)

    k = np.arange(z.size)

    def neg_power(w):
        return -abs(np.sum(z * np.exp(-1j * w * k))) ** 2

    w0 = 2 * np.pi * peak / nfft
    if w0 > np.pi:
        w0 -= 2 * np.pi
    step = 2 * np.pi / nfft
    res = minimize_scalar(neg_power, bounds=(w0 - step, w0 + step), method="bounded", options={"xatol": 1e-10})
    w4 = float(res.x)
    symbol_rate = buf.sample_rate / sps
    offset = w4 / (4 * 2 * np.pi) * symbol_rate
    corrected = frequency_shift(buf.samples, -offset, buf.sample_rate)
    return FrequencyCorrection(buf.replace(corrected), offset, True)
