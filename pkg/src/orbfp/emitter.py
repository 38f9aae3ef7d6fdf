"""Simulated transmitter fingerprints, propagation and replay attacks.

The impairment model and its magnitudes are synthetic. They are kept small
enough that every default profile still decodes cleanly at 20 dB and large
enough for the embedding network to separate emitters; both properties are
checked by the test suite rather than assumed.

Transmit chain order: passband ripple (short real FIR), IQ imbalance, DC
offset, cubic PA compression, carrier frequency offset, phase-noise random
walk.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterator

import numpy as np

from . import PACKET_BITS, SAMPLE_RATE, SPS
from .dataset import FLAG_SPOOFED, PacketRecord
from .errors import ParameterError
from .protocol import build_sync_packet, bytes_to_bits
from .signal import (
    IqBuffer,
    estimate_snr,
    fine_frequency_correct,
    frequency_shift,
    sdpsk_modulate,
)

CARRIER_HZ = 137.5e6
MAX_DOPPLER_HZ = 3500.0
RIPPLE_TAPS = 5

# Default draw bounds for satellite transmitters.
SAT_BOUNDS = {
    "iq_gain_imbalance": 0.5,  # dB, symmetric
    "iq_phase_skew": 0.05,  # rad, symmetric
    "dc_offset": 0.02,  # max magnitude
    "freq_offset_ppm": 0.5,  # symmetric
    "phase_noise_std": (0.001, 0.006),  # rad/sample
    "pa_cubic_coeff": (0.0, 0.08),
    "ripple_depth": 0.3,
}
# Cheap transmit-capable SDR used by the attacker.
ATTACKER_BOUNDS = {
    "iq_gain_imbalance": 1.0,
    "iq_phase_skew": 0.1,
    "dc_offset": 0.05,
    "freq_offset_ppm": 2.0,
    "phase_noise_std": (0.004, 0.012),
    "pa_cubic_coeff": (0.05, 0.15),
    "ripple_depth": 0.25,
}
# Two profiles count as separated when some parameter differs by at least this
# fraction of its default range.
MIN_PROFILE_GAP = 0.05


@dataclass(frozen=True)
class EmitterProfile:
    sat_id: int
    iq_gain_imbalance: float = 0.0
    iq_phase_skew: float = 0.0
    dc_offset: complex = 0j
    freq_offset_ppm: float = 0.0
    phase_noise_std: float = 0.0
    pa_cubic_coeff: float = 0.0
    ripple_seed: int = 0
    ripple_depth: float = 0.0

    @classmethod
    def null(cls, sat_id: int = 0) -> "EmitterProfile":
        return cls(sat_id)

    @classmethod
    def from_seed(cls, sat_id: int, seed: int = 0, bounds: dict | None = None) -> "EmitterProfile":
        """Profile as a pure function of ``(sat_id, seed)``."""
        b = bounds or SAT_BOUNDS
        rng = np.random.default_rng([seed, 0x5A7, sat_id])
        dc_mag = rng.uniform(0, b["dc_offset"])
        return cls(
            sat_id=int(sat_id),
            iq_gain_imbalance=float(rng.uniform(-1, 1) * b["iq_gain_imbalance"]),
            iq_phase_skew=float(rng.uniform(-1, 1) * b["iq_phase_skew"]),
            dc_offset=complex(dc_mag * np.exp(1j * rng.uniform(0, 2 * math.pi))),
            freq_offset_ppm=float(rng.uniform(-1, 1) * b["freq_offset_ppm"]),
            phase_noise_std=float(rng.uniform(*b["phase_noise_std"])),
            pa_cubic_coeff=float(rng.uniform(*b["pa_cubic_coeff"])),
            ripple_seed=int(rng.integers(0, 2**31)),
            ripple_depth=float(b["ripple_depth"]),
        )

    @property
    def ripple_taps(self) -> np.ndarray:
        """Unit-energy real FIR with a unit centre tap and echoes up to ``ripple_depth``."""
        taps = np.zeros(RIPPLE_TAPS)
        taps[RIPPLE_TAPS // 2] = 1.0
        if self.ripple_depth > 0:
            rng = np.random.default_rng(self.ripple_seed)
            echo = rng.uniform(-self.ripple_depth, self.ripple_depth, RIPPLE_TAPS - 1)
            taps[np.arange(RIPPLE_TAPS) != RIPPLE_TAPS // 2] = echo
            taps /= math.sqrt(np.sum(taps**2))
        return taps

    def feature_vector(self) -> np.ndarray:
        """Parameters scaled by their default ranges, for separation checks."""
        b = SAT_BOUNDS
        return np.concatenate(
            [
                [
                    self.iq_gain_imbalance / (2 * b["iq_gain_imbalance"]),
                    self.iq_phase_skew / (2 * b["iq_phase_skew"]),
                    self.dc_offset.real / (2 * b["dc_offset"]),
                    self.dc_offset.imag / (2 * b["dc_offset"]),
                    self.freq_offset_ppm / (2 * b["freq_offset_ppm"]),
                    self.phase_noise_std / (b["phase_noise_std"][1] - b["phase_noise_std"][0]),
                    self.pa_cubic_coeff / (b["pa_cubic_coeff"][1] - b["pa_cubic_coeff"][0]),
                ],
                self.ripple_taps / (2 * max(b["ripple_depth"], 1e-12)),
            ]
        )


def attacker_profile(seed: int = 0) -> EmitterProfile:
    return EmitterProfile.from_seed(0, seed + 0xA77AC4, ATTACKER_BOUNDS)


def _circular_fir(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    h = np.zeros(x.size)
    idx = (np.arange(taps.size) - taps.size // 2) % x.size
    np.add.at(h, idx, taps)
    return np.fft.ifft(np.fft.fft(x) * np.fft.fft(h))


def apply_fingerprint(clean: IqBuffer, profile: EmitterProfile, rng_seed=None, carrier_hz: float = CARRIER_HZ) -> IqBuffer:
    x = clean.samples
    if profile.ripple_depth > 0:
        x = _circular_fir(x, profile.ripple_taps)
    g = 10 ** (profile.iq_gain_imbalance / 20)
    phi = profile.iq_phase_skew
    if g != 1.0 or phi != 0.0:
        mu = (1 + g * np.exp(-1j * phi)) / 2
        nu = (1 - g * np.exp(1j * phi)) / 2
        x = mu * x + nu * np.conj(x)
    if profile.dc_offset:
        x = x + profile.dc_offset
    if profile.pa_cubic_coeff:
        x = x * (1 - profile.pa_cubic_coeff * np.abs(x) ** 2)
    if profile.freq_offset_ppm:
        x = frequency_shift(x, profile.freq_offset_ppm * 1e-6 * carrier_hz, clean.sample_rate)
    if profile.phase_noise_std > 0:
        rng = np.random.default_rng(rng_seed)
        x = x * np.exp(1j * np.cumsum(rng.normal(0, profile.phase_noise_std, x.size)))
    return clean.replace(x)


@dataclass(frozen=True)
class ChannelConfig:
    """``snr_db=None`` (or +inf) disables the noise."""

    snr_db: float | None = None
    doppler_start_hz: float = 0.0
    doppler_slope_hz_s: float = 0.0
    carrier_phase: float = 0.0
    rng_seed: int | None = None

    def __post_init__(self):
        if self.snr_db is not None and math.isnan(self.snr_db):
            raise ParameterError("snr_db must not be NaN")
        if abs(self.doppler_start_hz) > MAX_DOPPLER_HZ:
            raise ParameterError(f"doppler_start_hz {self.doppler_start_hz} outside +-{MAX_DOPPLER_HZ}")

    @property
    def noiseless(self) -> bool:
        return self.snr_db is None or math.isinf(self.snr_db)


def doppler_phase(n: int, start_hz: float, slope_hz_s: float, sample_rate: float) -> np.ndarray:
    t = np.arange(n) / sample_rate
    return 2 * np.pi * (start_hz * t + 0.5 * slope_hz_s * t**2)


def add_awgn(x: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    power = np.mean(np.abs(x) ** 2)
    sigma2 = power * 10 ** (-snr_db / 10)
    noise = rng.standard_normal(x.size) + 1j * rng.standard_normal(x.size)
    return x + math.sqrt(sigma2 / 2) * noise


def apply_channel(buf: IqBuffer, ch: ChannelConfig) -> IqBuffer:
    x = buf.samples
    if ch.doppler_start_hz or ch.doppler_slope_hz_s:
        x = x * np.exp(1j * doppler_phase(x.size, ch.doppler_start_hz, ch.doppler_slope_hz_s, buf.sample_rate))
    if ch.carrier_phase:
        x = x * np.exp(1j * ch.carrier_phase)
    if not ch.noiseless:
        x = add_awgn(x, ch.snr_db, np.random.default_rng(ch.rng_seed))
    return buf.replace(x)


def coarse_correct(buf: IqBuffer, doppler_start_hz: float, doppler_slope_hz_s: float) -> IqBuffer:
    """Remove a predicted Doppler ramp (stands in for ephemeris prediction)."""
    ph = doppler_phase(len(buf), doppler_start_hz, doppler_slope_hz_s, buf.sample_rate)
    return buf.replace(buf.samples * np.exp(-1j * ph))


@dataclass(frozen=True)
class SpoofConfig:
    """Record-and-replay through an attacker SDR over a wired link.

    ``link_snr_db`` is the SNR of the wired link before attenuation; ``None``
    adds no extra noise.
    """

    attacker_profile: EmitterProfile = field(default_factory=attacker_profile)
    quantization_bits: int = 8
    attenuation_db: float = 10.0
    link_snr_db: float | None = None

    def __post_init__(self):
        if not (4 <= int(self.quantization_bits) <= 16):
            raise ParameterError(f"quantization_bits must be in [4, 16], got {self.quantization_bits}")


def quantize(x: np.ndarray, bits: int) -> np.ndarray:
    """Mid-tread uniform quantiser with full scale at the largest |I| or |Q|."""
    full_scale = float(max(np.max(np.abs(x.real)), np.max(np.abs(x.imag))))
    if full_scale == 0:
        return x.copy()
    levels = 2 ** (bits - 1)
    step = full_scale / (levels - 1)

    def q(v):
        return np.clip(np.round(v / step), -levels, levels - 1) * step

    return q(x.real) + 1j * q(x.imag)


def spoof_replay(buf: IqBuffer, cfg: SpoofConfig, rng_seed=None) -> IqBuffer:
    rng = np.random.default_rng(rng_seed)
    x = quantize(buf.samples, int(cfg.quantization_bits))
    x = apply_fingerprint(buf.replace(x), cfg.attacker_profile, rng.integers(2**63)).samples
    if cfg.link_snr_db is not None:
        x = add_awgn(x, cfg.link_snr_db - cfg.attenuation_db, rng)
    x = x * 10 ** (-cfg.attenuation_db / 20)
    return buf.replace(x)


# --- receiver ------------------------------------------------------------------

# Receive-chain impairments of the two collection SDRs (sdr_id 0 and 1).
RECEIVER_PROFILES = (
    EmitterProfile(0, iq_gain_imbalance=0.1, iq_phase_skew=0.01, dc_offset=0.004 + 0.002j),
    EmitterProfile(1, iq_gain_imbalance=-0.15, iq_phase_skew=-0.015, dc_offset=-0.003 + 0.004j),
)


def receive(
    buf: IqBuffer,
    *,
    doppler_start_hz: float = 0.0,
    doppler_slope_hz_s: float = 0.0,
    sdr_id: int | None = None,
) -> tuple[IqBuffer, float]:
    """Collection-side processing of a captured packet.

    Receiver IQ impairments, coarse correction of the predicted Doppler, data
    driven fine frequency correction and unit-power normalisation. Returns the
    stored buffer and its estimated SNR.
    """
    if sdr_id is not None:
        buf = apply_fingerprint(buf, RECEIVER_PROFILES[sdr_id % len(RECEIVER_PROFILES)])
    if doppler_start_hz or doppler_slope_hz_s:
        buf = coarse_correct(buf, doppler_start_hz, doppler_slope_hz_s)
    buf = fine_frequency_correct(buf).buffer
    snr = estimate_snr(buf)
    x = buf.samples / math.sqrt(np.mean(np.abs(buf.samples) ** 2))
    return buf.replace(x), snr


# --- scenarios -----------------------------------------------------------------


@dataclass(frozen=True)
class SnrDistribution:
    """``kind`` is "log-uniform" (uniform in dB, i.e. log-uniform in linear SNR)
    or "fixed" (always ``low``)."""

    kind: str = "log-uniform"
    low: float = 0.0
    high: float = 20.0

    def __post_init__(self):
        if self.kind not in ("log-uniform", "fixed"):
            raise ParameterError(f"unknown SNR distribution {self.kind!r}")
        if self.kind == "log-uniform" and not self.low <= self.high:
            raise ParameterError("SNR distribution needs low <= high")

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind == "fixed":
            return float(self.low)
        return float(rng.uniform(self.low, self.high))


@dataclass(frozen=True)
class ScenarioConfig:
    n_emitters: int = 8
    packets_per_emitter: int = 1000
    snr: SnrDistribution = field(default_factory=SnrDistribution)
    spoof_fraction: float = 0.0
    seed: int = 0
    quantization_bits: int = 8
    attenuation_db: float = 10.0
    spoof_link_snr_db: float | None = 45.0
    days: int = 60
    start_ns: int = 1_725_148_800 * 10**9  # 2024-09-01T00:00:00Z
    max_doppler_hz: float = 3000.0
    first_packet: int = 0  # packet counter of the first record, to extend a scenario

    def __post_init__(self):
        if self.n_emitters < 2:
            raise ParameterError("a scenario needs at least two emitters")
        if self.n_emitters > 255:
            raise ParameterError("at most 255 emitters (one sat_id byte each)")
        if self.packets_per_emitter < 1:
            raise ParameterError("packets_per_emitter must be positive")
        if self.first_packet < 0:
            raise ParameterError("first_packet must be non-negative")
        if not 0.0 <= self.spoof_fraction <= 1.0:
            raise ParameterError("spoof_fraction must be in [0, 1]")

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        data = dict(data)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"unknown scenario keys: {sorted(unknown)}")
        snr = data.pop("snr", None)
        if isinstance(snr, dict):
            data["snr"] = SnrDistribution(**snr)
        elif snr is not None:
            data["snr"] = SnrDistribution("fixed", float(snr), float(snr))
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


def scenario_sat_ids(cfg: ScenarioConfig) -> list[int]:
    rng = np.random.default_rng([cfg.seed, 0x1D])
    return sorted(int(s) for s in rng.choice(np.arange(1, 256), cfg.n_emitters, replace=False))


def _spoof_mask(cfg: ScenarioConfig) -> np.ndarray:
    total = cfg.n_emitters * cfg.packets_per_emitter
    n_spoof = int(round(cfg.spoof_fraction * total))
    order = np.random.default_rng([cfg.seed, 0x5F]).permutation(total)
    mask = np.zeros(total, dtype=bool)
    mask[order[:n_spoof]] = True
    return mask


def simulate_packet(
    profile: EmitterProfile,
    dcn: int,
    mfc: int,
    snr_db: float,
    rng: np.random.Generator,
    *,
    spoof: SpoofConfig | None = None,
    sdr_id: int | None = None,
    max_doppler_hz: float = 3000.0,
) -> tuple[IqBuffer, float]:
    """One sync packet through transmitter, channel and receiver."""
    bits = bytes_to_bits(build_sync_packet(profile.sat_id, dcn, mfc))
    clean = sdpsk_modulate(bits, ref_phase=float(rng.uniform(0, 2 * math.pi)))
    tx = apply_fingerprint(clean, profile, rng.integers(2**63))
    ch = ChannelConfig(
        snr_db=snr_db,
        doppler_start_hz=float(rng.uniform(-max_doppler_hz, max_doppler_hz)),
        doppler_slope_hz_s=float(rng.uniform(-60.0, 0.0)),
        carrier_phase=float(rng.uniform(0, 2 * math.pi)),
        rng_seed=int(rng.integers(2**63)),
    )
    rx = apply_channel(tx, ch)
    if spoof is not None:
        # the attacker records after its own coarse correction and replays at baseband
        rx = coarse_correct(rx, ch.doppler_start_hz, ch.doppler_slope_hz_s)
        rx = spoof_replay(rx, spoof, rng.integers(2**63))
        return receive(rx, sdr_id=sdr_id)
    return receive(rx, doppler_start_hz=ch.doppler_start_hz, doppler_slope_hz_s=ch.doppler_slope_hz_s, sdr_id=sdr_id)


def generate_emitter(cfg: ScenarioConfig, emitter_index: int, sat_ids: list[int] | None = None) -> Iterator[PacketRecord]:
    """Records for one emitter; each packet's RNG derives from (seed, emitter, packet)."""
    sat_ids = sat_ids or scenario_sat_ids(cfg)
    sat_id = sat_ids[emitter_index]
    profile = EmitterProfile.from_seed(sat_id, cfg.seed)
    spoof_cfg = SpoofConfig(
        attacker_profile(cfg.seed), cfg.quantization_bits, cfg.attenuation_db, cfg.spoof_link_snr_db
    )
    spoof_mask = _spoof_mask(cfg)
    dcn = int(np.random.default_rng([cfg.seed, 0xDC, sat_id]).integers(0, 256))
    for k in range(cfg.packets_per_emitter):
        p = cfg.first_packet + k
        rng = np.random.default_rng([cfg.seed, emitter_index, p])
        spoofed = bool(spoof_mask[emitter_index * cfg.packets_per_emitter + k])
        site = p % 2  # two (site, sdr) combinations, balanced
        snr = cfg.snr.sample(rng)
        day = int(rng.integers(0, cfg.days))
        ts = cfg.start_ns + day * 86_400 * 10**9 + int(rng.integers(0, 86_400 * 10**9))
        buf, measured = simulate_packet(
            profile,
            dcn,
            p % 256,
            snr,
            rng,
            spoof=spoof_cfg if spoofed else None,
            sdr_id=site,
            max_doppler_hz=cfg.max_doppler_hz,
        )
        yield PacketRecord(
            sat_id=sat_id,
            samples=buf.to_iq(np.float32),
            snr_db=measured,
            timestamp_ns=ts,
            site_id=site,
            sdr_id=site,
            antenna_id=0,
            flags=FLAG_SPOOFED if spoofed else 0,
        )


def generate_scenario(cfg: ScenarioConfig | None = None, **overrides) -> Iterator[PacketRecord]:
    """All records of a scenario, emitter by emitter."""
    cfg = replace(cfg, **overrides) if cfg is not None else ScenarioConfig(**overrides)
    sat_ids = scenario_sat_ids(cfg)
    for e in range(cfg.n_emitters):
        yield from generate_emitter(cfg, e, sat_ids)
