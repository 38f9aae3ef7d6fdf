"""Decode path: captured sync-packet waveforms to parsed packets and PER."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import SPS
from .dataset import PacketRecord
from .protocol import (
    DEFAULT_MODULUS,
    SYNC_HEADER,
    ParseOutcome,
    SyncPacket,
    bits_to_bytes,
    bytes_to_bits,
    packet_error_rate,
    try_parse,
)
from .signal import (
    IqBuffer,
    RrcFilter,
    bit_steps,
    circular_filter,
    default_filter,
    fine_frequency_correct,
    sdpsk_demodulate,
)

_HEADER_BITS = bytes_to_bits(SYNC_HEADER)


def header_reference_phase(buf: IqBuffer, sps: int = SPS, filt: RrcFilter | None = None) -> float:
    """Phase before the first symbol, estimated from the known sync header.

    Differential detection cannot decide the first bit of a packet without a
    phase reference. The header's phase trajectory is known up to the initial
    phase, so a data-aided estimate over its 24 symbols supplies one.
    """
    filt = filt or default_filter(sps)
    n = len(_HEADER_BITS)
    r = circular_filter(buf.samples, filt.taps)[::sps][:n]
    trajectory = np.cumsum(bit_steps(_HEADER_BITS[: r.size], True))
    return float(np.angle(np.sum(r * np.exp(-1j * trajectory))))


@dataclass(frozen=True)
class DecodeResult:
    index: int
    outcome: ParseOutcome
    offset_hz: float
    freq_ok: bool

    @property
    def ok(self) -> bool:
        return isinstance(self.outcome, SyncPacket)

    @property
    def status(self) -> str:
        return "ok" if self.ok else self.outcome.reason


def decode_buffer(buf: IqBuffer, index: int = 0, modulus: int = DEFAULT_MODULUS, sps: int = SPS) -> DecodeResult:
    fc = fine_frequency_correct(buf, sps)
    ref = header_reference_phase(fc.buffer, sps)
    bits, _ = sdpsk_demodulate(fc.buffer, sps, ref_phase=ref)
    n_bytes = bits.size // 8
    raw = bits_to_bytes(bits[: n_bytes * 8])
    return DecodeResult(index, try_parse(raw, modulus), fc.offset_hz, fc.ok)


def decode_records(records: Iterable[PacketRecord], modulus: int = DEFAULT_MODULUS) -> list[DecodeResult]:
    return [
        decode_buffer(IqBuffer(r.complex_samples.astype(np.complex128)), i, modulus)
        for i, r in enumerate(records)
    ]


def decode_per(results: Sequence[DecodeResult]) -> float:
    return packet_error_rate([r.outcome for r in results])


def packet_bits(samples: np.ndarray, sps: int = SPS, filt: RrcFilter | None = None) -> np.ndarray:
    """Hard bit decisions for a batch of stored sync packets ``(B, n)`` complex.

    The first bit of each packet is decided against the header-aided phase
    reference, the rest differentially.
    """
    filt = filt or default_filter(sps)
    x = np.atleast_2d(np.asarray(samples, dtype=np.complex128))
    r = circular_filter(x, filt.taps)[:, ::sps]
    h = min(len(_HEADER_BITS), r.shape[1])
    trajectory = np.cumsum(bit_steps(_HEADER_BITS[:h], True))
    ref = np.sum(r[:, :h] * np.exp(-1j * trajectory), axis=1)
    prev = np.empty_like(r)
    prev[:, 1:] = r[:, :-1]
    prev[:, 0] = np.abs(r[:, 0]) * ref / np.maximum(np.abs(ref), 1e-300)
    return ((r * np.conj(prev)).imag > 0).astype(np.uint8)
