"""Orbcomm downlink packet layer.

Sync packet layout (12 bytes, transmitted left to right, MSB first)::

    | sync 65 A8 F9 | ID | fixed | DCN | MFC | fixed x3 | FCS c1 c2 |

The FCS is a Fletcher checksum over the first ten bytes. The modulus is not
documented publicly; mod 256 is the default and ``modulus=255`` selects the
classic Fletcher-16 arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import DataError, ParameterError

SYNC_HEADER = bytes((0x65, 0xA8, 0xF9))
SYNC_PACKET_BYTES = 12
WORD_BITS = 8
MINOR_FRAME_WORDS = 600
PACKET_WORD_SIZES = (12, 24)
DEFAULT_MODULUS = 256


class PacketError(DataError):
    """Base class for rejected packets."""

    reason = "invalid"


class PacketLengthError(PacketError):
    reason = "length"


class HeaderError(PacketError):
    reason = "header"


class ChecksumError(PacketError):
    reason = "checksum"


def fletcher16(payload: bytes, modulus: int = DEFAULT_MODULUS) -> tuple[int, int]:
    """Return ``(c1, c2)``: c1 is the byte sum, c2 the sum of running c1 values."""
    if len(payload) == 0:
        raise ParameterError("fletcher16 needs a non-empty payload")
    if modulus not in (255, 256):
        raise ParameterError(f"modulus must be 255 or 256, got {modulus}")
    c1 = c2 = 0
    for byte in payload:
        c1 = (c1 + byte) % modulus
        c2 = (c2 + c1) % modulus
    return c1, c2


def _check_byte(name: str, value: int) -> int:
    if not (0 <= int(value) <= 0xFF):
        raise ParameterError(f"{name} must be a byte, got {value}")
    return int(value)


@dataclass(frozen=True)
class SyncPacket:
    sat_id: int
    dcn: int
    mfc: int
    fixed1: int = 0x00
    fixed3: bytes = b"\x00\x00\x00"
    fcs: tuple[int, int] | None = None

    def to_bytes(self, modulus: int = DEFAULT_MODULUS) -> bytes:
        if len(self.fixed3) != 3:
            raise ParameterError("fixed3 must be exactly 3 bytes")
        body = SYNC_HEADER + bytes(
            (
                _check_byte("sat_id", self.sat_id),
                _check_byte("fixed1", self.fixed1),
                _check_byte("dcn", self.dcn),
                _check_byte("mfc", self.mfc),
            )
        ) + bytes(self.fixed3)
        return body + bytes(fletcher16(body, modulus))


def build_sync_packet(
    sat_id: int,
    dcn: int,
    mfc: int,
    fixed1: int = 0x00,
    fixed3: bytes = b"\x00\x00\x00",
    modulus: int = DEFAULT_MODULUS,
) -> bytes:
    return SyncPacket(sat_id, dcn, mfc, fixed1, bytes(fixed3)).to_bytes(modulus)


def parse_packet(raw: bytes, modulus: int = DEFAULT_MODULUS) -> SyncPacket:
    """Validate and decode a 12-byte sync packet.

    Raises :class:`PacketLengthError`, :class:`HeaderError` or
    :class:`ChecksumError`; header is checked before the checksum.
    """
    raw = bytes(raw)
    if len(raw) != SYNC_PACKET_BYTES:
        raise PacketLengthError(f"sync packet must be {SYNC_PACKET_BYTES} bytes, got {len(raw)}")
    if raw[:3] != SYNC_HEADER:
        raise HeaderError(f"bad sync header {raw[:3].hex()}")
    expected = fletcher16(raw[:10], modulus)
    if (raw[10], raw[11]) != expected:
        raise ChecksumError(f"FCS {raw[10]:02x}{raw[11]:02x} != computed {expected[0]:02x}{expected[1]:02x}")
    return SyncPacket(
        sat_id=raw[3], fixed1=raw[4], dcn=raw[5], mfc=raw[6], fixed3=raw[7:10], fcs=(raw[10], raw[11])
    )


ParseOutcome = Union[SyncPacket, PacketError]


def try_parse(raw: bytes, modulus: int = DEFAULT_MODULUS) -> ParseOutcome:
    """Like :func:`parse_packet` but returns the error instead of raising."""
    try:
        return parse_packet(raw, modulus)
    except PacketError as exc:
        return exc


def packet_error_rate(results: Sequence[ParseOutcome]) -> float:
    """Fraction of outcomes that are not a successfully parsed packet."""
    results = list(results)
    if not results:
        raise ParameterError("packet_error_rate needs at least one outcome")
    failed = sum(not isinstance(r, SyncPacket) for r in results)
    return failed / len(results)


def bytes_to_bits(data: bytes) -> np.ndarray:
    return np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8))


def bits_to_bytes(bits) -> bytes:
    bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
    if bits.size % 8:
        raise ParameterError("bit count must be a multiple of 8")
    return np.packbits(bits).tobytes()


@dataclass(frozen=True)
class MinorFrame:
    """600 words made of 12- and 24-word packets."""

    packets: tuple[bytes, ...]
    mfc: int

    def to_bytes(self) -> bytes:
        return b"".join(self.packets)


def assemble_minor_frame(packets: Iterable[bytes], mfc: int) -> MinorFrame:
    packets = tuple(bytes(p) for p in packets)
    for i, p in enumerate(packets):
        if len(p) not in PACKET_WORD_SIZES:
            raise DataError(f"packet {i} has {len(p)} words; expected one of {PACKET_WORD_SIZES}")
    total = sum(len(p) for p in packets)
    if total != MINOR_FRAME_WORDS:
        raise DataError(f"minor frame holds {total} words, expected {MINOR_FRAME_WORDS}")
    return MinorFrame(packets, _check_byte("mfc", mfc))
