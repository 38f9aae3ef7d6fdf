"""ORBD packet-capture files.

Layout, little-endian throughout::

    header   magic "ORBD" | version u16 = 1 | samples_per_record u32 | count u64
    record   sat_id u8 | site_id u8 | sdr_id u8 | antenna_id u8 | flags u8 |
             reserved u8 | snr_db f32 | timestamp_ns i64 | n x (I f32, Q f32)

``flags`` bit 0 marks a spoofed capture. Files are written once; the count is
patched in after the last record so writers can consume a generator.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
import yaml

from . import PACKET_SAMPLES
from .errors import DataError, ParameterError

MAGIC = b"ORBD"
VERSION = 1
HEADER = struct.Struct("<4sHIQ")
FLAG_SPOOFED = 0x01


class DatasetFormatError(DataError):
    pass


def record_dtype(n: int) -> np.dtype:
    return np.dtype(
        [
            ("sat_id", "u1"),
            ("site_id", "u1"),
            ("sdr_id", "u1"),
            ("antenna_id", "u1"),
            ("flags", "u1"),
            ("reserved", "u1"),
            ("snr_db", "<f4"),
            ("timestamp_ns", "<i8"),
            ("samples", "<f4", (n, 2)),
        ]
    )


@dataclass
class PacketRecord:
    sat_id: int
    samples: np.ndarray
    snr_db: float = 0.0
    timestamp_ns: int = 0
    site_id: int = 0
    sdr_id: int = 0
    antenna_id: int = 0
    flags: int = 0

    def __post_init__(self):
        s = np.asarray(self.samples)
        if np.iscomplexobj(s):
            s = np.stack([s.real, s.imag], axis=-1)
        s = np.ascontiguousarray(s, dtype=np.float32)
        if s.ndim != 2 or s.shape[1] != 2 or s.shape[0] == 0:
            raise ParameterError(f"samples must be a non-empty (n, 2) array, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ParameterError("samples must be finite")
        if not math.isfinite(self.snr_db):
            raise ParameterError("snr_db must be finite")
        self.samples = s
        self.snr_db = float(np.float32(self.snr_db))

    @property
    def spoofed(self) -> bool:
        return bool(self.flags & FLAG_SPOOFED)

    @property
    def complex_samples(self) -> np.ndarray:
        return self.samples[:, 0].astype(np.float64) + 1j * self.samples[:, 1]

    def __eq__(self, other):
        if not isinstance(other, PacketRecord):
            return NotImplemented
        return (
            (self.sat_id, self.site_id, self.sdr_id, self.antenna_id, self.flags, self.timestamp_ns)
            == (other.sat_id, other.site_id, other.sdr_id, other.antenna_id, other.flags, other.timestamp_ns)
            and np.float32(self.snr_db).tobytes() == np.float32(other.snr_db).tobytes()
            and self.samples.tobytes() == other.samples.tobytes()
        )


def _encode(rec: PacketRecord, dtype: np.dtype) -> bytes:
    row = np.zeros(1, dtype=dtype)
    row["sat_id"] = rec.sat_id
    row["site_id"] = rec.site_id
    row["sdr_id"] = rec.sdr_id
    row["antenna_id"] = rec.antenna_id
    row["flags"] = rec.flags
    row["snr_db"] = rec.snr_db
    row["timestamp_ns"] = rec.timestamp_ns
    row["samples"][0] = rec.samples
    return row.tobytes()


def _decode(row) -> PacketRecord:
    return PacketRecord(
        sat_id=int(row["sat_id"]),
        site_id=int(row["site_id"]),
        sdr_id=int(row["sdr_id"]),
        antenna_id=int(row["antenna_id"]),
        flags=int(row["flags"]),
        snr_db=float(row["snr_db"]),
        timestamp_ns=int(row["timestamp_ns"]),
        samples=np.array(row["samples"], dtype=np.float32),
    )


def write(records: Iterable[PacketRecord], path, samples_per_record: int | None = None) -> int:
    """Write records to ``path`` and return the count.

    ``samples_per_record`` is taken from the first record when omitted; an
    empty iterable then produces a 192-sample header with count 0.
    """
    path = Path(path)
    it = iter(records)
    first = next(it, None)
    n = samples_per_record or (first.samples.shape[0] if first is not None else PACKET_SAMPLES)
    dtype = record_dtype(n)
    tmp = path.with_name(path.name + ".part")
    count = 0
    with open(tmp, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, n, 0))
        if first is not None:
            for rec in _chain(first, it):
                if rec.samples.shape[0] != n:
                    raise DatasetFormatError(
                        f"record {count} has {rec.samples.shape[0]} samples; file uses {n}"
                    )
                fh.write(_encode(rec, dtype))
                count += 1
        fh.seek(0)
        fh.write(HEADER.pack(MAGIC, VERSION, n, count))
    os.replace(tmp, path)
    return count


def _chain(first, rest):
    yield first
    yield from rest


def read_header(fh) -> tuple[int, int]:
    raw = fh.read(HEADER.size)
    if len(raw) < HEADER.size:
        raise DatasetFormatError("file too short for an ORBD header")
    magic, version, n, count = HEADER.unpack(raw)
    if magic != MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}; not an ORBD file")
    if version != VERSION:
        raise DatasetFormatError(f"unsupported ORBD version {version}")
    if n == 0:
        raise DatasetFormatError("samples_per_record is 0")
    return n, count


def iter_records(path) -> Iterator[PacketRecord]:
    """Stream records one at a time."""
    with open(path, "rb") as fh:
        n, count = read_header(fh)
        dtype = record_dtype(n)
        for i in range(count):
            raw = fh.read(dtype.itemsize)
            if len(raw) != dtype.itemsize:
                raise DatasetFormatError(f"truncated record {i} (file declares {count} records)")
            yield _decode(np.frombuffer(raw, dtype=dtype)[0])
        if fh.read(1):
            raise DatasetFormatError(f"trailing bytes after record {count - 1}")


def read(path) -> list[PacketRecord]:
    return list(iter_records(path))


def read_table(path) -> np.ndarray:
    """Whole file as a structured array (fields as in :func:`record_dtype`)."""
    with open(path, "rb") as fh:
        n, count = read_header(fh)
        dtype = record_dtype(n)
        data = fh.read()
    if len(data) < count * dtype.itemsize:
        complete = len(data) // dtype.itemsize
        raise DatasetFormatError(f"truncated record {complete} (file declares {count} records)")
    if len(data) > count * dtype.itemsize:
        raise DatasetFormatError(f"trailing bytes after record {count - 1}")
    return np.frombuffer(data, dtype=dtype, count=count)


def records_to_table(records: Sequence[PacketRecord]) -> np.ndarray:
    records = list(records)
    n = records[0].samples.shape[0] if records else PACKET_SAMPLES
    dtype = record_dtype(n)
    return np.frombuffer(b"".join(_encode(r, dtype) for r in records), dtype=dtype)


def table_to_records(table: np.ndarray) -> list[PacketRecord]:
    return [_decode(row) for row in table]


# --- splitting -----------------------------------------------------------------


@dataclass(frozen=True)
class DatasetSplit:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    seed: int


def _largest_remainder(quotas: np.ndarray, total: int) -> np.ndarray:
    base = np.floor(quotas).astype(int)
    short = total - base.sum()
    if short > 0:
        order = np.argsort(-(quotas - base), kind="stable")
        base[order[:short]] += 1
    return base


def split(sat_ids, test_frac: float = 0.27, val_frac: float = 0.09, seed: int = 0) -> DatasetSplit:
    """Stratified train/validation/test index split.

    ``sat_ids`` is the per-record label (or a sequence of records). Each
    satellite's records are shuffled with a seed-derived permutation; test and
    validation counts per satellite use largest-remainder rounding so the
    global counts are ``round(frac * N)``. A satellite with at least three
    records gets at least one record in every split.
    """
    if not (0 <= test_frac < 1 and 0 <= val_frac < 1 and test_frac + val_frac < 1):
        raise ParameterError(f"invalid split fractions test={test_frac} val={val_frac}")
    labels = np.asarray([r.sat_id for r in sat_ids] if _is_records(sat_ids) else sat_ids)
    n = labels.size
    groups = [np.flatnonzero(labels == s) for s in np.unique(labels)]
    sizes = np.array([g.size for g in groups])
    n_test = _largest_remainder(sizes * test_frac, int(round(test_frac * n)))
    n_val = _largest_remainder(sizes * val_frac, int(round(val_frac * n)))
    for i, size in enumerate(sizes):
        if size >= 3:
            n_test[i] = max(n_test[i], 1 if test_frac > 0 else 0)
            n_val[i] = max(n_val[i], 1 if val_frac > 0 else 0)
            while n_test[i] + n_val[i] > size - 1:
                if n_test[i] >= n_val[i]:
                    n_test[i] -= 1
                else:
                    n_val[i] -= 1
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for g, nt, nv in zip(groups, n_test, n_val):
        perm = g[rng.permutation(g.size)]
        test.append(perm[:nt])
        val.append(perm[nt : nt + nv])
        train.append(perm[nt + nv :])
    cat = lambda parts: np.sort(np.concatenate(parts)) if parts else np.zeros(0, int)
    return DatasetSplit(cat(train), cat(val), cat(test), seed)


def _is_records(obj) -> bool:
    try:
        return len(obj) > 0 and isinstance(obj[0], PacketRecord)
    except TypeError:
        return False


# --- filtering -----------------------------------------------------------------


@dataclass(frozen=True)
class RecordFilter:
    """Conjunction of optional metadata constraints; ``None`` means unconstrained."""

    snr_min: float | None = None
    snr_max: float | None = None
    sat_ids: frozenset | None = None
    site_id: int | None = None
    sdr_id: int | None = None
    time_min_ns: int | None = None
    time_max_ns: int | None = None
    spoofed: bool | None = None

    def __call__(self, rec: PacketRecord) -> bool:
        if self.snr_min is not None and not rec.snr_db >= self.snr_min:
            return False
        if self.snr_max is not None and not rec.snr_db <= self.snr_max:
            return False
        if self.sat_ids is not None and rec.sat_id not in self.sat_ids:
            return False
        if self.site_id is not None and rec.site_id != self.site_id:
            return False
        if self.sdr_id is not None and rec.sdr_id != self.sdr_id:
            return False
        if self.time_min_ns is not None and rec.timestamp_ns < self.time_min_ns:
            return False
        if self.time_max_ns is not None and rec.timestamp_ns > self.time_max_ns:
            return False
        if self.spoofed is not None and rec.spoofed != self.spoofed:
            return False
        return True

    def mask(self, table: np.ndarray) -> np.ndarray:
        """Vectorised form for structured arrays from :func:`read_table`."""
        m = np.ones(table.shape[0], dtype=bool)
        if self.snr_min is not None:
            m &= table["snr_db"] >= self.snr_min
        if self.snr_max is not None:
            m &= table["snr_db"] <= self.snr_max
        if self.sat_ids is not None:
            m &= np.isin(table["sat_id"], list(self.sat_ids))
        if self.site_id is not None:
            m &= table["site_id"] == self.site_id
        if self.sdr_id is not None:
            m &= table["sdr_id"] == self.sdr_id
        if self.time_min_ns is not None:
            m &= table["timestamp_ns"] >= self.time_min_ns
        if self.time_max_ns is not None:
            m &= table["timestamp_ns"] <= self.time_max_ns
        if self.spoofed is not None:
            m &= ((table["flags"] & FLAG_SPOOFED) != 0) == self.spoofed
        return m


def filter_records(records: Iterable[PacketRecord], predicate: Callable[[PacketRecord], bool]) -> list[PacketRecord]:
    return [r for r in records if predicate(r)]


# --- raw import ----------------------------------------------------------------

SIDECAR_FIELDS = ("sat_id", "site_id", "sdr_id", "antenna_id", "flags", "snr_db", "timestamp_ns")


def _load_sidecar(sidecar) -> dict:
    if isinstance(sidecar, dict):
        return sidecar
    with open(sidecar) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise DataError(f"sidecar {sidecar} must be a mapping")
    return data


def import_raw(iq_path, sidecar, strict: bool | None = None) -> list[PacketRecord]:
    """Slice an interleaved float32 I/Q file into records.

    Sidecar (YAML mapping)::

        samples_per_record: 192        # default 192
        strict: true                   # reject a trailing partial record
        defaults: {sat_id: 7, site_id: 0, sdr_id: 0, antenna_id: 0,
                   flags: 0, snr_db: 12.5, timestamp_ns: 0}
        records:                       # optional, one entry per record
          - {offset: 0, sat_id: 7, snr_db: 11.0, timestamp_ns: 1700000000000000000}

    ``offset`` is a complex-sample index; without ``records`` the boundaries are
    implicit and ``floor(total / n)`` records are produced. Every record must
    end up with all of :data:`SIDECAR_FIELDS` from its entry or ``defaults``.
    """
    meta = _load_sidecar(sidecar)
    n = int(meta.get("samples_per_record", PACKET_SAMPLES))
    if n <= 0:
        raise DataError("samples_per_record must be positive")
    strict = bool(meta.get("strict", True)) if strict is None else strict
    raw = np.fromfile(iq_path, dtype="<f4")
    if raw.size % 2:
        raise DataError(f"{iq_path}: odd number of floats; expected interleaved I/Q pairs")
    iq = raw.reshape(-1, 2)
    defaults = dict(meta.get("defaults") or {})
    entries = meta.get("records")
    if entries is None:
        if strict and iq.shape[0] % n:
            raise DataError(f"{iq.shape[0]} complex samples is not a multiple of {n} (strict mode)")
        entries = [{"offset": i * n} for i in range(iq.shape[0] // n)]
    out = []
    for i, entry in enumerate(entries):
        fields = {**defaults, **entry}
        missing = [f for f in SIDECAR_FIELDS if f not in fields]
        if missing:
            raise DataError(f"record {i}: missing metadata fields {missing}")
        off = int(fields.get("offset", i * n))
        if off < 0 or off + n > iq.shape[0]:
            raise DataError(f"record {i}: samples [{off}, {off + n}) outside file of {iq.shape[0]}")
        out.append(
            PacketRecord(
                sat_id=int(fields["sat_id"]),
                site_id=int(fields["site_id"]),
                sdr_id=int(fields["sdr_id"]),
                antenna_id=int(fields["antenna_id"]),
                flags=int(fields["flags"]),
                snr_db=float(fields["snr_db"]),
                timestamp_ns=int(fields["timestamp_ns"]),
                samples=iq[off : off + n],
            )
        )
    return out


def write_raw(records: Sequence[PacketRecord], iq_path, sidecar_path) -> None:
    """Inverse of :func:`import_raw` with explicit per-record metadata."""
    records = list(records)
    n = records[0].samples.shape[0] if records else PACKET_SAMPLES
    np.concatenate([r.samples for r in records] or [np.zeros((0, 2), np.float32)]).astype("<f4").tofile(iq_path)
    entries = [
        {
            "offset": i * n,
            "sat_id": r.sat_id,
            "site_id": r.site_id,
            "sdr_id": r.sdr_id,
            "antenna_id": r.antenna_id,
            "flags": r.flags,
            "snr_db": float(r.snr_db),
            "timestamp_ns": int(r.timestamp_ns),
        }
        for i, r in enumerate(records)
    ]
    with open(sidecar_path, "w") as fh:
        yaml.safe_dump({"samples_per_record": n, "strict": True, "records": entries}, fh, sort_keys=False)
