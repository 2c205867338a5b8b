"""Position-tagged CSI dataset: domain types, `.csid` binary I/O and statistics.

File layout (little-endian throughout)::

    magic  "CSID" | version u16 = 1 | flags u16 = 0
    n_antennas u32 | n_subcarriers u32 | n_records u64 | origin u8 | seed u64
    OfdmConfig block, 64 bytes: n_sub u32, n_cp u32, sample_rate_hz f64,
        carrier_hz f64, n_guard_low u32, n_guard_high u32, dc_null u8, zero pad
    per record: GpsTag as 7 x f64, snr_db as n_antennas x f32,
        h as n_antennas x n_subcarriers complex64, antenna-major

A missing seed is stored as the u64 sentinel 2**64 - 1.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .ofdm import OfdmConfig

MAGIC = b"CSID"
VERSION = 1
_PREAMBLE = struct.Struct("<4sHH")
_HEADER = struct.Struct("<IIQBQ")
_CONFIG = struct.Struct("<IIddIIB")
_CONFIG_BLOCK = 64
_TAG = struct.Struct("<7d")
_NO_SEED = 2**64 - 1

ORIGIN_MEASURED = 0
ORIGIN_SYNTHETIC = 1
_ORIGIN_NAMES = {ORIGIN_MEASURED: "measured", ORIGIN_SYNTHETIC: "synthetic"}
_ORIGIN_CODES = {v: k for k, v in _ORIGIN_NAMES.items()}


class CsidFormatError(ValueError):
    """Malformed `.csid` content; ``offset`` is the failing byte position."""

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class GpsTag:
    """Local ENU position of one snapshot plus RTK accuracy estimates."""

    x: float
    y: float
    z: float = 0.0
    std_north: float = 0.0
    std_east: float = 0.0
    std_up: float = 0.0
    timestamp: float = 0.0

    def __post_init__(self):
        if min(self.std_north, self.std_east, self.std_up) < 0:
            raise ValueError("GPS accuracy fields must be non-negative")
        if not np.isfinite(self.timestamp):
            raise ValueError("timestamp must be finite")

    def pack(self) -> bytes:
        return _TAG.pack(
            self.x, self.y, self.z, self.std_north, self.std_east, self.std_up, self.timestamp
        )

    @classmethod
    def unpack(cls, buf: bytes) -> "GpsTag":
        return cls(*_TAG.unpack(buf))


@dataclass
class CsiRecord:
    """One spatial snapshot: antenna x subcarrier channel weights plus metadata."""

    tag: GpsTag
    h: np.ndarray
    snr_db: np.ndarray

    def __post_init__(self):
        h = np.ascontiguousarray(self.h, dtype=np.complex64)
        if h.ndim != 2:
            raise ValueError(f"h must be 2-D (antennas x subcarriers), got shape {h.shape}")
        if not 1 <= h.shape[0] <= 64:
            raise ValueError(f"antenna count {h.shape[0]} outside 1..64")
        if not np.all(np.isfinite(h.view(np.float32))):
            raise ValueError("channel matrix contains non-finite entries")
        snr = np.asarray(self.snr_db, dtype=np.float32).ravel()
        if snr.size != h.shape[0]:
            raise ValueError("snr_db length must match antenna count")
        h.flags.writeable = False
        snr.flags.writeable = False
        self.h = h
        self.snr_db = snr

    @property
    def n_antennas(self) -> int:
        return self.h.shape[0]

    @property
    def n_subcarriers(self) -> int:
        return self.h.shape[1]


@dataclass
class Dataset:
    """Ordered collection of CSI records sharing one OFDM configuration."""

    config: OfdmConfig
    records: list
    origin: str = "synthetic"
    seed: int | None = None

    def __post_init__(self):
        if self.origin not in _ORIGIN_CODES:
            raise ValueError(f"origin must be one of {sorted(_ORIGIN_CODES)}")

    def validate(self):
        if len(self.records) < 1:
            raise ValueError("dataset must contain at least one record")
        shape = self.records[0].h.shape
        for i, rec in enumerate(self.records):
            if rec.h.shape != shape:
                raise ValueError(
                    f"record {i} has shape {rec.h.shape}, expected {shape} (record 0)"
                )

    @property
    def n_records(self) -> int:
        return len(self.records)

    @property
    def n_antennas(self) -> int:
        return self.records[0].n_antennas

    @property
    def n_subcarriers(self) -> int:
        return self.records[0].n_subcarriers


def _pack_config(config: OfdmConfig) -> bytes:
    raw = _CONFIG.pack(
        config.n_sub,
        config.n_cp,
        config.sample_rate_hz,
        config.carrier_hz,
        config.n_guard_low,
        config.n_guard_high,
        1 if config.dc_null else 0,
    )
    return raw.ljust(_CONFIG_BLOCK, b"\0")


def _unpack_config(buf: bytes) -> OfdmConfig:
    n_sub, n_cp, fs, fc, glo, ghi, dc = _CONFIG.unpack_from(buf)
    return OfdmConfig(
        n_sub=n_sub,
        n_cp=n_cp,
        sample_rate_hz=fs,
        carrier_hz=fc,
        n_guard_low=glo,
        n_guard_high=ghi,
        dc_null=bool(dc),
    )


def write_dataset(dataset: Dataset, path) -> None:
    """Serialize a dataset to a `.csid` file (see module docstring for layout)."""
    dataset.validate()
    n_ant = dataset.n_antennas
    n_sub = dataset.n_subcarriers
    seed = _NO_SEED if dataset.seed is None else int(dataset.seed)
    with open(path, "wb") as fh:
        fh.write(_PREAMBLE.pack(MAGIC, VERSION, 0))
        fh.write(_HEADER.pack(n_ant, n_sub, dataset.n_records, _ORIGIN_CODES[dataset.origin], seed))
        fh.write(_pack_config(dataset.config))
        for rec in dataset.records:
            fh.write(rec.tag.pack())
            fh.write(rec.snr_db.astype("<f4").tobytes())
            fh.write(rec.h.astype("<c8").tobytes())


def read_dataset(path) -> Dataset:
    """Parse a `.csid` file, validating structure and payload finiteness."""
    with open(path, "rb") as fh:
        blob = fh.read()

    if len(blob) < _PREAMBLE.size:
        raise CsidFormatError(
            f"file too short for preamble: expected >= {_PREAMBLE.size} bytes, got {len(blob)}",
            offset=0,
        )
    magic, version, flags = _PREAMBLE.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CsidFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise CsidFormatError(f"unsupported version {version}", offset=4)
    if flags != 0:
        raise CsidFormatError(f"unsupported flags {flags:#06x}", offset=6)

    pos = _PREAMBLE.size
    if len(blob) < pos + _HEADER.size + _CONFIG_BLOCK:
        raise CsidFormatError(
            f"truncated header: expected >= {pos + _HEADER.size + _CONFIG_BLOCK} bytes, "
            f"got {len(blob)}",
            offset=pos,
        )
    n_ant, n_sub, n_records, origin_code, seed = _HEADER.unpack_from(blob, pos)
    pos += _HEADER.size
    if origin_code not in _ORIGIN_NAMES:
        raise CsidFormatError(f"unknown origin code {origin_code}", offset=pos - 9)
    try:
        config = _unpack_config(blob[pos : pos + _CONFIG_BLOCK])
    except (struct.error, ValueError) as exc:
        raise CsidFormatError(f"invalid OFDM configuration block: {exc}", offset=pos) from exc
    pos += _CONFIG_BLOCK

    rec_size = _TAG.size + 4 * n_ant + 8 * n_ant * n_sub
    expected = pos + n_records * rec_size
    if len(blob) != expected:
        raise CsidFormatError(
            f"payload length mismatch: expected {expected} bytes for {n_records} records, "
            f"got {len(blob)}",
            offset=min(len(blob), expected),
        )

    records = []
    for i in range(n_records):
        tag = GpsTag.unpack(blob[pos : pos + _TAG.size])
        snr_off = pos + _TAG.size
        snr = np.frombuffer(blob, dtype="<f4", count=n_ant, offset=snr_off)
        h_off = snr_off + 4 * n_ant
        h = np.frombuffer(blob, dtype="<c8", count=n_ant * n_sub, offset=h_off)
        flat = h.view("<f4")
        bad = np.nonzero(~np.isfinite(flat))[0]
        if bad.size:
            raise CsidFormatError(
                f"non-finite channel value in record {i}", offset=h_off + 4 * int(bad[0])
            )
        records.append(CsiRecord(tag=tag, h=h.reshape(n_ant, n_sub), snr_db=snr))
        pos += rec_size

    return Dataset(
        config=config,
        records=records,
        origin=_ORIGIN_NAMES[origin_code],
        seed=None if seed == _NO_SEED else seed,
    )


def gps_accuracy_cdf(dataset: Dataset) -> dict:
    """Empirical CDF of the GPS accuracy fields, one curve per axis.

    Each curve is a list of ``(sigma_meters, cumulative_fraction)`` evaluated
    at the sorted distinct std values of that axis; the last fraction is 1.0.
    """
    m = dataset.n_records
    out = {}
    for axis, attr in (("north", "std_north"), ("east", "std_east"), ("up", "std_up")):
        vals = np.array([getattr(r.tag, attr) for r in dataset.records])
        sigmas = np.unique(vals)
        fracs = np.searchsorted(np.sort(vals), sigmas, side="right") / m
        out[axis] = list(zip(sigmas.tolist(), fracs.tolist()))
    return out


def antenna_subset(dataset: Dataset, indices) -> Dataset:
    """Restrict every record to the given antenna rows, order preserved."""
    idx = list(indices)
    if len(set(idx)) != len(idx):
        raise ValueError("antenna indices must be distinct")
    n_ant = dataset.n_antennas
    for i in idx:
        if not 0 <= i < n_ant:
            raise ValueError(f"antenna index {i} out of range 0..{n_ant - 1}")
    sel = np.array(idx, dtype=int)
    records = [
        CsiRecord(tag=r.tag, h=r.h[sel], snr_db=r.snr_db[sel]) for r in dataset.records
    ]
    return Dataset(config=dataset.config, records=records, origin=dataset.origin, seed=dataset.seed)


def even_antenna_indices(n_total: int, n_keep: int) -> list:
    """Uniform decimation default for antenna subsetting (even-indexed elements)."""
    if n_keep > n_total:
        raise ValueError(f"cannot keep {n_keep} of {n_total} antennas")
    if 2 * n_keep == n_total:
        return list(range(0, n_total, 2))
    return np.linspace(0, n_total - 1, n_keep).round().astype(int).tolist()


def export_records_csv(dataset: Dataset, path, labels=None) -> None:
    """Plot-ready summary: one row per record with x, y, mean SNR, optional label."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["x", "y", "mean_snr_db"] + (["label"] if labels is not None else [])
        writer.writerow(header)
        for i, rec in enumerate(dataset.records):
            row = [repr(rec.tag.x), repr(rec.tag.y), repr(float(np.mean(rec.snr_db)))]
            if labels is not None:
                row.append(int(labels[i]))
            writer.writerow(row)
