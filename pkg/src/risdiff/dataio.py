"""Dataset file format "cdmds-1".

One JSON header line (format version, geometry, correlation spacing, seed,
sample count) followed by fixed-size binary records of little-endian
float64. Each record is one (channel block, mask indicator, pilot, snr)
tuple laid out as

    [ vec(B_m) : 2*N*M2 | indicator : M2 | vec(y) : 2*N | snr_db : 1 ]

with vec() the column-major real-block-then-imaginary-block layout from
channel.vectorize.
"""

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .channel import devectorize, vectorize
from .errors import DataFormatError

__all__ = [
    "FORMAT_VERSION",
    "DatasetHeader",
    "record_length",
    "pack_record",
    "unpack_record",
    "write_dataset",
    "read_dataset",
]

FORMAT_VERSION = "cdmds-1"


@dataclass(frozen=True)
class DatasetHeader:
    n: int
    m1: int
    m2: int
    spacing: float
    seed: int
    sample_count: int

    def to_json(self) -> str:
        return json.dumps({
            "format": FORMAT_VERSION, "n": self.n, "m1": self.m1, "m2": self.m2,
            "spacing": self.spacing, "seed": self.seed,
            "sample_count": self.sample_count,
        }, sort_keys=True)


def record_length(n: int, m2: int) -> int:
    return 2 * n * m2 + m2 + 2 * n + 1


def _field_slices(n: int, m2: int):
    b_end = 2 * n * m2
    ind_end = b_end + m2
    y_end = ind_end + 2 * n
    return slice(0, b_end), slice(b_end, ind_end), slice(ind_end, y_end), y_end


def pack_record(b: np.ndarray, indicator: np.ndarray, y: np.ndarray,
                snr_db: float) -> np.ndarray:
    n, m2 = b.shape
    if indicator.shape != (m2,) or y.shape != (n,):
        raise ValueError(
            f"record fields inconsistent: b {b.shape}, indicator "
            f"{indicator.shape}, y {y.shape}"
        )
    return np.concatenate([
        vectorize(b),
        np.asarray(indicator, dtype=np.float64),
        np.concatenate([y.real, y.imag]).astype(np.float64),
        [float(snr_db)],
    ])


def unpack_record(vec: np.ndarray, n: int, m2: int):
    if vec.shape != (record_length(n, m2),):
        raise DataFormatError(
            f"record has {vec.shape[0]} values, expected {record_length(n, m2)}"
        )
    b_sl, ind_sl, y_sl, snr_at = _field_slices(n, m2)
    b = devectorize(vec[b_sl], n, m2)
    indicator = vec[ind_sl].copy()
    y_flat = vec[y_sl]
    y = y_flat[:n] + 1j * y_flat[n:]
    return b, indicator, y, float(vec[snr_at])


def write_dataset(path, header: DatasetHeader, records: np.ndarray):
    records = np.asarray(records, dtype=np.float64)
    reclen = record_length(header.n, header.m2)
    if records.ndim != 2 or records.shape[1] != reclen:
        raise ValueError(f"records must be (count, {reclen}), got {records.shape}")
    if records.shape[0] != header.sample_count:
        raise ValueError(
            f"header says {header.sample_count} samples, got {records.shape[0]}"
        )
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(header.to_json().encode("utf-8"))
            f.write(b"\n")
            f.write(np.ascontiguousarray(records, dtype="<f8").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_dataset(path):
    """Returns (header, records) with records shaped (count, record_length)."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise DataFormatError(f"cannot read dataset {path}: {e}") from e
    newline = raw.find(b"\n")
    if newline < 0:
        raise DataFormatError(f"dataset {path} has no header line")
    try:
        head = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataFormatError(f"dataset {path} header is not valid JSON") from e
    if head.get("format") != FORMAT_VERSION:
        raise DataFormatError(
            f"dataset {path} has format {head.get('format')!r}, "
            f"expected {FORMAT_VERSION!r}"
        )
    try:
        header = DatasetHeader(n=int(head["n"]), m1=int(head["m1"]),
                               m2=int(head["m2"]), spacing=float(head["spacing"]),
                               seed=int(head["seed"]),
                               sample_count=int(head["sample_count"]))
    except KeyError as e:
        raise DataFormatError(f"dataset {path} header missing key {e}") from e
    body = raw[newline + 1:]
    reclen = record_length(header.n, header.m2)
    expected = header.sample_count * reclen * 8
    if len(body) != expected:
        raise DataFormatError(
            f"dataset {path} body has {len(body)} bytes, expected {expected} "
            f"({header.sample_count} records of {reclen} float64)"
        )
    records = np.frombuffer(body, dtype="<f8").reshape(header.sample_count, reclen)
    return header, records.copy()
