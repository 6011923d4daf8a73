"""Sequence files: CSV (one series per row) and the fixed-width ``LMSQ`` binary."""

from __future__ import annotations

import struct

import numpy as np

from .errors import LongMemError

MAGIC = b"LMSQ"
VERSION = 1


class SequenceFormatError(LongMemError, ValueError):
    """Malformed or inconsistent sequence file."""


def detect_format(path, fmt: str | None = None) -> str:
    if fmt:
        if fmt not in ("csv", "bin"):
            raise SequenceFormatError(f"unknown format {fmt!r}")
        return fmt
    return "bin" if str(path).endswith(".bin") else "csv"


def write_csv(path, series) -> None:
    with open(path, "w") as fh:
        fh.write("# one series per row\n")
        for s in series:
            fh.write(",".join(repr(float(v)) for v in np.asarray(s, dtype=np.float64)))
            fh.write("\n")


def read_csv(path) -> list[np.ndarray]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                out.append(np.array([float(t) for t in line.split(",")], dtype=np.float64))
            except ValueError as exc:
                raise SequenceFormatError(f"{path}:{lineno}: {exc}") from None
    return out


def write_bin(path, series) -> None:
    arr = np.asarray(series, dtype=np.float64)
    if arr.ndim != 2:
        raise SequenceFormatError("binary format needs equal-length series")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", VERSION, arr.shape[0], arr.shape[1]))
        fh.write(arr.astype("<f8").tobytes())


def read_bin(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise SequenceFormatError(f"{path}: bad magic")
    version, count, length = struct.unpack_from("<III", blob, 4)
    if version != VERSION:
        raise SequenceFormatError(f"{path}: unsupported version {version}")
    body = blob[16:]
    if len(body) != count * length * 8:
        raise SequenceFormatError(f"{path}: expected {count}x{length} values")
    return np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(count, length)


def read_sequences(path, fmt: str | None = None) -> list[np.ndarray]:
    if detect_format(path, fmt) == "bin":
        return list(read_bin(path))
    return read_csv(path)


def write_sequences(path, series, fmt: str | None = None) -> None:
    if detect_format(path, fmt) == "bin":
        write_bin(path, series)
    else:
        write_csv(path, series)


def window_starts(length: int, window: int, stride: int) -> list[int]:
    """Starts of full windows: ``floor((length - window) / stride) + 1`` of them."""
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be positive")
    if length < window:
        return []
    return list(range(0, length - window + 1, stride))
