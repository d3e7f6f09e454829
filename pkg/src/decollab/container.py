"""Shared binary container: magic string, length-prefixed textual header,
then raw little-endian payload blocks."""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np


class FormatError(Exception):
    """File-format violation with a stable machine-readable code."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def write_header(fh: BinaryIO, fields: dict[str, str]) -> None:
    text = "".join(f"{k}={v}\n" for k, v in fields.items()).encode("utf-8")
    fh.write(struct.pack("<I", len(text)))
    fh.write(text)


def read_magic(fh: BinaryIO, expected: bytes) -> None:
    got = fh.read(len(expected))
    if got != expected:
        raise FormatError("malformed_header", f"bad magic {got!r}, expected {expected!r}")


def read_header(fh: BinaryIO) -> dict[str, str]:
    raw = fh.read(4)
    if len(raw) != 4:
        raise FormatError("malformed_header", "missing header length")
    (length,) = struct.unpack("<I", raw)
    text = fh.read(length)
    if len(text) != length:
        raise FormatError("truncated_payload", "header shorter than declared")
    fields: dict[str, str] = {}
    try:
        for line in text.decode("utf-8").splitlines():
            if not line:
                continue
            key, _, value = line.partition("=")
            if not _:
                raise ValueError(line)
            fields[key] = value
    except (UnicodeDecodeError, ValueError) as exc:
        raise FormatError("malformed_header", f"unparseable header line: {exc}") from exc
    return fields


def header_int(fields: dict[str, str], key: str) -> int:
    if key not in fields:
        raise FormatError("malformed_header", f"missing header key {key!r}")
    try:
        return int(fields[key])
    except ValueError as exc:
        raise FormatError("malformed_header", f"header key {key!r} is not an integer") from exc


def write_f64_block(fh: BinaryIO, arr: np.ndarray) -> None:
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_f64_block(fh: BinaryIO, shape: tuple[int, ...]) -> np.ndarray:
    count = int(np.prod(shape)) if shape else 1
    raw = fh.read(8 * count)
    if len(raw) != 8 * count:
        raise FormatError("truncated_payload", f"expected {count} float64 values")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def write_u8_block(fh: BinaryIO, arr: np.ndarray) -> None:
    fh.write(np.ascontiguousarray(arr, dtype=np.uint8).tobytes())


def read_u8_block(fh: BinaryIO, shape: tuple[int, ...]) -> np.ndarray:
    count = int(np.prod(shape)) if shape else 1
    raw = fh.read(count)
    if len(raw) != count:
        raise FormatError("truncated_payload", f"expected {count} byte values")
    return np.frombuffer(raw, dtype=np.uint8).reshape(shape)


def write_u32_block(fh: BinaryIO, arr: np.ndarray) -> None:
    fh.write(np.ascontiguousarray(arr, dtype="<u4").tobytes())


def read_u32_block(fh: BinaryIO, shape: tuple[int, ...]) -> np.ndarray:
    count = int(np.prod(shape)) if shape else 1
    raw = fh.read(4 * count)
    if len(raw) != 4 * count:
        raise FormatError("truncated_payload", f"expected {count} uint32 values")
    return np.frombuffer(raw, dtype="<u4").astype(np.int64).reshape(shape)
