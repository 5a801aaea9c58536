"""Binary netpbm readers and writers (PPM P6 for images, PGM P5 for masks)."""

from __future__ import annotations

import numpy as np


class NetpbmError(ValueError):
    pass


def _read_header(data: bytes, expected_magic: bytes, path) -> tuple[int, int, int]:
    """Parse magic, width, height, maxval; returns (width, height, payload offset)."""
    if data[:2] != expected_magic:
        raise NetpbmError(f"{path}: expected {expected_magic.decode()} file, "
                          f"got magic {data[:2]!r}")
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        # skip whitespace and '#' comments between header tokens
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise NetpbmError(f"{path}: malformed header token {token!r}")
        fields.append(int(token))
    width, height, maxval = fields
    if maxval != 255:
        raise NetpbmError(f"{path}: only maxval 255 supported, got {maxval}")
    return width, height, pos + 1  # single whitespace byte before payload


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM as a (height, width, 3) uint8 array."""
    data = open(path, "rb").read()
    width, height, offset = _read_header(data, b"P6", path)
    expected = width * height * 3
    payload = data[offset:offset + expected]
    if len(payload) != expected:
        raise NetpbmError(f"{path}: truncated payload "
                          f"({len(payload)} of {expected} bytes)")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM as a (height, width) uint8 array."""
    data = open(path, "rb").read()
    width, height, offset = _read_header(data, b"P5", path)
    expected = width * height
    payload = data[offset:offset + expected]
    if len(payload) != expected:
        raise NetpbmError(f"{path}: truncated payload "
                          f"({len(payload)} of {expected} bytes)")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width)


def write_ppm(path, arr: np.ndarray) -> None:
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise NetpbmError(f"write_ppm needs (h, w, 3) uint8, got {arr.shape} {arr.dtype}")
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (arr.shape[1], arr.shape[0]))
        f.write(arr.tobytes())


def write_pgm(path, arr: np.ndarray) -> None:
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise NetpbmError(f"write_pgm needs (h, w) uint8, got {arr.shape} {arr.dtype}")
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (arr.shape[1], arr.shape[0]))
        f.write(arr.tobytes())
