"""Minimal binary PGM (P5) / PPM (P6) reader and PGM writer.

Only maxval 255 is supported. P6 input is converted to grayscale with
Rec.601 luma (0.299 R + 0.587 G + 0.114 B), rounded half-up.
"""

from pathlib import Path

import numpy as np

from .exceptions import ParseError, UnsupportedFormatError

_WHITESPACE = b" \t\r\n\v\f"


def _read_token(data, pos, path):
    """Skip whitespace and '#' comments, return (token, new_pos)."""
    n = len(data)
    while pos < n:
        ch = data[pos:pos + 1]
        if ch in b"#":
            while pos < n and data[pos:pos + 1] != b"\n":
                pos += 1
        elif ch in _WHITESPACE:
            pos += 1
        else:
            break
    start = pos
    while pos < n and data[pos:pos + 1] not in _WHITESPACE and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ParseError("unexpected end of header", path=path)
    return data[start:pos], pos


def read_pnm(path):
    """Read a P5/P6 file; returns a (height, width) uint8 grayscale array."""
    path = Path(path)
    data = path.read_bytes()
    magic, pos = _read_token(data, 0, path)
    if magic not in (b"P5", b"P6"):
        raise ParseError(f"unsupported magic {magic!r} (want P5 or P6)", path=path)
    fields = []
    for _ in range(3):
        tok, pos = _read_token(data, pos, path)
        if not tok.isdigit():
            raise ParseError(f"malformed header token {tok!r}", path=path)
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise UnsupportedFormatError(f"maxval {maxval} not supported (want 255)", path=path)
    if width <= 0 or height <= 0:
        raise ParseError(f"bad dimensions {width}x{height}", path=path)
    pos += 1  # single whitespace byte separates header from raster
    channels = 1 if magic == b"P5" else 3
    expected = width * height * channels
    raster = data[pos:pos + expected]
    if len(raster) != expected:
        raise ParseError(
            f"raster has {len(raster)} bytes, expected {expected}", path=path
        )
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    if channels == 1:
        return pixels[:, :, 0].copy()
    luma = (
        0.299 * pixels[:, :, 0].astype(np.float64)
        + 0.587 * pixels[:, :, 1]
        + 0.114 * pixels[:, :, 2]
    )
    return np.floor(luma + 0.5).astype(np.uint8)  # round half-up


def write_pgm(path, pixels):
    """Write a (height, width) uint8 array as binary P5, maxval 255."""
    arr = np.asarray(pixels)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-d grayscale array, got shape {arr.shape}")
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    h, w = arr.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + arr.tobytes())
