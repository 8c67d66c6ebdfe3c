"""
Binary Netpbm IO: P5 (greyscale PGM) and P6 (colour PPM), 8- or 16-bit.

Header tokens may be separated by any whitespace and ``#`` comments; exactly one
whitespace byte follows the maxval, then the raw payload. 16-bit samples are
big-endian.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from app.errors import DataError, NetpbmDimensionError, NetpbmHeaderError, NetpbmTruncatedError

logger = logging.getLogger(__name__)

PGM_MAGIC = "P5"
PPM_MAGIC = "P6"
_CHANNELS = {PGM_MAGIC: 1, PPM_MAGIC: 3}
_WHITESPACE = b" \t\n\r\v\f"


@dataclass(frozen=True)
class NetpbmImage:
    magic: str
    width: int
    height: int
    maxval: int
    pixels: np.ndarray  # h x w (P5) or h x w x 3 (P6), uint8 or uint16

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width


def _next_token(path, data: bytes, pos: int) -> Tuple[bytes, int]:
    while pos < len(data):
        if data[pos] in _WHITESPACE:
            pos += 1
        elif data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        else:
            break
    start = pos
    while pos < len(data) and data[pos] not in _WHITESPACE and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise NetpbmHeaderError(path, "header ended early")
    return data[start:pos], pos


def _parse_header(path, data: bytes) -> Tuple[str, int, int, int, int]:
    magic = data[:2].decode("ascii", errors="replace")
    if magic not in _CHANNELS:
        raise NetpbmHeaderError(path, f"unsupported magic '{magic}' (expected P5 or P6)")
    pos = 2
    values = []
    for field_name in ("width", "height", "maxval"):
        token, pos = _next_token(path, data, pos)
        try:
            values.append(int(token))
        except ValueError:
            raise NetpbmHeaderError(path, f"{field_name} '{token.decode(errors='replace')}' is not an integer") from None
    width, height, maxval = values
    if width < 1 or height < 1:
        raise NetpbmHeaderError(path, f"invalid size {width}x{height}")
    if not 1 <= maxval <= 65535:
        raise NetpbmHeaderError(path, f"maxval {maxval} outside [1, 65535]")
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise NetpbmHeaderError(path, "missing whitespace after maxval")
    return magic, width, height, maxval, pos + 1


def read_netpbm(path, expected_magic: Optional[str] = None) -> NetpbmImage:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc.strerror})") from None
    magic, width, height, maxval, offset = _parse_header(path, data)
    if expected_magic is not None and magic != expected_magic:
        raise NetpbmHeaderError(path, f"expected {expected_magic}, found {magic}")

    channels = _CHANNELS[magic]
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    needed = count * dtype.itemsize
    payload = data[offset:offset + needed]
    if len(payload) < needed:
        raise NetpbmTruncatedError(path, f"payload has {len(payload)} bytes, {width}x{height} needs {needed}")
    if len(data) > offset + needed:
        logger.debug(f"{path}: ignoring {len(data) - offset - needed} trailing bytes")

    pixels = np.frombuffer(payload, dtype=dtype, count=count).astype(np.uint16 if maxval > 255 else np.uint8)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return NetpbmImage(magic, width, height, maxval, pixels.reshape(shape))


def read_pgm(path) -> NetpbmImage:
    return read_netpbm(path, PGM_MAGIC)


def read_ppm(path) -> NetpbmImage:
    return read_netpbm(path, PPM_MAGIC)


def _write(path, magic: str, pixels: np.ndarray, maxval: int, comment: Optional[str]) -> Path:
    path = Path(path)
    if not 1 <= maxval <= 65535:
        raise DataError(f"{path}: maxval {maxval} outside [1, 65535]")
    values = np.asarray(pixels)
    if values.size and (values.min() < 0 or values.max() > maxval):
        raise DataError(f"{path}: sample values [{values.min()}, {values.max()}] exceed maxval {maxval}")
    height, width = values.shape[:2]
    header = f"{magic}\n"
    if comment:
        header += "".join(f"# {line}\n" for line in comment.splitlines())
    header += f"{width} {height}\n{maxval}\n"
    dtype = ">u2" if maxval > 255 else "u1"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header.encode("ascii") + np.ascontiguousarray(values.astype(dtype)).tobytes())
    return path


def write_pgm(path, pixels: np.ndarray, maxval: Optional[int] = None, comment: Optional[str] = None) -> Path:
    """Write an h x w integer array; maxval defaults to 255 or 65535 depending on the dtype."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise NetpbmDimensionError(path, f"PGM needs an h x w array, got shape {pixels.shape}")
    if maxval is None:
        maxval = 65535 if pixels.dtype.itemsize > 1 else 255
    return _write(path, PGM_MAGIC, pixels, maxval, comment)


def write_ppm(path, pixels: np.ndarray, maxval: int = 255, comment: Optional[str] = None) -> Path:
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise NetpbmDimensionError(path, f"PPM needs an h x w x 3 array, got shape {pixels.shape}")
    return _write(path, PPM_MAGIC, pixels, maxval, comment)
