"""Minimal lossless PNG codec: 8-bit grayscale and 8-bit RGB only.

The toolkit converts clinical frames to PNG and re-reads its own mask and
image files, so the codec supports exactly the formats it emits (bit depth
8, color types 0 and 2, non-interlaced) and decodes all five scanline
filters for conformance with files produced elsewhere.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import IoFailure, PngError

_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _write_chunk(out: bytearray, ctype: bytes, body: bytes) -> None:
    out += struct.pack(">I", len(body))
    out += ctype
    out += body
    out += struct.pack(">I", zlib.crc32(ctype + body) & 0xFFFFFFFF)


def encode_png(samples: np.ndarray) -> bytes:
    """Encode (h, w) grayscale or (h, w, 3) RGB uint8 samples to PNG bytes."""
    samples = np.asarray(samples)
    if samples.dtype != np.uint8:
        raise ValueError(f"samples must be uint8, got {samples.dtype}")
    if samples.ndim == 2:
        color_type = 0
    elif samples.ndim == 3 and samples.shape[2] == 3:
        color_type = 2
    else:
        raise ValueError(f"unsupported sample shape {samples.shape}")

    height, width = samples.shape[:2]
    stride = width * (1 if color_type == 0 else 3)
    raw = samples.reshape(height, stride)
    # filter byte 0 (None) on every scanline
    scanlines = np.zeros((height, stride + 1), dtype=np.uint8)
    scanlines[:, 1:] = raw

    out = bytearray(_SIGNATURE)
    ihdr = struct.pack(">IIBBBBB", width, height, 8, color_type, 0, 0, 0)
    _write_chunk(out, b"IHDR", ihdr)
    _write_chunk(out, b"IDAT", zlib.compress(scanlines.tobytes()))
    _write_chunk(out, b"IEND", b"")
    return bytes(out)


def decode_png(data: bytes) -> np.ndarray:
    """Decode PNG bytes to a (h, w) or (h, w, 3) uint8 array."""
    if data[:8] != _SIGNATURE:
        raise PngError("missing PNG signature")

    pos = 8
    ihdr = None
    idat = bytearray()
    while pos < len(data):
        if pos + 8 > len(data):
            raise PngError("truncated chunk header")
        length, ctype = struct.unpack(">I4s", data[pos:pos + 8])
        body_end = pos + 8 + length
        if body_end + 4 > len(data):
            raise PngError(f"truncated {ctype!r} chunk")
        body = data[pos + 8:body_end]
        (crc,) = struct.unpack(">I", data[body_end:body_end + 4])
        if zlib.crc32(ctype + body) & 0xFFFFFFFF != crc:
            raise PngError(f"bad CRC in {ctype!r} chunk")
        pos = body_end + 4

        if ctype == b"IHDR":
            ihdr = body
        elif ctype == b"IDAT":
            idat.extend(body)
        elif ctype == b"IEND":
            break

    if ihdr is None or len(ihdr) != 13:
        raise PngError("missing or malformed IHDR")
    width, height, depth, color_type, comp, filt, interlace = struct.unpack(
        ">IIBBBBB", ihdr
    )
    if depth != 8 or color_type not in (0, 2):
        raise PngError(f"unsupported format: depth={depth} color_type={color_type}")
    if comp != 0 or filt != 0 or interlace != 0:
        raise PngError("unsupported compression/filter/interlace method")
    if width == 0 or height == 0:
        raise PngError("zero-sized image")

    channels = 1 if color_type == 0 else 3
    stride = width * channels
    try:
        raw = zlib.decompress(bytes(idat))
    except zlib.error as exc:
        raise PngError(f"IDAT inflate failed: {exc}") from exc
    if len(raw) != height * (stride + 1):
        raise PngError(
            f"decompressed size {len(raw)} != expected {height * (stride + 1)}"
        )

    samples = _unfilter(raw, height, stride, channels)
    if channels == 1:
        return samples.reshape(height, width)
    return samples.reshape(height, width, 3)


def _unfilter(raw: bytes, height: int, stride: int, bpp: int) -> np.ndarray:
    out = np.empty((height, stride), dtype=np.uint8)
    prev = bytearray(stride)
    for j in range(height):
        off = j * (stride + 1)
        ftype = raw[off]
        row = bytearray(raw[off + 1:off + 1 + stride])
        if ftype == 0:
            pass
        elif ftype == 1:  # Sub
            for i in range(bpp, stride):
                row[i] = (row[i] + row[i - bpp]) & 0xFF
        elif ftype == 2:  # Up
            for i in range(stride):
                row[i] = (row[i] + prev[i]) & 0xFF
        elif ftype == 3:  # Average
            for i in range(stride):
                left = row[i - bpp] if i >= bpp else 0
                row[i] = (row[i] + (left + prev[i]) // 2) & 0xFF
        elif ftype == 4:  # Paeth
            for i in range(stride):
                left = row[i - bpp] if i >= bpp else 0
                up = prev[i]
                ul = prev[i - bpp] if i >= bpp else 0
                row[i] = (row[i] + _paeth(left, up, ul)) & 0xFF
        else:
            raise PngError(f"unknown filter type {ftype} on row {j}")
        prev = row
        out[j] = np.frombuffer(bytes(row), dtype=np.uint8)
    return out


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def write_png_file(samples: np.ndarray, path) -> None:
    """Encode and write atomically; raises IoFailure on OS errors."""
    from .fileio import write_atomic

    try:
        write_atomic(path, encode_png(samples))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_png_file(path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return decode_png(data)


def png_dimensions(data: bytes) -> tuple[int, int, int]:
    """Return (width, height, channels) from the IHDR without a full decode."""
    if data[:8] != _SIGNATURE or len(data) < 33 or data[12:16] != b"IHDR":
        raise PngError("missing PNG signature or IHDR")
    width, height, depth, color_type = struct.unpack(">IIBB", data[16:26])
    if depth != 8 or color_type not in (0, 2):
        raise PngError(f"unsupported format: depth={depth} color_type={color_type}")
    return width, height, 1 if color_type == 0 else 3
