"""Minimal DICOM Part-10 reader for uncompressed 8-bit ultrasound exports.

Supports implicit and explicit VR little-endian transfer syntaxes only;
anything compressed, encapsulated, or big-endian is rejected up front.
Sequences are length-skipped, never interpreted.  The parser is total: any
byte input yields either a DicomObject or a structured DicomError.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from . import pngio
from .errors import (
    MalformedDicom,
    MissingRequiredTag,
    NotDicom,
    PixelDataTooShort,
    TruncatedFile,
    UnsupportedBitDepth,
    UnsupportedPixelFormat,
    UnsupportedTransferSyntax,
)

log = logging.getLogger(__name__)

IMPLICIT_VR_LE = "1.2.840.10008.1.2"
EXPLICIT_VR_LE = "1.2.840.10008.1.2.1"

TAG_PATIENT_ID = (0x0010, 0x0020)
TAG_SAMPLES_PER_PIXEL = (0x0028, 0x0002)
TAG_PHOTOMETRIC = (0x0028, 0x0004)
TAG_PLANAR_CONFIG = (0x0028, 0x0006)
TAG_ROWS = (0x0028, 0x0010)
TAG_COLUMNS = (0x0028, 0x0011)
TAG_BITS_ALLOCATED = (0x0028, 0x0100)
TAG_PIXEL_DATA = (0x7FE0, 0x0010)

REQUIRED_TAGS = (
    TAG_PATIENT_ID,
    TAG_SAMPLES_PER_PIXEL,
    TAG_PHOTOMETRIC,
    TAG_ROWS,
    TAG_COLUMNS,
    TAG_BITS_ALLOCATED,
    TAG_PIXEL_DATA,
)

# VRs carrying a 2-byte reserved field and 32-bit length in explicit VR
_LONG_VRS = {"OB", "OD", "OF", "OL", "OV", "OW", "SQ", "UC", "UN", "UR", "UT"}
_UNDEFINED = 0xFFFFFFFF


@dataclass
class DicomElement:
    vr: str  # "" when the transfer syntax is implicit
    value: bytes


@dataclass
class DicomObject:
    """Tag-ordered element map plus the transfer syntax it was read with."""

    elements: dict[tuple[int, int], DicomElement]
    transfer_syntax: str  # "implicit-le" | "explicit-le"

    def string(self, tag: tuple[int, int]) -> str:
        return self.elements[tag].value.decode("ascii", errors="replace").strip("\x00 ")

    def uint16(self, tag: tuple[int, int]) -> int:
        value = self.elements[tag].value
        if len(value) < 2:
            raise MalformedDicom(f"tag ({tag[0]:04X},{tag[1]:04X}) too short for US")
        return struct.unpack("<H", value[:2])[0]

    @property
    def patient_id(self) -> str:
        return self.string(TAG_PATIENT_ID)


@dataclass
class RasterImage:
    """Decoded 8-bit frame; samples is (h, w) uint8 or (h, w, 3) uint8."""

    width: int
    height: int
    channels: int
    samples: np.ndarray

    def __post_init__(self):
        expected = (self.height, self.width) if self.channels == 1 else (
            self.height, self.width, 3)
        if self.channels not in (1, 3) or self.samples.shape != expected:
            raise ValueError(
                f"samples shape {self.samples.shape} inconsistent with "
                f"{self.width}x{self.height}x{self.channels}"
            )


@dataclass
class NormalizedImage:
    width: int
    height: int
    channels: int
    values: np.ndarray  # float64 in [0, 1], same shape convention as RasterImage


class _Reader:
    def __init__(self, data: bytes, pos: int):
        self.data = data
        self.pos = pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFile(
                f"need {n} bytes at offset {self.pos}, have {len(self.data) - self.pos}"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def tag(self) -> tuple[int, int]:
        group, element = struct.unpack("<HH", self.take(4))
        return group, element

    @property
    def exhausted(self) -> bool:
        return self.pos >= len(self.data)


def parse_dicom(data: bytes) -> DicomObject:
    """Parse a complete Part-10 file image into an element map."""
    if len(data) < 132 or data[128:132] != b"DICM":
        raise NotDicom("no 128-byte preamble + DICM magic")

    reader = _Reader(data, 132)
    ts_uid = _parse_file_meta(reader)
    if ts_uid == IMPLICIT_VR_LE:
        syntax, explicit = "implicit-le", False
    elif ts_uid == EXPLICIT_VR_LE:
        syntax, explicit = "explicit-le", True
    else:
        raise UnsupportedTransferSyntax(ts_uid or "<missing transfer syntax>")

    elements: dict[tuple[int, int], DicomElement] = {}
    last_tag = (0x0002, 0xFFFF)
    while not reader.exhausted:
        tag = reader.tag()
        if tag <= last_tag:
            raise MalformedDicom(
                f"tags not strictly ascending at ({tag[0]:04X},{tag[1]:04X})"
            )
        last_tag = tag
        vr, value = _read_element_body(reader, tag, explicit)
        elements[tag] = DicomElement(vr, value)

    for tag in REQUIRED_TAGS:
        if tag not in elements:
            raise MissingRequiredTag(tag)
    return DicomObject(elements, syntax)


def _parse_file_meta(reader: _Reader) -> str:
    """Read group-0002 elements (always explicit VR LE); return the TS UID."""
    ts_uid = ""
    while not reader.exhausted:
        mark = reader.pos
        group, element = reader.tag()
        if group != 0x0002:
            reader.pos = mark
            break
        vr, value = _read_element_body(reader, (group, element), explicit=True)
        if element == 0x0010:
            ts_uid = value.decode("ascii", errors="replace").strip("\x00 ")
    return ts_uid


def _read_element_body(
    reader: _Reader, tag: tuple[int, int], explicit: bool
) -> tuple[str, bytes]:
    if explicit:
        vr = reader.take(2).decode("ascii", errors="replace")
        if not (len(vr) == 2 and vr.isalpha() and vr.isupper()):
            raise MalformedDicom(
                f"invalid VR {vr!r} at tag ({tag[0]:04X},{tag[1]:04X})"
            )
        if vr in _LONG_VRS:
            reader.take(2)  # reserved
            (length,) = struct.unpack("<I", reader.take(4))
        else:
            (length,) = struct.unpack("<H", reader.take(2))
    else:
        vr = ""
        (length,) = struct.unpack("<I", reader.take(4))

    if length == _UNDEFINED:
        # only sequences may carry undefined length under uncompressed syntaxes
        if explicit and vr not in ("SQ", "UN"):
            raise MalformedDicom(
                f"undefined length on VR {vr} at ({tag[0]:04X},{tag[1]:04X})"
            )
        _skip_undefined_sequence(reader, explicit)
        return (vr or "SQ"), b""

    if length % 2 == 1:
        log.warning(
            "odd value length %d at tag (%04X,%04X); accepting noncompliant element",
            length, tag[0], tag[1],
        )
    return vr, reader.take(length)


def _skip_undefined_sequence(reader: _Reader, explicit: bool) -> None:
    """Walk sequence items without interpreting them, up to (FFFE,E0DD)."""
    while True:
        tag = reader.tag()
        (length,) = struct.unpack("<I", reader.take(4))
        if tag == (0xFFFE, 0xE0DD):
            return
        if tag != (0xFFFE, 0xE000):
            raise MalformedDicom(
                f"unexpected tag ({tag[0]:04X},{tag[1]:04X}) inside sequence"
            )
        if length == _UNDEFINED:
            # undefined-length item: walk its elements until the item delimiter
            while True:
                inner = reader.tag()
                if inner == (0xFFFE, 0xE00D):
                    reader.take(4)
                    break
                _read_element_body(reader, inner, explicit)
        else:
            reader.take(length)


def decode_image(obj: DicomObject) -> RasterImage:
    """Copy pixel bytes out of the dataset, normalizing brightness polarity.

    MONOCHROME1 frames are inverted so white is always bright; RGB passes
    through (planar configuration 1 is re-interleaved).
    """
    bits = obj.uint16(TAG_BITS_ALLOCATED)
    if bits != 8:
        raise UnsupportedBitDepth(f"BitsAllocated={bits}, only 8 supported")
    spp = obj.uint16(TAG_SAMPLES_PER_PIXEL)
    if spp not in (1, 3):
        raise UnsupportedPixelFormat(f"SamplesPerPixel={spp}")
    rows = obj.uint16(TAG_ROWS)
    cols = obj.uint16(TAG_COLUMNS)
    if rows == 0 or cols == 0:
        raise MalformedDicom(f"degenerate image dimensions {cols}x{rows}")

    photometric = obj.string(TAG_PHOTOMETRIC)
    pixel_bytes = obj.elements[TAG_PIXEL_DATA].value
    need = rows * cols * spp
    if len(pixel_bytes) < need:
        raise PixelDataTooShort(f"PixelData has {len(pixel_bytes)} bytes, need {need}")

    flat = np.frombuffer(pixel_bytes[:need], dtype=np.uint8)
    if spp == 1:
        samples = flat.reshape(rows, cols).copy()
        if photometric == "MONOCHROME1":
            samples = 255 - samples
        elif photometric != "MONOCHROME2":
            raise UnsupportedPixelFormat(f"PhotometricInterpretation={photometric!r}")
    else:
        if photometric != "RGB":
            raise UnsupportedPixelFormat(f"PhotometricInterpretation={photometric!r}")
        planar = 0
        if TAG_PLANAR_CONFIG in obj.elements:
            planar = obj.uint16(TAG_PLANAR_CONFIG)
        if planar == 0:
            samples = flat.reshape(rows, cols, 3).copy()
        elif planar == 1:
            samples = flat.reshape(3, rows, cols).transpose(1, 2, 0).copy()
        else:
            raise UnsupportedPixelFormat(f"PlanarConfiguration={planar}")

    return RasterImage(width=cols, height=rows, channels=spp, samples=samples)


def normalize(img: RasterImage) -> NormalizedImage:
    """Scale 8-bit samples to [0, 1] (value = sample / 255 exactly)."""
    return NormalizedImage(
        img.width, img.height, img.channels, img.samples.astype(np.float64) / 255.0
    )


def write_png(img: RasterImage, path) -> None:
    """Write the frame losslessly as 8-bit gray or truecolor PNG."""
    pngio.write_png_file(img.samples, path)


# --- fixture writer ----------------------------------------------------------

def encode_dicom(
    pixels: np.ndarray,
    patient_id: str = "PAT0",
    *,
    transfer_syntax: str = EXPLICIT_VR_LE,
    photometric: str | None = None,
    bits_allocated: int = 8,
    omit_tags: tuple[tuple[int, int], ...] = (),
    extra_elements: dict[tuple[int, int], tuple[str, bytes]] | None = None,
) -> bytes:
    """Build a minimal Part-10 file around a (h, w) or (h, w, 3) uint8 array.

    Used by tests and demos to synthesize inputs field-by-field; omit_tags
    and extra_elements exist to construct deliberately broken files.
    """
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim == 2:
        spp, (rows, cols) = 1, pixels.shape
        default_photometric = "MONOCHROME2"
    elif pixels.ndim == 3 and pixels.shape[2] == 3:
        spp, (rows, cols) = 3, pixels.shape[:2]
        default_photometric = "RGB"
    else:
        raise ValueError(f"unsupported pixel shape {pixels.shape}")
    photometric = photometric or default_photometric

    def pad(value: bytes, nul: bool = False) -> bytes:
        return value + (b"\x00" if nul else b" ") if len(value) % 2 else value

    dataset: dict[tuple[int, int], tuple[str, bytes]] = {
        TAG_PATIENT_ID: ("LO", pad(patient_id.encode("ascii"))),
        TAG_SAMPLES_PER_PIXEL: ("US", struct.pack("<H", spp)),
        TAG_PHOTOMETRIC: ("CS", pad(photometric.encode("ascii"))),
        TAG_ROWS: ("US", struct.pack("<H", rows)),
        TAG_COLUMNS: ("US", struct.pack("<H", cols)),
        TAG_BITS_ALLOCATED: ("US", struct.pack("<H", bits_allocated)),
        TAG_PIXEL_DATA: ("OW", pad(pixels.tobytes(), nul=True)),
    }
    if extra_elements:
        dataset.update(extra_elements)
    for tag in omit_tags:
        dataset.pop(tag, None)

    explicit = transfer_syntax != IMPLICIT_VR_LE
    body = bytearray()
    for tag in sorted(dataset):
        vr, value = dataset[tag]
        body += _encode_element(tag, vr, value, explicit)

    meta = bytearray()
    for tag, vr, value in (
        ((0x0002, 0x0001), "OB", b"\x00\x01"),
        ((0x0002, 0x0002), "UI", pad(b"1.2.840.10008.5.1.4.1.1.6.1", nul=True)),
        ((0x0002, 0x0003), "UI", pad(b"1.2.826.0.1.3680043.9999.1", nul=True)),
        ((0x0002, 0x0010), "UI", pad(transfer_syntax.encode("ascii"), nul=True)),
    ):
        meta += _encode_element(tag, vr, value, explicit=True)

    out = bytearray(128)  # zero preamble
    out += b"DICM"
    out += _encode_element((0x0002, 0x0000), "UL", struct.pack("<I", len(meta)), True)
    out += meta
    out += body
    return bytes(out)


def _encode_element(
    tag: tuple[int, int], vr: str, value: bytes, explicit: bool
) -> bytes:
    head = struct.pack("<HH", tag[0], tag[1])
    if explicit:
        if vr in _LONG_VRS:
            return head + vr.encode() + b"\x00\x00" + struct.pack("<I", len(value)) + value
        return head + vr.encode() + struct.pack("<H", len(value)) + value
    return head + struct.pack("<I", len(value)) + value
