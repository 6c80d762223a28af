"""Exception hierarchy for the toolkit.

Every failure mode raised by nodulekit derives from NoduleKitError, so
callers (and the fuzz tests) can catch one base class and still tell the
categories apart.
"""


class NoduleKitError(Exception):
    """Base class for all toolkit errors."""


class InvalidConfig(NoduleKitError):
    """A configuration value violates its documented constraints."""


class IoFailure(NoduleKitError):
    """A file could not be read or written."""


# --- geometry ---------------------------------------------------------------

class DegeneratePolygon(NoduleKitError):
    """Polygon has fewer than 3 vertices, non-finite coordinates, or zero area."""


class EmptyMask(NoduleKitError):
    """Rasterization produced no set pixels inside the image frame."""


class DimensionMismatch(NoduleKitError):
    """Two masks (or a mask and a frame) disagree on width/height."""


# --- DICOM ingest ------------------------------------------------------------

class DicomError(NoduleKitError):
    """Base class for DICOM parsing/decoding failures."""


class NotDicom(DicomError):
    """Input lacks the 128-byte preamble + 'DICM' magic."""


class TruncatedFile(DicomError):
    """File ends in the middle of an element."""


class MalformedDicom(DicomError):
    """Structurally invalid stream (bad VR, non-ascending tags, bad lengths)."""


class UnsupportedTransferSyntax(DicomError):
    """Compressed, encapsulated, or big-endian transfer syntax."""


class MissingRequiredTag(DicomError):
    def __init__(self, tag: tuple[int, int]):
        self.tag = tag
        super().__init__(f"missing required tag ({tag[0]:04X},{tag[1]:04X})")


class UnsupportedBitDepth(DicomError):
    """BitsAllocated is not 8."""


class UnsupportedPixelFormat(DicomError):
    """SamplesPerPixel/PhotometricInterpretation outside the supported set."""


class PixelDataTooShort(DicomError):
    """PixelData has fewer bytes than Rows*Columns*SamplesPerPixel."""


# --- PNG codec ---------------------------------------------------------------

class PngError(NoduleKitError):
    """Not a decodable PNG of the supported flavor (8-bit gray/RGB)."""


# --- annotation ingest -------------------------------------------------------

class MalformedJson(NoduleKitError):
    """Input is not parseable JSON (or not a JSON object)."""


class SchemaViolation(NoduleKitError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class EmptyExport(NoduleKitError):
    """Annotation export contains zero records."""


# --- manifest / split --------------------------------------------------------

class DuplicateImageRef(NoduleKitError):
    """Two records claim the same image_ref."""


class TooFewPatients(NoduleKitError):
    """Fewer distinct patients than split buckets."""


# --- export ------------------------------------------------------------------

class NoNodules(NoduleKitError):
    """Record has no nodules and is not flagged no_finding."""


class UnsplitManifest(NoduleKitError):
    """Operation requires split assignments that are absent."""


# --- evaluation --------------------------------------------------------------

class NoGroundTruth(NoduleKitError):
    """Average precision is undefined without ground-truth instances."""


class UnknownImageRef(NoduleKitError):
    """Prediction references an image absent from the ground-truth set."""


class SplitMismatch(NoduleKitError):
    """Prediction references an image outside the evaluated bucket."""


# --- synth -------------------------------------------------------------------

class NoRoomForSpurious(NoduleKitError):
    """Frame too crowded to place a GT-disjoint false positive."""
