"""Polygon arithmetic and binary-mask operations.

All geometry lives in continuous pixel coordinates with the origin at the
image's top-left corner and y pointing down.  A pixel (i, j) owns the unit
square [i, i+1) x [j, j+1) and is sampled at its center (i+0.5, j+0.5).

Pixel membership uses the even-odd rule at pixel centers.  To remove
undefined behavior when a polygon vertex or edge passes exactly through a
pixel center, every test point is nudged by +CENTER_NUDGE in x before the
crossing test; reference implementations must apply the same nudge to
reproduce masks bit-for-bit.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePolygon, DimensionMismatch, EmptyMask

# Horizontal nudge applied to every pixel-center test point (2**-20 px).
CENTER_NUDGE = 2.0 ** -20


class Tirads(enum.Enum):
    """Radiologist risk category attached to a nodule label."""

    TR1 = "TR1"
    TR2 = "TR2"
    TR3 = "TR3"
    TR4 = "TR4"
    TR5 = "TR5"


@dataclass
class NodulePolygon:
    """One labeled nodule: an ordered vertex loop (closing edge implicit).

    vertices is an (n, 2) float array of (x, y) pairs.  Self-intersecting
    loops are legal and filled even-odd; validation only rejects loops that
    have no interior at all.
    """

    vertices: np.ndarray
    class_id: int = 0
    tirads: Tirads | None = None
    shape_attrs: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise DegeneratePolygon(
                f"vertices must be an (n, 2) array, got shape {self.vertices.shape}"
            )

    def __eq__(self, other):
        if not isinstance(other, NodulePolygon):
            return NotImplemented
        return (
            np.array_equal(self.vertices, other.vertices)
            and self.class_id == other.class_id
            and self.tirads == other.tirads
            and self.shape_attrs == other.shape_attrs
        )

    def validate(self) -> None:
        """Raise DegeneratePolygon unless the loop encloses nonzero area."""
        if len(self.vertices) < 3:
            raise DegeneratePolygon(f"{len(self.vertices)} vertices, need >= 3")
        if not np.all(np.isfinite(self.vertices)):
            raise DegeneratePolygon("non-finite vertex coordinate")
        if signed_area(self.vertices) == 0.0:
            raise DegeneratePolygon("zero signed area")


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError("inverted bounding box")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_xywh(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max - self.x_min, self.y_max - self.y_min]


@dataclass
class InstanceMask:
    """Binary occupancy grid for one instance, same frame as its image.

    bits is a (height, width) bool array; area is its popcount; bbox is the
    tight pixel-extent hull of the set pixels ([min_i, max_i+1) x
    [min_j, max_j+1)).  Empty masks are rejected at construction.
    """

    width: int
    height: int
    bits: np.ndarray
    area: int
    bbox: BoundingBox

    @classmethod
    def from_bits(cls, bits: np.ndarray) -> "InstanceMask":
        bits = np.asarray(bits, dtype=bool)
        area = int(np.count_nonzero(bits))
        if area == 0:
            raise EmptyMask("mask has no set pixels")
        rows = np.flatnonzero(bits.any(axis=1))
        cols = np.flatnonzero(bits.any(axis=0))
        bbox = BoundingBox(
            float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1)
        )
        return cls(bits.shape[1], bits.shape[0], bits, area, bbox)


def signed_area(vertices: np.ndarray) -> float:
    """Signed shoelace sum / 2 (positive for clockwise loops in y-down space)."""
    x = vertices[:, 0]
    y = vertices[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def shoelace_area(polygon: NodulePolygon) -> float:
    """Unsigned polygon area in px^2."""
    polygon.validate()
    return abs(signed_area(polygon.vertices))


def polygon_bbox(polygon: NodulePolygon) -> BoundingBox:
    """Tight axis-aligned hull of the vertices."""
    polygon.validate()
    v = polygon.vertices
    return BoundingBox(
        float(v[:, 0].min()), float(v[:, 1].min()),
        float(v[:, 0].max()), float(v[:, 1].max()),
    )


def point_in_polygon(x: float, y: float, vertices: np.ndarray) -> bool:
    """Even-odd test at (x + CENTER_NUDGE, y), counting crossings right of x.

    This scalar routine is the definition of pixel membership; rasterize()
    agrees with it at every pixel center.
    """
    qx = x + CENTER_NUDGE
    crossings = 0
    n = len(vertices)
    for k in range(n):
        x1, y1 = vertices[k]
        x2, y2 = vertices[(k + 1) % n]
        if (y1 > y) != (y2 > y):
            x_int = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x_int > qx:
                crossings += 1
    return crossings % 2 == 1


def rasterize(polygon: NodulePolygon, width: int, height: int) -> InstanceMask:
    """Fill the polygon into a width x height frame.

    A pixel is set iff its center is inside under the even-odd rule (with
    the documented +x nudge); pixels outside the frame are clipped.  Raises
    EmptyMask when no pixel center falls inside.
    """
    polygon.validate()
    if width <= 0 or height <= 0:
        raise ValueError(f"frame {width}x{height} has no pixels")

    v = polygon.vertices
    x1 = v[:, 0]
    y1 = v[:, 1]
    x2 = np.roll(x1, -1)
    y2 = np.roll(y1, -1)

    j0 = max(0, int(math.floor(y1.min())) - 1)
    j1 = min(height - 1, int(math.ceil(y1.max())) + 1)
    i0 = max(0, int(math.floor(x1.min())) - 1)
    i1 = min(width - 1, int(math.ceil(x1.max())) + 1)

    bits = np.zeros((height, width), dtype=bool)
    if j0 > j1 or i0 > i1:
        raise EmptyMask("polygon lies entirely outside the frame")

    qxs = np.arange(i0, i1 + 1, dtype=np.float64) + 0.5 + CENTER_NUDGE
    for j in range(j0, j1 + 1):
        qy = j + 0.5
        crossing = (y1 > qy) != (y2 > qy)
        if not crossing.any():
            continue
        xs = x1[crossing] + (qy - y1[crossing]) * (x2[crossing] - x1[crossing]) / (
            y2[crossing] - y1[crossing]
        )
        xs.sort()
        # pixel center is inside iff an odd number of crossings lie to its right
        count_right = len(xs) - np.searchsorted(xs, qxs, side="right")
        bits[j, i0:i1 + 1] = (count_right & 1).astype(bool)

    try:
        return InstanceMask.from_bits(bits)
    except EmptyMask:
        raise EmptyMask("no pixel center falls inside the polygon") from None


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0 for any zero-area operand."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(0.0, iw) * max(0.0, ih)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def mask_iou(a: InstanceMask, b: InstanceMask) -> float:
    """|a AND b| / |a OR b| for two masks over the same frame."""
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionMismatch(
            f"mask frames differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    inter = int(np.count_nonzero(a.bits & b.bits))
    union = a.area + b.area - inter
    if union == 0:
        return 0.0
    return inter / union
