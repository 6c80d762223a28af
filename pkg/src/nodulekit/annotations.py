"""Parse, validate, and re-emit per-nodule polygon annotations.

The canonical export is a single UTF-8 JSON document:

    { "schema": "nodule-annotations/1",
      "records": [ { "image": "<filename>", "patient_id": "<string>",
                     "width": <int>, "height": <int>,
                     "no_finding": <bool, optional>,
                     "excluded": "<reason, optional>",
                     "doppler": <bool, optional>,
                     "meta": { "<k>": "<v>", ... } (optional),
                     "nodules": [ { "polygon": [[x, y], ...],
                                    "tirads": "TR1".."TR5" (optional),
                                    "attrs": { ... } (optional) } ] } ] }

Vendor-specific exports are converted to this schema upstream; unknown
record keys survive a parse/emit cycle inside "meta".
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegeneratePolygon,
    EmptyExport,
    MalformedJson,
    SchemaViolation,
)
from .geometry import NodulePolygon, Tirads

SCHEMA = "nodule-annotations/1"


@dataclass
class AnnotationRecord:
    image_ref: str
    patient_id: str
    image_width: int
    image_height: int
    nodules: list[NodulePolygon] = field(default_factory=list)
    no_finding: bool = False
    excluded: str | None = None
    doppler: bool | None = None
    source_meta: dict[str, str] = field(default_factory=dict)


@dataclass
class AnnotationSet:
    records: list[AnnotationRecord]
    label_schema_version: str = SCHEMA

    def record_map(self) -> dict[str, AnnotationRecord]:
        return {r.image_ref: r for r in self.records}

    def total_nodules(self) -> int:
        return sum(len(r.nodules) for r in self.records)


@dataclass
class ValidationReport:
    """Findings from cross-checking annotations against decoded images.

    Flagged records are only marked here, never removed from the set.
    """

    missing_images: list[str] = field(default_factory=list)
    unannotated_images: list[str] = field(default_factory=list)
    out_of_bounds: list[tuple[str, int, str]] = field(default_factory=list)
    dimension_mismatches: list[tuple[str, str]] = field(default_factory=list)

    @property
    def is_clean(self) -> bool:
        return not (
            self.missing_images
            or self.unannotated_images
            or self.out_of_bounds
            or self.dimension_mismatches
        )


def parse_annotations(json_bytes: bytes | str) -> AnnotationSet:
    """Parse the canonical annotation JSON into validated records."""
    if isinstance(json_bytes, bytes):
        try:
            json_bytes = json_bytes.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedJson(f"not UTF-8: {exc}") from exc
    try:
        doc = json.loads(json_bytes)
    except json.JSONDecodeError as exc:
        raise MalformedJson(str(exc)) from exc
    if not isinstance(doc, dict):
        raise MalformedJson(f"top level must be an object, got {type(doc).__name__}")

    if doc.get("schema") != SCHEMA:
        raise SchemaViolation("schema", f"expected {SCHEMA!r}, got {doc.get('schema')!r}")
    raw_records = doc.get("records")
    if not isinstance(raw_records, list):
        raise SchemaViolation("records", "missing or not an array")
    if not raw_records:
        raise EmptyExport("export contains zero records")

    records = []
    seen_refs: set[str] = set()
    for i, raw in enumerate(raw_records):
        record = _parse_record(raw, f"records[{i}]")
        if record.image_ref in seen_refs:
            raise SchemaViolation(
                f"records[{i}].image", f"duplicate image_ref {record.image_ref!r}"
            )
        seen_refs.add(record.image_ref)
        records.append(record)
    return AnnotationSet(records)


def _parse_record(raw, path: str) -> AnnotationRecord:
    if not isinstance(raw, dict):
        raise SchemaViolation(path, "record must be an object")

    image_ref = _require(raw, "image", str, path)
    patient_id = _require(raw, "patient_id", str, path)
    width = _require(raw, "width", int, path)
    height = _require(raw, "height", int, path)
    if width <= 0 or height <= 0:
        raise SchemaViolation(path, f"nonpositive dimensions {width}x{height}")

    no_finding = raw.get("no_finding", False)
    if not isinstance(no_finding, bool):
        raise SchemaViolation(f"{path}.no_finding", "must be a boolean")
    excluded = raw.get("excluded")
    if excluded is not None and not isinstance(excluded, str):
        raise SchemaViolation(f"{path}.excluded", "must be a string reason")
    doppler = raw.get("doppler")
    if doppler is not None and not isinstance(doppler, bool):
        raise SchemaViolation(f"{path}.doppler", "must be a boolean")

    source_meta: dict[str, str] = {}
    meta = raw.get("meta", {})
    if not isinstance(meta, dict):
        raise SchemaViolation(f"{path}.meta", "must be an object")
    for k, v in meta.items():
        source_meta[str(k)] = v if isinstance(v, str) else json.dumps(v, sort_keys=True)

    known = {"image", "patient_id", "width", "height", "no_finding",
             "excluded", "doppler", "meta", "nodules"}
    for k, v in raw.items():
        if k not in known:
            source_meta[k] = v if isinstance(v, str) else json.dumps(v, sort_keys=True)

    raw_nodules = raw.get("nodules", [])
    if not isinstance(raw_nodules, list):
        raise SchemaViolation(f"{path}.nodules", "must be an array")
    if no_finding and raw_nodules:
        raise SchemaViolation(f"{path}.nodules", "no_finding record carries nodules")
    if not no_finding and not raw_nodules:
        raise SchemaViolation(
            f"{path}.nodules", "empty nodule list without no_finding flag"
        )

    nodules = []
    for j, raw_nodule in enumerate(raw_nodules):
        nodules.append(
            _parse_nodule(raw_nodule, f"{path}.nodules[{j}]", j, source_meta)
        )
    return AnnotationRecord(
        image_ref=image_ref,
        patient_id=patient_id,
        image_width=width,
        image_height=height,
        nodules=nodules,
        no_finding=no_finding,
        excluded=excluded,
        doppler=doppler,
        source_meta=source_meta,
    )


def _parse_nodule(raw, path: str, index: int, source_meta: dict) -> NodulePolygon:
    if not isinstance(raw, dict):
        raise SchemaViolation(path, "nodule must be an object")
    points = raw.get("polygon")
    if not isinstance(points, list) or len(points) < 3:
        raise SchemaViolation(f"{path}.polygon", "needs at least 3 [x, y] points")
    for k, pt in enumerate(points):
        if (
            not isinstance(pt, (list, tuple))
            or len(pt) != 2
            or not all(isinstance(c, (int, float)) and math.isfinite(c) for c in pt)
        ):
            raise SchemaViolation(f"{path}.polygon[{k}]", "not a finite [x, y] pair")

    tirads = None
    raw_tirads = raw.get("tirads")
    if raw_tirads is not None:
        try:
            tirads = Tirads(raw_tirads)
        except ValueError:
            # unknown label: keep the raw string, leave the enum unset
            source_meta[f"nodules[{index}].tirads"] = str(raw_tirads)

    attrs = raw.get("attrs", {})
    if not isinstance(attrs, dict):
        raise SchemaViolation(f"{path}.attrs", "must be an object")
    attrs = {str(k): str(v) for k, v in attrs.items()}

    polygon = NodulePolygon(np.asarray(points, dtype=np.float64),
                            class_id=0, tirads=tirads, shape_attrs=attrs)
    try:
        polygon.validate()
    except DegeneratePolygon as exc:
        raise SchemaViolation(f"{path}.polygon", str(exc)) from exc
    return polygon


def _require(raw: dict, key: str, kind, path: str):
    value = raw.get(key)
    # bool is an int subclass; ints must not pass as bools or vice versa
    if not isinstance(value, kind) or isinstance(value, bool) != (kind is bool):
        raise SchemaViolation(f"{path}.{key}", f"missing or not {kind.__name__}")
    return value


def emit_annotations(annotation_set: AnnotationSet) -> str:
    """Serialize back to the canonical schema (parse -> emit -> parse fixpoint)."""
    records = []
    for record in annotation_set.records:
        out: dict = {
            "image": record.image_ref,
            "patient_id": record.patient_id,
            "width": record.image_width,
            "height": record.image_height,
        }
        if record.no_finding:
            out["no_finding"] = True
        if record.excluded is not None:
            out["excluded"] = record.excluded
        if record.doppler is not None:
            out["doppler"] = record.doppler
        nodules = []
        for j, nodule in enumerate(record.nodules):
            entry: dict = {"polygon": [[float(x), float(y)] for x, y in nodule.vertices]}
            if nodule.tirads is not None:
                entry["tirads"] = nodule.tirads.value
            elif f"nodules[{j}].tirads" in record.source_meta:
                entry["tirads"] = record.source_meta[f"nodules[{j}].tirads"]
            if nodule.shape_attrs:
                entry["attrs"] = dict(nodule.shape_attrs)
            nodules.append(entry)
        out["nodules"] = nodules
        if record.source_meta:
            meta = {k: v for k, v in record.source_meta.items()
                    if not k.endswith(".tirads")}
            if meta:
                out["meta"] = meta
        records.append(out)
    return json.dumps({"schema": SCHEMA, "records": records}, indent=2) + "\n"


def validate_against_images(
    annotation_set: AnnotationSet,
    image_dims: dict[str, tuple[int, int]],
    tolerance: float = 0.5,
) -> tuple[AnnotationSet, ValidationReport]:
    """Cross-check annotations against decoded image dimensions.

    Vertices overshooting the frame by at most `tolerance` px are clipped to
    the frame; larger excursions are reported.  Returns the (possibly
    clipped) set and the report; nothing is deleted.
    """
    report = ValidationReport()
    annotated = {r.image_ref for r in annotation_set.records}
    report.unannotated_images = sorted(set(image_dims) - annotated)

    new_records = []
    for record in annotation_set.records:
        width, height = record.image_width, record.image_height
        if record.image_ref not in image_dims:
            report.missing_images.append(record.image_ref)
        else:
            actual = image_dims[record.image_ref]
            if actual != (width, height):
                report.dimension_mismatches.append((
                    record.image_ref,
                    f"declared {width}x{height}, decoded {actual[0]}x{actual[1]}",
                ))
                width, height = actual

        new_nodules = []
        for j, nodule in enumerate(record.nodules):
            v = nodule.vertices
            over_x = np.maximum(v[:, 0] - width, -v[:, 0]).max()
            over_y = np.maximum(v[:, 1] - height, -v[:, 1]).max()
            overshoot = max(float(over_x), float(over_y))
            if overshoot > tolerance:
                report.out_of_bounds.append((
                    record.image_ref, j,
                    f"vertex {overshoot:.2f} px outside {width}x{height} frame",
                ))
                new_nodules.append(nodule)
                continue
            if overshoot > 0:
                clipped = np.column_stack([
                    np.clip(v[:, 0], 0.0, float(width)),
                    np.clip(v[:, 1], 0.0, float(height)),
                ])
                nodule = NodulePolygon(clipped, nodule.class_id,
                                       nodule.tirads, dict(nodule.shape_attrs))
            new_nodules.append(nodule)
        new_records.append(AnnotationRecord(
            image_ref=record.image_ref,
            patient_id=record.patient_id,
            image_width=record.image_width,
            image_height=record.image_height,
            nodules=new_nodules,
            no_finding=record.no_finding,
            excluded=record.excluded,
            doppler=record.doppler,
            source_meta=dict(record.source_meta),
        ))
    return AnnotationSet(new_records, annotation_set.label_schema_version), report
