"""Emit training-ready artifacts: YOLO segmentation labels, COCO instance
JSON, and standalone per-nodule mask PNGs.

Output is deterministic byte-for-byte: stable ordering everywhere and fixed
6-decimal formatting for YOLO coordinates.
"""

from __future__ import annotations

import json
import shutil
from pathlib import Path

import numpy as np

from . import pngio
from .annotations import AnnotationRecord, AnnotationSet
from .errors import NoNodules, UnsplitManifest
from .fileio import write_atomic_text
from .geometry import InstanceMask, polygon_bbox, rasterize, shoelace_area
from .manifest import BUCKETS, DatasetManifest

CLASS_NAME = "nodule"
YOLO_CLASS_ID = 0
COCO_CATEGORY_ID = 1


def export_yolo(record: AnnotationRecord) -> str:
    """YOLO-seg label text: one `class x1 y1 x2 y2 ...` line per nodule,
    coordinates normalized by the image dimensions."""
    if not record.nodules:
        if record.no_finding:
            return ""
        raise NoNodules(f"{record.image_ref} has no nodules and is not no_finding")

    width = float(record.image_width)
    height = float(record.image_height)
    lines = []
    for nodule in record.nodules:
        coords = []
        for x, y in nodule.vertices:
            coords.append(f"{min(1.0, max(0.0, x / width)):.6f}")
            coords.append(f"{min(1.0, max(0.0, y / height)):.6f}")
        lines.append(" ".join([str(YOLO_CLASS_ID)] + coords))
    return "\n".join(lines) + "\n"


def parse_yolo_label(
    text: str, width: int, height: int
) -> list[tuple[int, np.ndarray]]:
    """Invert export_yolo: (class_id, denormalized (n, 2) vertices) per line."""
    result = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        fields = line.split()
        coords = [float(f) for f in fields[1:]]
        if len(coords) % 2 or len(coords) < 6:
            raise ValueError(f"label line has {len(coords)} coordinates")
        pairs = np.array(coords, dtype=np.float64).reshape(-1, 2)
        pairs[:, 0] *= width
        pairs[:, 1] *= height
        result.append((int(fields[0]), pairs))
    return result


def export_coco(
    manifest: DatasetManifest, annotations: AnnotationSet, bucket: str
) -> dict:
    """COCO instance JSON for one split bucket; ids dense from 1 in manifest
    (lexicographic image_ref) order."""
    if all(e.split is None for e in manifest.active_entries()):
        raise UnsplitManifest("manifest has no split assignments")
    if bucket not in BUCKETS:
        raise ValueError(f"unknown bucket {bucket!r}")

    record_map = annotations.record_map()
    images = []
    coco_annotations = []
    image_id = 0
    annotation_id = 0
    for entry in manifest.active_entries():
        if entry.split != bucket:
            continue
        record = record_map[entry.image_ref]
        image_id += 1
        images.append({
            "id": image_id,
            "file_name": record.image_ref,
            "width": record.image_width,
            "height": record.image_height,
        })
        for nodule in record.nodules:
            annotation_id += 1
            bbox = polygon_bbox(nodule)
            item = {
                "id": annotation_id,
                "image_id": image_id,
                "category_id": COCO_CATEGORY_ID,
                "segmentation": [[float(c) for c in nodule.vertices.ravel()]],
                "bbox": [float(v) for v in bbox.as_xywh()],
                "area": float(shoelace_area(nodule)),
                "iscrowd": 0,
            }
            if nodule.tirads is not None:
                item["tirads"] = nodule.tirads.value
            coco_annotations.append(item)

    return {
        "images": images,
        "annotations": coco_annotations,
        "categories": [{"id": COCO_CATEGORY_ID, "name": CLASS_NAME}],
    }


def export_masks(record: AnnotationRecord) -> list[tuple[str, InstanceMask]]:
    """Rasterize each nodule separately: (filename, mask) pairs, filenames
    `<stem>_nodule<k>.png` with k the nodule index."""
    stem = Path(record.image_ref).stem
    masks = []
    for k, nodule in enumerate(record.nodules):
        mask = rasterize(nodule, record.image_width, record.image_height)
        masks.append((f"{stem}_nodule{k}.png", mask))
    return masks


def write_masks(record: AnnotationRecord, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    written = []
    for name, mask in export_masks(record):
        samples = np.where(mask.bits, 255, 0).astype(np.uint8)
        path = out_dir / name
        pngio.write_png_file(samples, path)
        written.append(path)
    return written


def write_yolo_dataset(
    manifest: DatasetManifest,
    annotations: AnnotationSet,
    out_root,
    buckets: tuple[str, ...] = BUCKETS,
    images_dir=None,
) -> dict[str, int]:
    """Write labels/{bucket}/<stem>.txt for each image plus a data.yaml
    listing; when images_dir is given, images are copied into
    images/{bucket}/ alongside.  Returns per-bucket label-file counts."""
    if all(e.split is None for e in manifest.active_entries()):
        raise UnsplitManifest("manifest has no split assignments")
    out_root = Path(out_root)
    record_map = annotations.record_map()

    counts = {}
    for bucket in buckets:
        label_dir = out_root / "labels" / bucket
        label_dir.mkdir(parents=True, exist_ok=True)
        image_dir = out_root / "images" / bucket
        image_dir.mkdir(parents=True, exist_ok=True)
        n = 0
        for ref in manifest.bucket_refs(bucket):
            record = record_map[ref]
            stem = Path(ref).stem
            write_atomic_text(label_dir / f"{stem}.txt", export_yolo(record))
            if images_dir is not None:
                src = Path(images_dir) / ref
                shutil.copyfile(src, image_dir / ref)
            n += 1
        counts[bucket] = n

    yaml_lines = [
        "path: .",
        "train: images/train",
        "val: images/val",
        "test: images/test",
        "names:",
        f"  {YOLO_CLASS_ID}: {CLASS_NAME}",
        "",
    ]
    write_atomic_text(out_root / "data.yaml", "\n".join(yaml_lines))
    return counts


def write_coco_datasets(
    manifest: DatasetManifest,
    annotations: AnnotationSet,
    out_root,
    buckets: tuple[str, ...] = BUCKETS,
) -> dict[str, Path]:
    out_dir = Path(out_root) / "annotations"
    paths = {}
    for bucket in buckets:
        doc = export_coco(manifest, annotations, bucket)
        path = out_dir / f"instances_{bucket}.json"
        write_atomic_text(path, json.dumps(doc, indent=2) + "\n")
        paths[bucket] = path
    return paths
