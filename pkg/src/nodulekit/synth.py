"""Synthetic ultrasound frames with planted ground truth, plus controlled
prediction perturbations with exactly countable errors.

Frames are speckle-textured (multiplicative noise) with darker elliptical
nodules; each nodule's ground-truth polygon samples its ellipse boundary at
regular angles.  Nodules are placed so their margin-expanded bounding boxes
never overlap, which is what makes the perturbation oracle exact: a jittered
copy can only ever match its own source, and spurious detections are forced
bbox-disjoint from every ground truth, so evaluate() must reproduce the
planted kept/dropped/spurious counts verbatim.

All randomness is derived per image (or per record) from the master seed,
so outputs are identical regardless of iteration order or worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import pngio
from .annotations import AnnotationRecord, AnnotationSet, emit_annotations
from .dicom import RasterImage
from .errors import InvalidConfig, NoRoomForSpurious
from .evaluation import Detection
from .fileio import write_atomic_text
from .geometry import NodulePolygon, box_iou, mask_iou, polygon_bbox, rasterize
from .manifest import DatasetManifest, build_manifest, image_meta_from_raster, manifest_to_json


@dataclass(frozen=True)
class SynthConfig:
    n_patients: int = 20
    images_per_patient: tuple[int, int] = (1, 3)
    width_range: tuple[int, int] = (192, 256)
    height_range: tuple[int, int] = (192, 256)
    nodules_per_image: tuple[int, int] = (1, 2)
    no_finding_rate: float = 0.0
    axis_range: tuple[float, float] = (10.0, 28.0)
    contrast: float = 60.0
    speckle: float = 0.2
    doppler_fraction: float = 0.0
    polygon_vertices: int = 24
    placement_margin: float = 4.0
    background_level: float = 150.0
    seed: int = 0

    def __post_init__(self):
        ranges = {
            "images_per_patient": self.images_per_patient,
            "width_range": self.width_range,
            "height_range": self.height_range,
            "nodules_per_image": self.nodules_per_image,
            "axis_range": self.axis_range,
        }
        for name, (lo, hi) in ranges.items():
            if lo > hi or lo <= 0:
                raise InvalidConfig(f"{name} range ({lo}, {hi}) is empty or nonpositive")
        for name, value in (("no_finding_rate", self.no_finding_rate),
                            ("doppler_fraction", self.doppler_fraction)):
            if not (0.0 <= value <= 1.0):
                raise InvalidConfig(f"{name} {value} not in [0, 1]")
        if self.n_patients < 1:
            raise InvalidConfig("n_patients must be >= 1")
        if self.polygon_vertices < 3:
            raise InvalidConfig("polygon_vertices must be >= 3")
        if self.speckle < 0 or self.contrast < 0:
            raise InvalidConfig("speckle and contrast must be nonnegative")
        need = 2 * (self.axis_range[1] + self.placement_margin) + 2
        if need > min(self.width_range[0], self.height_range[0]):
            raise InvalidConfig(
                f"largest nodule (diameter+margin {need:.0f}px) cannot fit the "
                f"smallest frame"
            )


@dataclass(frozen=True)
class PerturbConfig:
    drop_rate: float = 0.0
    spurious_rate: float = 0.0
    jitter_px: float = 0.0
    matched_score_range: tuple[float, float] = (0.60, 1.0)
    spurious_score_range: tuple[float, float] = (0.05, 0.50)
    enforce_separation: bool = True
    iou_guard: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name, value in (("drop_rate", self.drop_rate),
                            ("spurious_rate", self.spurious_rate)):
            if not (0.0 <= value <= 1.0):
                raise InvalidConfig(f"{name} {value} not in [0, 1]")
        if self.jitter_px < 0:
            raise InvalidConfig("jitter_px must be nonnegative")
        for name, (lo, hi) in (("matched_score_range", self.matched_score_range),
                               ("spurious_score_range", self.spurious_score_range)):
            if not (0.0 <= lo <= hi <= 1.0):
                raise InvalidConfig(f"{name} ({lo}, {hi}) invalid")
        if self.enforce_separation and (
            self.matched_score_range[0] <= self.spurious_score_range[1]
        ):
            raise InvalidConfig(
                "matched score range must sit strictly above the spurious range"
            )
        if not (0.0 < self.iou_guard < 1.0):
            raise InvalidConfig("iou_guard must lie in (0, 1)")


@dataclass
class PlantedCounts:
    kept: int = 0
    dropped: int = 0
    spurious: int = 0


def _ellipse_polygon(cx, cy, a, b, theta, n_vertices) -> np.ndarray:
    phi = 2.0 * math.pi * np.arange(n_vertices) / n_vertices
    local = np.column_stack([a * np.cos(phi), b * np.sin(phi)])
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    x = cx + cos_t * local[:, 0] - sin_t * local[:, 1]
    y = cy + sin_t * local[:, 0] + cos_t * local[:, 1]
    return np.column_stack([x, y])


def _ellipse_extent(a, b, theta) -> tuple[float, float]:
    """Half-extents of the rotated ellipse's axis-aligned bounding box."""
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    rx = math.sqrt((a * cos_t) ** 2 + (b * sin_t) ** 2)
    ry = math.sqrt((a * sin_t) ** 2 + (b * cos_t) ** 2)
    return rx, ry


def _paint_ellipse(field_arr, cx, cy, a, b, theta, contrast):
    h, w = field_arr.shape
    rx, ry = _ellipse_extent(a, b, theta)
    i0, i1 = max(0, int(cx - rx) - 1), min(w, int(cx + rx) + 2)
    j0, j1 = max(0, int(cy - ry) - 1), min(h, int(cy + ry) + 2)
    ys, xs = np.mgrid[j0:j1, i0:i1]
    dx = xs + 0.5 - cx
    dy = ys + 0.5 - cy
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    u = (cos_t * dx + sin_t * dy) / a
    v = (-sin_t * dx + cos_t * dy) / b
    inside = u * u + v * v <= 1.0
    window = field_arr[j0:j1, i0:i1]
    window[inside] -= contrast


def generate(cfg: SynthConfig) -> tuple[dict[str, RasterImage], AnnotationSet, DatasetManifest]:
    """Produce (images, annotations, manifest) indistinguishable from the
    clinical pipeline's own artifacts."""
    structure_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    per_patient = structure_rng.integers(
        cfg.images_per_patient[0], cfg.images_per_patient[1] + 1, size=cfg.n_patients
    )

    plan: list[tuple[str, str]] = []  # (image_ref, patient_id)
    for p in range(cfg.n_patients):
        patient_id = f"P{p + 1:04d}"
        for k in range(per_patient[p]):
            plan.append((f"{patient_id}_{k:02d}.png", patient_id))

    n_images = len(plan)
    n_doppler = int(round(cfg.doppler_fraction * n_images))
    doppler_idx = set(
        structure_rng.choice(n_images, size=n_doppler, replace=False).tolist()
    ) if n_doppler else set()

    images: dict[str, RasterImage] = {}
    records: list[AnnotationRecord] = []
    for index, (ref, patient_id) in enumerate(plan):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1, index]))
        width = int(rng.integers(cfg.width_range[0], cfg.width_range[1] + 1))
        height = int(rng.integers(cfg.height_range[0], cfg.height_range[1] + 1))

        base = cfg.background_level * rng.uniform(0.9, 1.1)
        field_arr = base * (1.0 + cfg.speckle * rng.standard_normal((height, width)))

        no_finding = bool(rng.random() < cfg.no_finding_rate)
        n_nodules = 0 if no_finding else int(
            rng.integers(cfg.nodules_per_image[0], cfg.nodules_per_image[1] + 1)
        )

        nodules = []
        taken: list[tuple[float, float, float, float]] = []  # margin-expanded bboxes
        for _ in range(n_nodules):
            placed = False
            for _attempt in range(300):
                a = rng.uniform(*cfg.axis_range)
                b = rng.uniform(*cfg.axis_range)
                theta = rng.uniform(0.0, math.pi)
                rx, ry = _ellipse_extent(a, b, theta)
                m = cfg.placement_margin
                if width - rx - m <= rx + m or height - ry - m <= ry + m:
                    continue
                cx = rng.uniform(rx + m, width - rx - m)
                cy = rng.uniform(ry + m, height - ry - m)
                box = (cx - rx - m, cy - ry - m, cx + rx + m, cy + ry + m)
                if any(
                    box[0] < t[2] and t[0] < box[2] and box[1] < t[3] and t[1] < box[3]
                    for t in taken
                ):
                    continue
                taken.append(box)
                _paint_ellipse(field_arr, cx, cy, a, b, theta, cfg.contrast)
                nodules.append(NodulePolygon(
                    _ellipse_polygon(cx, cy, a, b, theta, cfg.polygon_vertices)
                ))
                placed = True
                break
            if not placed:
                raise InvalidConfig(
                    f"could not place {n_nodules} margin-separated nodules in a "
                    f"{width}x{height} frame; reduce density or enlarge frames"
                )

        gray = np.clip(field_arr, 0.0, 255.0).astype(np.uint8)
        if index in doppler_idx:
            rgb = np.repeat(gray[:, :, None], 3, axis=2).astype(np.float64)
            pw = max(4, int(round(0.18 * width)))
            ph = max(4, int(round(0.12 * height)))
            x0 = int(rng.integers(0, width - pw + 1))
            y0 = int(rng.integers(0, height - ph + 1))
            patch = rgb[y0:y0 + ph, x0:x0 + pw]
            patch[:, :, 0] = np.clip(0.35 * patch[:, :, 0] + 165.0, 0, 255)
            patch[:, :, 1] *= 0.35
            patch[:, :, 2] *= 0.35
            samples = np.clip(rgb, 0, 255).astype(np.uint8)
            image = RasterImage(width, height, 3, samples)
        else:
            image = RasterImage(width, height, 1, gray)

        images[ref] = image
        records.append(AnnotationRecord(
            image_ref=ref,
            patient_id=patient_id,
            image_width=width,
            image_height=height,
            nodules=nodules,
            no_finding=no_finding,
        ))

    annotations = AnnotationSet(records)
    meta = {ref: image_meta_from_raster(img) for ref, img in images.items()}
    manifest = build_manifest(annotations, meta)
    return images, annotations, manifest


def perturb(
    gt: AnnotationSet, cfg: PerturbConfig
) -> tuple[dict[str, list[Detection]], PlantedCounts]:
    """Derive a prediction set with exactly countable planted errors.

    Each ground-truth instance is independently dropped with probability
    drop_rate; survivors are vertex-jittered under a constructive guard that
    keeps IoU with the source >= iou_guard for both boxes and masks.
    round(spurious_rate * n_gt) spurious detections are placed with bounding
    boxes strictly disjoint from every ground truth in their image.
    """
    counts = PlantedCounts()
    predictions: dict[str, list[Detection]] = {}
    ordered = sorted(
        (r for r in gt.records if r.excluded is None), key=lambda r: r.image_ref
    )
    total_gt = sum(len(r.nodules) for r in ordered)

    gt_boxes: dict[str, list] = {}
    refs_cycle: list[str] = []
    for idx, record in enumerate(ordered):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2, idx]))
        dets: list[Detection] = []
        boxes = [polygon_bbox(n) for n in record.nodules]
        gt_boxes[record.image_ref] = boxes
        for nodule in record.nodules:
            if rng.random() < cfg.drop_rate:
                counts.dropped += 1
                continue
            counts.kept += 1
            vertices = _jittered(nodule.vertices, record, cfg, rng)
            score = float(rng.uniform(*cfg.matched_score_range))
            dets.append(Detection(
                record.image_ref, nodule.class_id, score, NodulePolygon(vertices)
            ))
        predictions[record.image_ref] = dets
        refs_cycle.append(record.image_ref)

    n_spurious = int(round(cfg.spurious_rate * total_gt))
    spur_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    record_by_ref = {r.image_ref: r for r in ordered}
    for _ in range(n_spurious):
        start = int(spur_rng.integers(0, len(refs_cycle))) if refs_cycle else 0
        placed = False
        for offset in range(len(refs_cycle)):
            ref = refs_cycle[(start + offset) % len(refs_cycle)]
            record = record_by_ref[ref]
            polygon = _place_spurious(record, gt_boxes[ref], spur_rng)
            if polygon is not None:
                score = float(spur_rng.uniform(*cfg.spurious_score_range))
                predictions[ref].append(Detection(ref, 0, score, polygon))
                counts.spurious += 1
                placed = True
                break
        if not placed:
            raise NoRoomForSpurious(
                f"placed {counts.spurious} of {n_spurious} spurious detections"
            )
    return predictions, counts


def _jittered(vertices, record, cfg: PerturbConfig, rng) -> np.ndarray:
    if cfg.jitter_px == 0.0:
        return vertices.copy()
    source = NodulePolygon(vertices)
    source_box = polygon_bbox(source)
    source_mask = rasterize(source, record.image_width, record.image_height)
    for _attempt in range(25):
        delta = rng.uniform(-cfg.jitter_px, cfg.jitter_px, size=vertices.shape)
        candidate = NodulePolygon(vertices + delta)
        if box_iou(source_box, polygon_bbox(candidate)) < cfg.iou_guard:
            continue
        try:
            cand_mask = rasterize(candidate, record.image_width, record.image_height)
        except Exception:
            continue
        if mask_iou(source_mask, cand_mask) >= cfg.iou_guard:
            return candidate.vertices
    return vertices.copy()


def _place_spurious(record, boxes, rng) -> NodulePolygon | None:
    """Small ellipse polygon whose padded bbox avoids every GT bbox."""
    width, height = record.image_width, record.image_height
    for _attempt in range(60):
        a = rng.uniform(3.0, 8.0)
        b = rng.uniform(3.0, 8.0)
        theta = rng.uniform(0.0, math.pi)
        rx, ry = _ellipse_extent(a, b, theta)
        pad = 2.0
        if width - rx - pad <= rx + pad or height - ry - pad <= ry + pad:
            continue
        cx = rng.uniform(rx + pad, width - rx - pad)
        cy = rng.uniform(ry + pad, height - ry - pad)
        x0, y0, x1, y1 = cx - rx - pad, cy - ry - pad, cx + rx + pad, cy + ry + pad
        if any(
            x0 < gb.x_max and gb.x_min < x1 and y0 < gb.y_max and gb.y_min < y1
            for gb in boxes
        ):
            continue
        return NodulePolygon(_ellipse_polygon(cx, cy, a, b, theta, 12))
    return None


def write_dataset(
    images: dict[str, RasterImage],
    annotations: AnnotationSet,
    manifest: DatasetManifest,
    out_dir,
) -> None:
    """Persist a generated dataset in the same layout the clinical pipeline
    produces: images/*.png + annotations.json + manifest.json."""
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    for ref in sorted(images):
        pngio.write_png_file(images[ref].samples, image_dir / ref)
    write_atomic_text(out_dir / "annotations.json", emit_annotations(annotations))
    write_atomic_text(out_dir / "manifest.json", manifest_to_json(manifest))
