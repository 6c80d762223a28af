"""Score prediction sets against ground truth.

Metrics reported per run: pixel-level and instance-level Dice, precision,
recall, and single-class AP at IoU 0.5 — each computed independently for
masks and for boxes.

Matching convention: detections are processed in descending confidence
(ties by input order); each is paired with the unmatched same-class ground
truth of highest IoU and counts as a true positive iff that IoU >= the
threshold (a sub-threshold best match leaves the ground truth available).
Unmatched ground truths are false negatives.  AP interpolates the precision
envelope over the 101-point recall grid by default; the all-point variant
is available via EvalConfig.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .annotations import AnnotationSet
from .errors import (
    EmptyMask,
    InvalidConfig,
    MalformedJson,
    NoGroundTruth,
    SchemaViolation,
    SplitMismatch,
    UnknownImageRef,
    UnsplitManifest,
)
from .geometry import NodulePolygon, box_iou, polygon_bbox, rasterize
from .manifest import DatasetManifest

PREDICTIONS_SCHEMA = "nodule-predictions/1"
KINDS = ("mask", "box")


@dataclass
class Detection:
    image_ref: str
    class_id: int
    score: float
    polygon: NodulePolygon

    def validate(self) -> None:
        if not (0.0 <= self.score <= 1.0) or not math.isfinite(self.score):
            raise InvalidConfig(f"score {self.score!r} outside [0, 1]")
        self.polygon.validate()


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.5
    score_floor: float = 0.0
    interpolation: str = "101point"  # or "allpoint"

    def __post_init__(self):
        if not (0.0 < self.iou_threshold < 1.0):
            raise InvalidConfig(f"iou_threshold {self.iou_threshold} not in (0, 1)")
        if not (0.0 <= self.score_floor <= 1.0):
            raise InvalidConfig(f"score_floor {self.score_floor} not in [0, 1]")
        if self.interpolation not in ("101point", "allpoint"):
            raise InvalidConfig(f"unknown interpolation {self.interpolation!r}")


@dataclass
class MatchResult:
    tp: int
    fp: int
    fn: int
    pairs: list[tuple[int, int, float]]
    kind: str
    threshold: float


@dataclass
class EvalReport:
    dice_pixel: float
    dice_instance: float
    map50_mask: float
    map50_box: float
    precision_mask: float
    precision_box: float
    recall_mask: float
    recall_box: float
    pr_curve_mask: list[tuple[float, float]]
    pr_curve_box: list[tuple[float, float]]
    counts_mask: MatchResult
    counts_box: MatchResult
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def counts(m: MatchResult) -> dict:
            return {
                "tp": m.tp, "fp": m.fp, "fn": m.fn,
                "pairs": [[d, g, iou] for d, g, iou in m.pairs],
                "kind": m.kind, "threshold": m.threshold,
            }

        return {
            "schema": "nodule-report/1",
            "dice_pixel": self.dice_pixel,
            "dice_instance": self.dice_instance,
            "map50_mask": self.map50_mask,
            "map50_box": self.map50_box,
            "precision_mask": self.precision_mask,
            "precision_box": self.precision_box,
            "recall_mask": self.recall_mask,
            "recall_box": self.recall_box,
            "pr_curve_mask": [[r, p] for r, p in self.pr_curve_mask],
            "pr_curve_box": [[r, p] for r, p in self.pr_curve_box],
            "counts": {"mask": counts(self.counts_mask), "box": counts(self.counts_box)},
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        def counts(raw: dict) -> MatchResult:
            return MatchResult(
                tp=raw["tp"], fp=raw["fp"], fn=raw["fn"],
                pairs=[(d, g, iou) for d, g, iou in raw["pairs"]],
                kind=raw["kind"], threshold=raw["threshold"],
            )

        return cls(
            dice_pixel=doc["dice_pixel"],
            dice_instance=doc["dice_instance"],
            map50_mask=doc["map50_mask"],
            map50_box=doc["map50_box"],
            precision_mask=doc["precision_mask"],
            precision_box=doc["precision_box"],
            recall_mask=doc["recall_mask"],
            recall_box=doc["recall_box"],
            pr_curve_mask=[(r, p) for r, p in doc["pr_curve_mask"]],
            pr_curve_box=[(r, p) for r, p in doc["pr_curve_box"]],
            counts_mask=counts(doc["counts"]["mask"]),
            counts_box=counts(doc["counts"]["box"]),
            metadata=doc["metadata"],
        )


# --- scalar metrics ----------------------------------------------------------

def precision(m: MatchResult) -> float:
    """tp / (tp + fp); 1.0 by convention when no detections were made."""
    return m.tp / (m.tp + m.fp) if (m.tp + m.fp) else 1.0


def recall(m: MatchResult) -> float:
    """tp / (tp + fn); 1.0 by convention when there is nothing to find."""
    return m.tp / (m.tp + m.fn) if (m.tp + m.fn) else 1.0


def dice_instance(m: MatchResult) -> float:
    """2tp / (2tp + fp + fn); 1.0 when the denominator is zero."""
    denom = 2 * m.tp + m.fp + m.fn
    return 2 * m.tp / denom if denom else 1.0


# --- matching ----------------------------------------------------------------

def _raster_bits(vertices: np.ndarray, width: int, height: int):
    """Mask bits for matching; None when nothing rasterizes inside the frame."""
    try:
        return rasterize(NodulePolygon(vertices), width, height).bits
    except EmptyMask:
        return None


def _iou_matrix_masks(det_bits: list, gt_bits: list) -> np.ndarray:
    iou = np.zeros((len(det_bits), len(gt_bits)))
    for d, db in enumerate(det_bits):
        if db is None:
            continue
        d_area = int(np.count_nonzero(db))
        for g, gb in enumerate(gt_bits):
            if gb is None:
                continue
            inter = int(np.count_nonzero(db & gb))
            union = d_area + int(np.count_nonzero(gb)) - inter
            iou[d, g] = inter / union if union else 0.0
    return iou


def _greedy_match(
    scores: Sequence[float],
    classes_det: Sequence[int],
    classes_gt: Sequence[int],
    iou: np.ndarray,
    threshold: float,
) -> tuple[list[tuple[int, int, float]], list[bool]]:
    """Score-ordered greedy matching; returns TP pairs and per-det TP flags."""
    n_det, n_gt = iou.shape
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    gt_classes = np.asarray(classes_gt, dtype=np.int64).reshape(n_gt)
    matched = np.zeros(n_gt, dtype=bool)
    pairs: list[tuple[int, int, float]] = []
    tp_flags = [False] * n_det
    for d in order:
        if n_gt == 0:
            continue
        candidates = np.where(matched | (gt_classes != classes_det[d]), -1.0, iou[d])
        g = int(np.argmax(candidates))  # ties resolve to the lowest gt index
        if candidates[g] >= threshold:
            pairs.append((int(d), g, float(iou[d, g])))
            matched[g] = True
            tp_flags[d] = True
    return pairs, tp_flags


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[NodulePolygon],
    cfg: EvalConfig,
    kind: str,
    frame: tuple[int, int] | None = None,
) -> MatchResult:
    """Match one image's detections against its ground truth for one kind."""
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    if kind == "mask":
        if frame is None:
            raise ValueError("mask matching requires the image frame (width, height)")
        width, height = frame
        det_bits = [_raster_bits(d.polygon.vertices, width, height) for d in dets]
        gt_bits = [_raster_bits(g.vertices, width, height) for g in gts]
        iou = _iou_matrix_masks(det_bits, gt_bits)
    else:
        det_boxes = [polygon_bbox(d.polygon) for d in dets]
        gt_boxes = [polygon_bbox(g) for g in gts]
        iou = np.array(
            [[box_iou(db, gb) for gb in gt_boxes] for db in det_boxes]
        ).reshape(len(dets), len(gts))

    pairs, _ = _greedy_match(
        [d.score for d in dets],
        [d.class_id for d in dets],
        [g.class_id for g in gts],
        iou,
        cfg.iou_threshold,
    )
    tp = len(pairs)
    return MatchResult(
        tp=tp, fp=len(dets) - tp, fn=len(gts) - tp,
        pairs=pairs, kind=kind, threshold=cfg.iou_threshold,
    )


def _score_image(payload):
    """Per-image worker: match both kinds and accumulate pixel counts.

    payload = (ref, width, height, gts, dets, threshold) with
    gts = [(class_id, vertices)], dets = [(score, class_id, vertices)].
    Pure function of its arguments, safe to fan out across processes.
    """
    ref, width, height, gts, dets, threshold = payload

    det_bits = [_raster_bits(v, width, height) for _, _, v in dets]
    gt_bits = [_raster_bits(v, width, height) for _, v in gts]

    det_union = np.zeros((height, width), dtype=bool)
    for bits in det_bits:
        if bits is not None:
            det_union |= bits
    gt_union = np.zeros((height, width), dtype=bool)
    for bits in gt_bits:
        if bits is not None:
            gt_union |= bits
    pix_inter = int(np.count_nonzero(det_union & gt_union))
    pixel_counts = (
        pix_inter,
        int(np.count_nonzero(det_union)) - pix_inter,
        int(np.count_nonzero(gt_union)) - pix_inter,
    )

    scores = [s for s, _, _ in dets]
    det_classes = [c for _, c, _ in dets]
    gt_classes = [c for c, _ in gts]

    out = {"ref": ref, "n_det": len(dets), "n_gt": len(gts), "pixels": pixel_counts}
    iou_mask = _iou_matrix_masks(det_bits, gt_bits)
    boxes_det = [_vertices_bbox(v) for _, _, v in dets]
    boxes_gt = [_vertices_bbox(v) for _, v in gts]
    iou_box = np.array(
        [[box_iou(db, gb) for gb in boxes_gt] for db in boxes_det]
    ).reshape(len(dets), len(gts))

    for kind, iou in (("mask", iou_mask), ("box", iou_box)):
        pairs, tp_flags = _greedy_match(
            scores, det_classes, gt_classes, iou, threshold
        )
        out[kind] = {"pairs": pairs, "tp_flags": tp_flags}
    return out


def _vertices_bbox(vertices: np.ndarray):
    return polygon_bbox(NodulePolygon(vertices))


# --- dataset-level metrics ---------------------------------------------------

def _sweep(flag_rows: list[tuple[float, str, int, bool]], npos: int):
    """Global PR sweep: rows are (score, image_ref, det_index, is_tp)."""
    ordered = sorted(flag_rows, key=lambda t: (-t[0], t[1], t[2]))
    tp_cum = np.cumsum([t[3] for t in ordered]) if ordered else np.array([])
    n = len(ordered)
    if n == 0:
        return np.array([]), np.array([])
    recalls = tp_cum / npos if npos else np.zeros(n)
    precisions = tp_cum / np.arange(1, n + 1)
    return recalls, precisions


def _interpolated_ap(recalls, precisions, npos: int, mode: str) -> float:
    if npos == 0:
        raise NoGroundTruth("average precision undefined without ground truth")
    if len(recalls) == 0:
        return 0.0
    envelope = np.maximum.accumulate(precisions[::-1])[::-1]
    if mode == "101point":
        grid = np.arange(101) / 100.0
        idx = np.searchsorted(recalls, grid, side="left")
        values = np.where(idx < len(recalls), envelope[np.minimum(idx, len(recalls) - 1)], 0.0)
        return float(values.mean())
    prev = np.concatenate([[0.0], recalls[:-1]])
    return float(np.sum((recalls - prev) * envelope))


def average_precision(
    predictions: Mapping[str, Sequence[Detection]],
    annotations: AnnotationSet,
    cfg: EvalConfig,
    kind: str,
) -> float:
    """Dataset AP for one kind (masks or boxes) at cfg.iou_threshold."""
    report = evaluate(predictions, annotations, cfg)
    return report.map50_mask if kind == "mask" else report.map50_box


def dice_pixel(
    predictions: Mapping[str, Sequence[Detection]],
    annotations: AnnotationSet,
    score_floor: float = 0.0,
) -> float:
    """Micro-averaged pixel Dice over the union of all evaluated images."""
    report = evaluate(predictions, annotations, EvalConfig(score_floor=score_floor))
    return report.dice_pixel


def evaluate(
    predictions: Mapping[str, Sequence[Detection]],
    annotations: AnnotationSet,
    cfg: EvalConfig = EvalConfig(),
    *,
    manifest: DatasetManifest | None = None,
    bucket: str | None = None,
    workers: int = 1,
    model_tag: str = "external",
) -> EvalReport:
    """Compute the full report over a split bucket (or the whole set)."""
    record_map = annotations.record_map()

    if bucket is not None:
        if manifest is None:
            raise InvalidConfig("bucket filtering requires a manifest")
        if all(e.split is None for e in manifest.active_entries()):
            raise UnsplitManifest("manifest has no split assignments")
        refs = manifest.bucket_refs(bucket)
        missing = [r for r in refs if r not in record_map]
        if missing:
            raise UnknownImageRef(
                f"manifest entry {missing[0]!r} has no annotation record"
            )
    elif manifest is not None:
        refs = [e.image_ref for e in manifest.active_entries()]
        missing = [r for r in refs if r not in record_map]
        if missing:
            raise UnknownImageRef(
                f"manifest entry {missing[0]!r} has no annotation record"
            )
    else:
        refs = [r.image_ref for r in annotations.records if r.excluded is None]
    refs = sorted(refs)
    ref_set = set(refs)

    for pred_ref in predictions:
        if pred_ref not in record_map:
            raise UnknownImageRef(f"prediction for unknown image {pred_ref!r}")
        if pred_ref not in ref_set:
            raise SplitMismatch(
                f"prediction for {pred_ref!r} outside the evaluated "
                f"{bucket or 'active'} set"
            )

    payloads = []
    kept_dets: dict[str, list[Detection]] = {}
    for ref in refs:
        record = record_map[ref]
        dets = [d for d in predictions.get(ref, []) if d.score >= cfg.score_floor]
        kept_dets[ref] = dets
        payloads.append((
            ref,
            record.image_width,
            record.image_height,
            [(g.class_id, g.vertices) for g in record.nodules],
            [(d.score, d.class_id, d.polygon.vertices) for d in dets],
            cfg.iou_threshold,
        ))

    if workers > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                _score_image, payloads,
                chunksize=max(1, len(payloads) // (workers * 8)),
            ))
    else:
        results = [_score_image(p) for p in payloads]

    npos = sum(r["n_gt"] for r in results)
    pix = np.zeros(3, dtype=np.int64)
    agg: dict[str, dict] = {
        kind: {"tp": 0, "fp": 0, "fn": 0, "pairs": [], "flags": []} for kind in KINDS
    }
    det_base = 0
    gt_base = 0
    for result in results:
        pix += np.array(result["pixels"], dtype=np.int64)
        for kind in KINDS:
            side = agg[kind]
            pairs = result[kind]["pairs"]
            tp_flags = result[kind]["tp_flags"]
            side["tp"] += len(pairs)
            side["fp"] += result["n_det"] - len(pairs)
            side["fn"] += result["n_gt"] - len(pairs)
            side["pairs"].extend(
                (det_base + d, gt_base + g, iou) for d, g, iou in pairs
            )
            dets = kept_dets[result["ref"]]
            side["flags"].extend(
                (dets[i].score, result["ref"], i, tp_flags[i])
                for i in range(result["n_det"])
            )
        det_base += result["n_det"]
        gt_base += result["n_gt"]

    degenerate: list[str] = []

    def eq1(tp: int, fp: int, fn: int, name: str) -> float:
        denom = 2 * tp + fp + fn
        if denom == 0:
            degenerate.append(name)
            return 1.0
        return 2 * tp / denom

    match_results = {}
    curves = {}
    aps = {}
    for kind in KINDS:
        side = agg[kind]
        match_results[kind] = MatchResult(
            tp=side["tp"], fp=side["fp"], fn=side["fn"],
            pairs=side["pairs"], kind=kind, threshold=cfg.iou_threshold,
        )
        recalls, precisions = _sweep(side["flags"], npos)
        curves[kind] = [(float(r), float(p)) for r, p in zip(recalls, precisions)]
        aps[kind] = _interpolated_ap(recalls, precisions, npos, cfg.interpolation)
        if match_results[kind].tp + match_results[kind].fp == 0:
            degenerate.append(f"precision_{kind}")
        if match_results[kind].tp + match_results[kind].fn == 0:
            degenerate.append(f"recall_{kind}")

    report = EvalReport(
        dice_pixel=eq1(int(pix[0]), int(pix[1]), int(pix[2]), "dice_pixel"),
        dice_instance=dice_instance(match_results["mask"]),
        map50_mask=aps["mask"],
        map50_box=aps["box"],
        precision_mask=precision(match_results["mask"]),
        precision_box=precision(match_results["box"]),
        recall_mask=recall(match_results["mask"]),
        recall_box=recall(match_results["box"]),
        pr_curve_mask=curves["mask"],
        pr_curve_box=curves["box"],
        counts_mask=match_results["mask"],
        counts_box=match_results["box"],
        metadata={
            "model_tag": model_tag,
            "dataset_version": manifest.version_tag if manifest else "custom",
            "bucket": bucket,
            "split_seed": manifest.seed if manifest else None,
            "iou_threshold": cfg.iou_threshold,
            "score_floor": cfg.score_floor,
            "interpolation": cfg.interpolation,
            "operating_point": "all detections at or above score_floor",
            "dice_pixel_averaging": "micro over the dataset pixel union",
            "n_images": len(refs),
            "n_ground_truth": npos,
            "degenerate_denominators": degenerate,
        },
    )
    return report


# --- prediction file I/O -----------------------------------------------------

def read_predictions(json_bytes: bytes | str) -> dict[str, list[Detection]]:
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
        raise MalformedJson("top level must be an object")
    if doc.get("schema") != PREDICTIONS_SCHEMA:
        raise SchemaViolation(
            "schema", f"expected {PREDICTIONS_SCHEMA!r}, got {doc.get('schema')!r}"
        )
    raw_entries = doc.get("predictions")
    if not isinstance(raw_entries, list):
        raise SchemaViolation("predictions", "missing or not an array")

    out: dict[str, list[Detection]] = {}
    for i, raw in enumerate(raw_entries):
        path = f"predictions[{i}]"
        if not isinstance(raw, dict) or not isinstance(raw.get("image"), str):
            raise SchemaViolation(path, "entry needs an 'image' string")
        ref = raw["image"]
        if ref in out:
            raise SchemaViolation(f"{path}.image", f"duplicate image {ref!r}")
        raw_dets = raw.get("detections")
        if not isinstance(raw_dets, list):
            raise SchemaViolation(f"{path}.detections", "missing or not an array")
        dets = []
        for j, rd in enumerate(raw_dets):
            dpath = f"{path}.detections[{j}]"
            if not isinstance(rd, dict):
                raise SchemaViolation(dpath, "detection must be an object")
            score = rd.get("score")
            if not isinstance(score, (int, float)) or not (0.0 <= score <= 1.0):
                raise SchemaViolation(f"{dpath}.score", "score must lie in [0, 1]")
            points = rd.get("polygon")
            if not isinstance(points, list) or len(points) < 3:
                raise SchemaViolation(f"{dpath}.polygon", "needs >= 3 [x, y] points")
            for k, pt in enumerate(points):
                if (
                    not isinstance(pt, (list, tuple)) or len(pt) != 2
                    or not all(isinstance(c, (int, float)) and math.isfinite(c)
                               for c in pt)
                ):
                    raise SchemaViolation(
                        f"{dpath}.polygon[{k}]", "not a finite [x, y] pair"
                    )
            polygon = NodulePolygon(np.asarray(points, dtype=np.float64),
                                    class_id=int(rd.get("class_id", 0)))
            try:
                polygon.validate()
            except Exception as exc:
                raise SchemaViolation(f"{dpath}.polygon", str(exc)) from exc
            dets.append(Detection(ref, polygon.class_id, float(score), polygon))
        out[ref] = dets
    return out


def predictions_to_json(predictions: Mapping[str, Sequence[Detection]]) -> str:
    entries = []
    for ref in sorted(predictions):
        entries.append({
            "image": ref,
            "detections": [
                {
                    "class_id": d.class_id,
                    "score": d.score,
                    "polygon": [[float(x), float(y)] for x, y in d.polygon.vertices],
                }
                for d in predictions[ref]
            ],
        })
    return json.dumps(
        {"schema": PREDICTIONS_SCHEMA, "predictions": entries}, indent=2
    ) + "\n"


def predictions_from_ground_truth(
    annotations: AnnotationSet, score: float = 1.0
) -> dict[str, list[Detection]]:
    """Feed ground truth back as perfect-confidence predictions."""
    out: dict[str, list[Detection]] = {}
    for record in annotations.records:
        if record.excluded is not None:
            continue
        out[record.image_ref] = [
            Detection(record.image_ref, g.class_id, score,
                      NodulePolygon(g.vertices.copy(), g.class_id))
            for g in record.nodules
        ]
    return out
