"""Dataset manifest, doppler-aware variants, and patient-level splits.

The manifest is the bookkeeping spine of the pipeline: one entry per image,
carrying patient identity, nodule count, the doppler flag, an optional
exclusion reason, and (after assignment) the split bucket.  Entries are kept
sorted lexicographically by image_ref so emitted files diff cleanly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .annotations import AnnotationSet
from .dicom import RasterImage
from .errors import (
    DuplicateImageRef,
    InvalidConfig,
    MalformedJson,
    SchemaViolation,
    TooFewPatients,
)

SCHEMA = "nodule-manifest/1"
BUCKETS = ("train", "val", "test")


@dataclass
class ManifestEntry:
    image_ref: str
    patient_id: str
    n_nodules: int
    doppler: bool = False
    excluded: str | None = None
    split: str | None = None


@dataclass(frozen=True)
class ManifestStats:
    n_patients: int
    n_images: int
    n_nodules: int


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    version_tag: str = "custom"  # V1 | V2 | custom
    seed: int | None = None
    stats: ManifestStats = field(init=False)

    def __post_init__(self):
        self.entries = sorted(self.entries, key=lambda e: e.image_ref)
        refs = [e.image_ref for e in self.entries]
        if len(refs) != len(set(refs)):
            dupe = next(r for r in refs if refs.count(r) > 1)
            raise DuplicateImageRef(f"image_ref {dupe!r} appears more than once")
        self.stats = compute_stats(self.entries)

    def active_entries(self) -> list[ManifestEntry]:
        return [e for e in self.entries if e.excluded is None]

    def bucket_refs(self, bucket: str) -> list[str]:
        return [e.image_ref for e in self.active_entries() if e.split == bucket]


def compute_stats(entries: list[ManifestEntry]) -> ManifestStats:
    active = [e for e in entries if e.excluded is None]
    return ManifestStats(
        n_patients=len({e.patient_id for e in active}),
        n_images=len(active),
        n_nodules=sum(e.n_nodules for e in active),
    )


@dataclass(frozen=True)
class SplitConfig:
    ratios: tuple[float, float, float] = (0.80, 0.15, 0.05)
    seed: int = 0
    level: str = "patient"

    def __post_init__(self):
        if len(self.ratios) != len(BUCKETS):
            raise InvalidConfig(f"need {len(BUCKETS)} ratios, got {len(self.ratios)}")
        if any(not (0.0 < r < 1.0) for r in self.ratios):
            raise InvalidConfig(f"each ratio must lie in (0, 1): {self.ratios}")
        total = sum(self.ratios)
        if abs(total - 1.0) > 1e-9:
            raise InvalidConfig(f"ratios sum to {total!r}, expected 1.0")
        if self.level != "patient":
            raise InvalidConfig("only patient-level splitting is supported")


@dataclass(frozen=True)
class ImageMeta:
    channels: int
    doppler: bool


def detect_doppler(
    img: RasterImage,
    chroma_threshold: int = 20,
    fraction_threshold: float = 0.005,
) -> bool:
    """Heuristic color-flow detector.

    True iff the frame is RGB and more than `fraction_threshold` of its
    pixels have a channel spread above `chroma_threshold`; grayscale frames
    are never doppler.
    """
    if img.channels != 3:
        return False
    samples = img.samples.astype(np.int16)
    chroma = samples.max(axis=2) - samples.min(axis=2)
    return float(np.mean(chroma > chroma_threshold)) > fraction_threshold


def image_meta_from_raster(img: RasterImage, **thresholds) -> ImageMeta:
    return ImageMeta(channels=img.channels, doppler=detect_doppler(img, **thresholds))


def build_manifest(
    annotations: AnnotationSet,
    image_meta: dict[str, ImageMeta] | None = None,
) -> DatasetManifest:
    """One entry per annotation record.

    The doppler flag comes from the record's explicit flag when present,
    otherwise from the detector result passed in via image_meta, otherwise
    False.
    """
    image_meta = image_meta or {}
    entries = []
    for record in annotations.records:
        if record.doppler is not None:
            doppler = record.doppler
        elif record.image_ref in image_meta:
            doppler = image_meta[record.image_ref].doppler
        else:
            doppler = False
        entries.append(ManifestEntry(
            image_ref=record.image_ref,
            patient_id=record.patient_id,
            n_nodules=len(record.nodules),
            doppler=doppler,
            excluded=record.excluded,
        ))
    return DatasetManifest(entries)


def filter_variant(manifest: DatasetManifest, variant: str) -> DatasetManifest:
    """V1 keeps every non-excluded entry; V2 additionally drops doppler."""
    if variant not in ("V1", "V2"):
        raise InvalidConfig(f"variant must be V1 or V2, got {variant!r}")
    entries = [replace(e) for e in manifest.active_entries()]
    if variant == "V2":
        entries = [e for e in entries if not e.doppler]
    return DatasetManifest(entries, version_tag=variant, seed=manifest.seed)


def assign_splits(
    manifest: DatasetManifest, cfg: SplitConfig, force: bool = False
) -> DatasetManifest:
    """Deterministic patient-level split.

    Patients are shuffled with a seeded PRNG (over the sorted patient list,
    so entry order is irrelevant) and assigned greedily to train, then val,
    then test; a bucket closes once its cumulative image count reaches
    ratio * total, with boundary-straddling patients going to the earlier
    bucket.  Every image inherits its patient's bucket.
    """
    if not force and any(e.split is not None for e in manifest.entries):
        raise InvalidConfig("manifest already carries split assignments (use force)")

    active = manifest.active_entries()
    images_per_patient: dict[str, int] = {}
    for entry in active:
        images_per_patient[entry.patient_id] = (
            images_per_patient.get(entry.patient_id, 0) + 1
        )
    patients = sorted(images_per_patient)
    if len(patients) < len(BUCKETS):
        raise TooFewPatients(
            f"{len(patients)} patients cannot fill {len(BUCKETS)} buckets"
        )

    rng = np.random.default_rng(cfg.seed)
    order = [patients[i] for i in rng.permutation(len(patients))]

    total = len(active)
    t_train = cfg.ratios[0] * total
    t_val = (cfg.ratios[0] + cfg.ratios[1]) * total

    assignment: dict[str, str] = {}
    bucket_idx = 0
    cumulative = 0
    for patient in order:
        assignment[patient] = BUCKETS[bucket_idx]
        cumulative += images_per_patient[patient]
        if bucket_idx == 0 and cumulative >= t_train:
            bucket_idx = 1
        if bucket_idx == 1 and cumulative >= t_val:
            bucket_idx = 2

    entries = [
        replace(e, split=None if e.excluded is not None else assignment[e.patient_id])
        for e in manifest.entries
    ]
    return DatasetManifest(entries, version_tag=manifest.version_tag, seed=cfg.seed)


# --- serialization -----------------------------------------------------------

def manifest_to_json(manifest: DatasetManifest) -> str:
    entries = []
    for e in manifest.entries:
        item: dict = {
            "image_ref": e.image_ref,
            "patient_id": e.patient_id,
            "n_nodules": e.n_nodules,
            "doppler": e.doppler,
        }
        if e.excluded is not None:
            item["excluded"] = e.excluded
        if e.split is not None:
            item["split"] = e.split
        entries.append(item)
    doc = {
        "schema": SCHEMA,
        "version_tag": manifest.version_tag,
        "seed": manifest.seed,
        "stats": {
            "n_patients": manifest.stats.n_patients,
            "n_images": manifest.stats.n_images,
            "n_nodules": manifest.stats.n_nodules,
        },
        "entries": entries,
    }
    return json.dumps(doc, indent=2) + "\n"


def manifest_from_json(text: bytes | str) -> DatasetManifest:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedJson(f"not UTF-8: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedJson(str(exc)) from exc
    if not isinstance(doc, dict) or doc.get("schema") != SCHEMA:
        raise SchemaViolation("schema", f"expected {SCHEMA!r}")
    raw_entries = doc.get("entries")
    if not isinstance(raw_entries, list):
        raise SchemaViolation("entries", "missing or not an array")

    entries = []
    for i, raw in enumerate(raw_entries):
        path = f"entries[{i}]"
        if not isinstance(raw, dict):
            raise SchemaViolation(path, "entry must be an object")
        try:
            split = raw.get("split")
            if split is not None and split not in BUCKETS:
                raise SchemaViolation(f"{path}.split", f"unknown bucket {split!r}")
            entries.append(ManifestEntry(
                image_ref=str(raw["image_ref"]),
                patient_id=str(raw["patient_id"]),
                n_nodules=int(raw["n_nodules"]),
                doppler=bool(raw.get("doppler", False)),
                excluded=raw.get("excluded"),
                split=split,
            ))
        except KeyError as exc:
            raise SchemaViolation(path, f"missing field {exc.args[0]!r}") from exc

    manifest = DatasetManifest(
        entries,
        version_tag=str(doc.get("version_tag", "custom")),
        seed=doc.get("seed"),
    )
    stats = doc.get("stats")
    if isinstance(stats, dict):
        recorded = (
            stats.get("n_patients"), stats.get("n_images"), stats.get("n_nodules")
        )
        actual = (
            manifest.stats.n_patients, manifest.stats.n_images, manifest.stats.n_nodules
        )
        if recorded != actual:
            raise SchemaViolation(
                "stats", f"recorded {recorded} != recomputed {actual}"
            )
    return manifest
