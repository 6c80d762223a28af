"""From a polygon annotation export to training-ready artifacts: parse the
JSON, cross-check it against image dimensions, rasterize per-nodule masks,
and emit YOLO labels plus a COCO instance file.

Run:  python demos/02_annotations_to_training_artifacts.py
"""

import json
from pathlib import Path

from nodulekit.annotations import parse_annotations, validate_against_images
from nodulekit.export import export_coco, export_yolo, write_masks
from nodulekit.geometry import rasterize, shoelace_area
from nodulekit.manifest import DatasetManifest, ManifestEntry, SplitConfig, assign_splits

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)

# --- 1. a small annotation export (one vertex overshoots by 0.4 px) -------
raw = {
    "schema": "nodule-annotations/1",
    "records": [
        {"image": "scan_a.png", "patient_id": "P001", "width": 320, "height": 240,
         "nodules": [
             {"polygon": [[80, 60], [160, 60], [160, 140], [80, 140]],
              "tirads": "TR3", "attrs": {"margin": "smooth"}},
             {"polygon": [[200, 100], [260, 120], [320.4, 180], [210, 170]],
              "tirads": "TR4"},
         ]},
        {"image": "scan_b.png", "patient_id": "P002", "width": 320, "height": 240,
         "nodules": [{"polygon": [[30, 30], [90, 40], [70, 95]]}]},
        {"image": "scan_c.png", "patient_id": "P003", "width": 320, "height": 240,
         "no_finding": True, "nodules": []},
    ],
}
annotations = parse_annotations(json.dumps(raw))
print(f"parsed {len(annotations.records)} records, "
      f"{annotations.total_nodules()} nodules")

# --- 2. validate against the decoded image dimensions ---------------------
dims = {"scan_a.png": (320, 240), "scan_b.png": (320, 240), "scan_c.png": (320, 240)}
annotations, report = validate_against_images(annotations, dims)
print(f"validation clean: {report.is_clean} "
      f"(the 320.4 px vertex was clipped to the frame)")
clipped = annotations.records[0].nodules[1].vertices[2]
print(f"  clipped vertex now at ({clipped[0]:.1f}, {clipped[1]:.1f})")

# --- 3. rasterize a nodule and inspect its mask ---------------------------
nodule = annotations.records[0].nodules[0]
mask = rasterize(nodule, 320, 240)
print(f"first nodule: shoelace area {shoelace_area(nodule):.1f} px^2, "
      f"rasterized {mask.area} px, bbox {mask.bbox}")

# --- 4. per-nodule mask PNGs ----------------------------------------------
for record in annotations.records:
    if record.nodules:
        paths = write_masks(record, out_dir / "masks")
        print(f"  {record.image_ref}: {len(paths)} mask file(s)")

# --- 5. YOLO labels --------------------------------------------------------
for record in annotations.records:
    text = export_yolo(record)
    label = out_dir / "labels" / (Path(record.image_ref).stem + ".txt")
    label.parent.mkdir(exist_ok=True)
    label.write_text(text)
print(f"YOLO label for scan_b: {export_yolo(annotations.records[1]).strip()}")

# --- 6. COCO instances (needs a split manifest) ----------------------------
manifest = DatasetManifest([
    ManifestEntry(r.image_ref, r.patient_id, len(r.nodules))
    for r in annotations.records
])
manifest = assign_splits(manifest, SplitConfig(ratios=(0.34, 0.33, 0.33), seed=0))
for bucket in ("train", "val", "test"):
    doc = export_coco(manifest, annotations, bucket)
    path = out_dir / f"instances_{bucket}.json"
    path.write_text(json.dumps(doc, indent=2))
    print(f"COCO {bucket}: {len(doc['images'])} image(s), "
          f"{len(doc['annotations'])} annotation(s)")
