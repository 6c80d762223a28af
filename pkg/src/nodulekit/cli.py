"""Command-line surface tying the pipeline together.

Every invocation runs exactly one subcommand, writes its artifacts
atomically, and finishes by printing a one-line machine-readable run
summary (tool version, resolved config, seed, input digests, outputs).

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from pathlib import Path

from . import __version__, dicom, pngio, report as report_mod
from .annotations import emit_annotations, parse_annotations, validate_against_images
from .errors import InvalidConfig, IoFailure, NoduleKitError
from .evaluation import (
    EvalConfig,
    EvalReport,
    evaluate,
    predictions_to_json,
    read_predictions,
)
from .export import write_coco_datasets, write_masks, write_yolo_dataset
from .fileio import read_bytes, sha256_file, write_atomic_json, write_atomic_text
from .manifest import (
    BUCKETS,
    SplitConfig,
    assign_splits,
    build_manifest,
    detect_doppler,
    filter_variant,
    image_meta_from_raster,
    ImageMeta,
    manifest_from_json,
    manifest_to_json,
)
from .synth import PerturbConfig, SynthConfig, generate, perturb, write_dataset


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


class _Run:
    """Collects inputs/outputs/config for the end-of-run summary."""

    def __init__(self, command: str):
        self.command = command
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.config: dict = {}
        self.seed = None

    def read_input(self, path) -> bytes:
        data = read_bytes(path)
        self.inputs[str(path)] = sha256_file(path)
        return data

    def note_input_file(self, path) -> None:
        self.inputs[str(path)] = sha256_file(path)

    def summary(self) -> dict:
        return {
            "tool": "nodulekit",
            "version": __version__,
            "command": self.command,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "config": self.config,
        }


def _load_config_file(path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep keys case-sensitive
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise InvalidConfig(f"config {path}: {exc}") from exc
    return {section: dict(parser[section]) for section in parser.sections()}


def _section(cfg: dict, name: str) -> dict[str, str]:
    return dict(cfg.get(name, {}))


def _coerce(raw: dict[str, str], spec: dict[str, type]) -> dict:
    out = {}
    for key, value in raw.items():
        if key not in spec:
            raise InvalidConfig(f"unknown config key {key!r}")
        kind = spec[key]
        try:
            if kind is bool:
                out[key] = value.strip().lower() in ("1", "true", "yes", "on")
            elif kind is tuple:
                parts = [float(v) for v in value.split(",")]
                out[key] = tuple(int(p) if p.is_integer() else p for p in parts)
            else:
                out[key] = kind(value)
        except ValueError as exc:
            raise InvalidConfig(f"config key {key}={value!r}: {exc}") from exc
    return out


def build_parser() -> _Parser:
    parser = _Parser(prog="nodulekit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"nodulekit {__version__}")
    parser.add_argument("--config", help="INI config file; flags override its values")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="DICOM directory -> PNG + images.json")
    p.add_argument("--dicom-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--hash-patient-ids", action="store_true",
                   help="replace patient IDs with a stable 12-hex digest")

    p = sub.add_parser("validate", help="cross-check annotations against images")
    p.add_argument("--annotations", required=True)
    p.add_argument("--images", required=True,
                   help="images.json from ingest, or a directory of PNGs")
    p.add_argument("--tolerance", type=float, default=0.5)
    p.add_argument("--out", help="write the clipped annotation set here")

    p = sub.add_parser("variant", help="derive a V1/V2 manifest")
    p.add_argument("--manifest", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--keep-doppler", action="store_true", help="V1")
    group.add_argument("--drop-doppler", action="store_true", help="V2")
    p.add_argument("--out", required=True)

    p = sub.add_parser("split", help="assign patient-level train/val/test buckets")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ratios", default=None, help="e.g. 0.8,0.15,0.05")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--force", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("export", help="emit YOLO / COCO / mask artifacts")
    p.add_argument("--manifest", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--format", required=True, choices=("yolo", "coco", "masks"))
    p.add_argument("--bucket", choices=BUCKETS)
    p.add_argument("--images-dir", help="copy images into the YOLO layout from here")
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("perturb", help="derive planted-error predictions from GT")
    p.add_argument("--annotations", required=True)
    p.add_argument("--drop", type=float, default=None)
    p.add_argument("--spurious", type=float, default=None)
    p.add_argument("--jitter", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--counts-out", help="write planted counts JSON here")

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--manifest")
    p.add_argument("--bucket", choices=BUCKETS)
    p.add_argument("--iou", type=float, default=None)
    p.add_argument("--score-floor", type=float, default=None)
    p.add_argument("--interpolation", choices=("101point", "allpoint"), default=None)
    p.add_argument("--model-tag", default="external")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", help="report JSON path (default: report_<...>.json)")

    p = sub.add_parser("report", help="render a report as csv/json/svg")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--format", required=True, choices=report_mod.FORMATS)
    p.add_argument("--out", help="default: report name with the new extension")

    return parser


def main(argv=None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1

    run = _Run(args.command)
    try:
        file_cfg = _load_config_file(args.config) if args.config else {}
        handler = _HANDLERS[args.command]
        handler(args, file_cfg, run)
        if "training" in file_cfg:
            # opaque hyperparameter block carried through unmodified
            run.config["training"] = file_cfg["training"]
        print(json.dumps(run.summary()))
        return 0
    except (_UsageError, InvalidConfig) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except IoFailure as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except NoduleKitError as exc:
        print(f"data error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


# --- handlers ------------------------------------------------------------


def _cmd_ingest(args, file_cfg, run: _Run) -> None:
    src = Path(args.dicom_dir)
    out = Path(args.out)
    files = sorted(p for p in src.iterdir() if p.is_file())
    if not files:
        raise InvalidConfig(f"no files in {src}")

    listing = []
    index_per_patient: dict[str, int] = {}
    for path in files:
        data = run.read_input(path)
        obj = dicom.parse_dicom(data)
        image = dicom.decode_image(obj)
        patient_id = obj.patient_id
        if args.hash_patient_ids:
            import hashlib

            patient_id = hashlib.sha256(patient_id.encode()).hexdigest()[:12]
        idx = index_per_patient.get(patient_id, 0)
        index_per_patient[patient_id] = idx + 1
        name = f"{patient_id}_{idx:03d}.png"
        dicom.write_png(image, out / name)
        run.outputs.append(str(out / name))
        listing.append({
            "file": name,
            "patient_id": patient_id,
            "width": image.width,
            "height": image.height,
            "channels": image.channels,
            "doppler": detect_doppler(image),
        })

    listing_path = out / "images.json"
    write_atomic_json(listing_path, {"schema": "nodule-images/1", "images": listing})
    run.outputs.append(str(listing_path))
    run.config = {"hash_patient_ids": args.hash_patient_ids}


def _image_dims_from(path: Path, run: _Run) -> dict[str, tuple[int, int]]:
    if path.is_dir():
        dims = {}
        for png in sorted(path.glob("*.png")):
            width, height, _ = pngio.png_dimensions(read_bytes(png))
            dims[png.name] = (width, height)
        return dims
    doc = json.loads(run.read_input(path))
    return {
        item["file"]: (item["width"], item["height"])
        for item in doc.get("images", [])
    }


def _cmd_validate(args, file_cfg, run: _Run) -> None:
    annotations = parse_annotations(run.read_input(args.annotations))
    dims = _image_dims_from(Path(args.images), run)
    clipped, rep = validate_against_images(annotations, dims, args.tolerance)
    run.config = {
        "tolerance": args.tolerance,
        "findings": {
            "missing_images": rep.missing_images,
            "unannotated_images": rep.unannotated_images,
            "out_of_bounds": [list(t) for t in rep.out_of_bounds],
            "dimension_mismatches": [list(t) for t in rep.dimension_mismatches],
        },
    }
    if args.out:
        write_atomic_text(args.out, emit_annotations(clipped))
        run.outputs.append(args.out)


def _cmd_variant(args, file_cfg, run: _Run) -> None:
    manifest = manifest_from_json(run.read_input(args.manifest))
    variant = "V1" if args.keep_doppler else "V2"
    result = filter_variant(manifest, variant)
    write_atomic_text(args.out, manifest_to_json(result))
    run.outputs.append(args.out)
    run.config = {"variant": variant}


def _cmd_split(args, file_cfg, run: _Run) -> None:
    section = _coerce(_section(file_cfg, "split"), {"ratios": tuple, "seed": int})
    ratios = section.get("ratios", (0.80, 0.15, 0.05))
    if args.ratios is not None:
        ratios = tuple(float(r) for r in args.ratios.split(","))
    seed = args.seed if args.seed is not None else section.get("seed", 0)
    cfg = SplitConfig(ratios=tuple(float(r) for r in ratios), seed=seed)

    manifest = manifest_from_json(run.read_input(args.manifest))
    result = assign_splits(manifest, cfg, force=args.force)
    write_atomic_text(args.out, manifest_to_json(result))
    run.outputs.append(args.out)
    run.seed = cfg.seed
    run.config = {"ratios": list(cfg.ratios), "seed": cfg.seed, "level": cfg.level}


def _cmd_export(args, file_cfg, run: _Run) -> None:
    manifest = manifest_from_json(run.read_input(args.manifest))
    annotations = parse_annotations(run.read_input(args.annotations))
    buckets = (args.bucket,) if args.bucket else BUCKETS
    out = Path(args.out)

    if args.format == "yolo":
        counts = write_yolo_dataset(manifest, annotations, out,
                                    buckets=buckets, images_dir=args.images_dir)
        run.config = {"format": "yolo", "label_counts": counts}
        run.outputs.append(str(out))
    elif args.format == "coco":
        paths = write_coco_datasets(manifest, annotations, out, buckets=buckets)
        run.config = {"format": "coco"}
        run.outputs.extend(str(p) for p in paths.values())
    else:
        record_map = annotations.record_map()
        refs = (
            manifest.bucket_refs(args.bucket) if args.bucket
            else [e.image_ref for e in manifest.active_entries()]
        )
        mask_dir = out / "masks"
        n = 0
        for ref in refs:
            record = record_map[ref]
            if record.nodules:
                n += len(write_masks(record, mask_dir))
        run.config = {"format": "masks", "mask_count": n}
        run.outputs.append(str(mask_dir))


_SYNTH_KEYS = {
    "n_patients": int, "images_per_patient": tuple, "width_range": tuple,
    "height_range": tuple, "nodules_per_image": tuple, "no_finding_rate": float,
    "axis_range": tuple, "contrast": float, "speckle": float,
    "doppler_fraction": float, "polygon_vertices": int, "placement_margin": float,
    "background_level": float, "seed": int,
}


def _cmd_synth(args, file_cfg, run: _Run) -> None:
    options = _coerce(_section(file_cfg, "synth"), _SYNTH_KEYS)
    if args.seed is not None:
        options["seed"] = args.seed
    cfg = SynthConfig(**options)
    images, annotations, manifest = generate(cfg)
    write_dataset(images, annotations, manifest, args.out)
    run.outputs.extend([
        str(Path(args.out) / "images"),
        str(Path(args.out) / "annotations.json"),
        str(Path(args.out) / "manifest.json"),
    ])
    run.seed = cfg.seed
    run.config = {k: getattr(cfg, k) for k in _SYNTH_KEYS}


def _cmd_perturb(args, file_cfg, run: _Run) -> None:
    options = _coerce(_section(file_cfg, "perturb"), {
        "drop_rate": float, "spurious_rate": float, "jitter_px": float, "seed": int,
    })
    if args.drop is not None:
        options["drop_rate"] = args.drop
    if args.spurious is not None:
        options["spurious_rate"] = args.spurious
    if args.jitter is not None:
        options["jitter_px"] = args.jitter
    if args.seed is not None:
        options["seed"] = args.seed
    cfg = PerturbConfig(**options)

    annotations = parse_annotations(run.read_input(args.annotations))
    predictions, counts = perturb(annotations, cfg)
    write_atomic_text(args.out, predictions_to_json(predictions))
    run.outputs.append(args.out)
    if args.counts_out:
        write_atomic_json(args.counts_out, {
            "kept": counts.kept, "dropped": counts.dropped,
            "spurious": counts.spurious,
        })
        run.outputs.append(args.counts_out)
    run.seed = cfg.seed
    run.config = {
        "drop_rate": cfg.drop_rate, "spurious_rate": cfg.spurious_rate,
        "jitter_px": cfg.jitter_px, "seed": cfg.seed,
        "planted": {"kept": counts.kept, "dropped": counts.dropped,
                    "spurious": counts.spurious},
    }


def _cmd_evaluate(args, file_cfg, run: _Run) -> None:
    options = _coerce(_section(file_cfg, "eval"), {
        "iou_threshold": float, "score_floor": float, "interpolation": str,
    })
    if args.iou is not None:
        options["iou_threshold"] = args.iou
    if args.score_floor is not None:
        options["score_floor"] = args.score_floor
    if args.interpolation is not None:
        options["interpolation"] = args.interpolation
    cfg = EvalConfig(**options)

    annotations = parse_annotations(run.read_input(args.gt))
    predictions = read_predictions(run.read_input(args.pred))
    manifest = None
    if args.manifest:
        manifest = manifest_from_json(run.read_input(args.manifest))

    result = evaluate(
        predictions, annotations, cfg,
        manifest=manifest, bucket=args.bucket,
        workers=max(1, args.workers), model_tag=args.model_tag,
    )
    out = args.out or report_mod.default_report_name(result, "json")
    report_mod.write_report(result, "json", out)
    run.outputs.append(str(out))
    run.seed = manifest.seed if manifest else None
    run.config = {
        "iou_threshold": cfg.iou_threshold, "score_floor": cfg.score_floor,
        "interpolation": cfg.interpolation, "bucket": args.bucket,
        "model_tag": args.model_tag, "workers": args.workers,
    }


def _cmd_report(args, file_cfg, run: _Run) -> None:
    doc = json.loads(run.read_input(args.input))
    result = EvalReport.from_dict(doc)
    out = args.out or str(Path(args.input).with_suffix(f".{args.format}"))
    report_mod.write_report(result, args.format, out)
    run.outputs.append(str(out))
    run.config = {"format": args.format}


_HANDLERS = {
    "ingest": _cmd_ingest,
    "validate": _cmd_validate,
    "variant": _cmd_variant,
    "split": _cmd_split,
    "export": _cmd_export,
    "synth": _cmd_synth,
    "perturb": _cmd_perturb,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
}


if __name__ == "__main__":
    sys.exit(main())
