#!/usr/bin/env python3
"""Convert YOLO-family segmentation inference output into nodule-predictions
JSON.

Input: a directory of per-image label text files, one detection per line:

    <class_id> <x1> <y1> <x2> <y2> ... <xn> <yn> [<confidence>]

Coordinates are normalized to [0, 1]; the trailing confidence is optional
when --assume-score is given (ground-truth-derived label files carry no
score).  Image dimensions come from a sidecar file: either an ingest
listing (schema nodule-images/1) or an annotation export (schema
nodule-annotations/1).

Confidence values are carried through as the exact decimal text found in
the label file; they are validated numerically but never re-rendered
through a float, so converting twice cannot drift a score.

Standalone by design: standard library only, so it can run inside any
training environment without dependency conflicts.

Exit codes: 0 success, 1 usage error, 2 data error, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile

SCHEMA_OUT = "nodule-predictions/1"


class AdapterError(Exception):
    pass


class UnknownImage(AdapterError):
    pass


class MalformedLine(AdapterError):
    def __init__(self, path, line_no, reason):
        super().__init__(f"{path}:{line_no}: {reason}")


def load_image_dims(path):
    """Map image filename -> (width, height) from a supported sidecar file."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    schema = doc.get("schema")
    if schema == "nodule-images/1":
        return {item["file"]: (item["width"], item["height"])
                for item in doc["images"]}
    if schema == "nodule-annotations/1":
        return {record["image"]: (record["width"], record["height"])
                for record in doc["records"]}
    raise AdapterError(
        f"{path}: unsupported schema {schema!r} "
        "(need nodule-images/1 or nodule-annotations/1)"
    )


def parse_label_line(line, path, line_no, assume_score):
    """One native prediction line -> (class_id, coords, score_text)."""
    fields = line.split()
    try:
        class_id = int(fields[0])
    except ValueError:
        raise MalformedLine(path, line_no, f"class id {fields[0]!r} is not an integer")

    rest = fields[1:]
    if len(rest) % 2 == 1:
        score_text = rest[-1]
        coords = rest[:-1]
    elif assume_score is not None:
        score_text = assume_score
        coords = rest
    else:
        raise MalformedLine(
            path, line_no,
            f"{len(rest)} values after class id: even count means no trailing "
            "confidence (pass --assume-score for score-less files)",
        )

    if len(coords) % 2 == 1 or len(coords) < 6:
        raise MalformedLine(
            path, line_no,
            f"{len(coords)} coordinates: need an even count of at least 6",
        )

    try:
        score_value = float(score_text)
    except ValueError:
        raise MalformedLine(path, line_no, f"confidence {score_text!r} is not a number")
    if not (math.isfinite(score_value) and 0.0 <= score_value <= 1.0):
        raise MalformedLine(path, line_no, f"confidence {score_text} outside [0, 1]")

    values = []
    for c in coords:
        try:
            values.append(float(c))
        except ValueError:
            raise MalformedLine(path, line_no, f"coordinate {c!r} is not a number")
    return class_id, values, score_text


def convert(pred_dir, dims, assume_score=None):
    """Directory of label files -> nodule-predictions/1 JSON text.

    Scores are spliced into the output as their original decimal text via
    placeholder substitution.
    """
    by_stem = {}
    for name, wh in dims.items():
        stem = os.path.splitext(name)[0]
        by_stem[stem] = (name, wh)

    label_files = sorted(
        f for f in os.listdir(pred_dir) if f.endswith(".txt")
    )
    entries = []
    score_texts = []
    for filename in label_files:
        stem = os.path.splitext(filename)[0]
        if stem not in by_stem:
            raise UnknownImage(f"label file {filename!r} matches no known image")
        image_name, (width, height) = by_stem[stem]
        path = os.path.join(pred_dir, filename)

        detections = []
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                class_id, values, score_text = parse_label_line(
                    line, path, line_no, assume_score)
                polygon = [
                    [values[k] * width, values[k + 1] * height]
                    for k in range(0, len(values), 2)
                ]
                token = f"\x00score:{len(score_texts)}\x00"
                score_texts.append(score_text)
                detections.append(
                    {"class_id": class_id, "score": token, "polygon": polygon}
                )
        entries.append({"image": image_name, "detections": detections})

    text = json.dumps({"schema": SCHEMA_OUT, "predictions": entries}, indent=2)
    for index, raw in enumerate(score_texts):
        text = text.replace(f'"\\u0000score:{index}\\u0000"', raw)
    return text + "\n"


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="adapter",
        description="YOLO-style label files -> nodule-predictions/1 JSON",
    )
    parser.add_argument("--pred-dir", required=True,
                        help="directory of per-image .txt label files")
    parser.add_argument("--manifest", required=True,
                        help="images.json or annotations JSON carrying dims")
    parser.add_argument("--out", required=True, help="output predictions JSON")
    parser.add_argument("--assume-score", default=None, metavar="S",
                        help="confidence to attach to score-less lines, e.g. 1.0")
    try:
        args = parser.parse_args(argv)
    except SystemExit:
        return 1
    if args.assume_score is not None:
        try:
            value = float(args.assume_score)
        except ValueError:
            value = math.nan
        if not (math.isfinite(value) and 0.0 <= value <= 1.0):
            print(f"--assume-score {args.assume_score!r} must be a number in "
                  "[0, 1]", file=sys.stderr)
            return 1

    try:
        dims = load_image_dims(args.manifest)
        text = convert(args.pred_dir, dims, args.assume_score)
        out_dir = os.path.dirname(os.path.abspath(args.out))
        fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, args.out)
    except AdapterError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
