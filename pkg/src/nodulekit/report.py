"""Render evaluation reports as CSV rows, full-fidelity JSON, or SVG plots.

The CSV row follows the result-table column order used for model
comparisons: model tag, dataset version, both Dice levels, then mAP@0.5,
precision, and recall for masks (M) and boxes (B).
"""

from __future__ import annotations

import json

from .evaluation import EvalReport
from .fileio import write_atomic_text

CSV_COLUMNS = (
    "model", "dataset_version",
    "dice_pixel", "dice_instance",
    "map50_mask", "map50_box",
    "precision_mask", "precision_box",
    "recall_mask", "recall_box",
)

FORMATS = ("csv", "json", "svg")


def render_csv(report: EvalReport) -> str:
    meta = report.metadata
    row = [
        str(meta.get("model_tag", "external")),
        str(meta.get("dataset_version", "custom")),
    ] + [
        f"{value:.3f}"
        for value in (
            report.dice_pixel, report.dice_instance,
            report.map50_mask, report.map50_box,
            report.precision_mask, report.precision_box,
            report.recall_mask, report.recall_box,
        )
    ]
    return ",".join(CSV_COLUMNS) + "\n" + ",".join(row) + "\n"


def render_json(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), indent=2) + "\n"


def render_svg(report: EvalReport) -> str:
    """Both PR curves on one plot.

    The polylines live inside a group whose transform maps the unit square
    to the plot area, so their `points` attributes hold the raw
    (recall, precision) pairs exactly as computed.
    """
    meta = report.metadata
    x0, y0, side = 70.0, 380.0, 300.0  # plot origin (bottom-left) and size

    def page(r: float, p: float) -> tuple[float, float]:
        return x0 + side * r, y0 - side * p

    def polyline(points: list[tuple[float, float]], ident: str, color: str) -> str:
        text = " ".join(f"{r!r},{p!r}" for r, p in points)
        return (
            f'<polyline id="{ident}" points="{text}" fill="none" stroke="{color}" '
            f'stroke-width="0.006" vector-effect="non-scaling-stroke"/>'
        )

    ticks = []
    for i in range(5):
        t = i / 4.0
        px, py = page(t, 0.0)
        ticks.append(f'<line x1="{px}" y1="{y0}" x2="{px}" y2="{y0 + 5}" stroke="#333"/>')
        ticks.append(
            f'<text x="{px}" y="{y0 + 18}" font-size="11" text-anchor="middle">{t:g}</text>'
        )
        px, py = page(0.0, t)
        ticks.append(f'<line x1="{x0 - 5}" y1="{py}" x2="{x0}" y2="{py}" stroke="#333"/>')
        ticks.append(
            f'<text x="{x0 - 9}" y="{py + 4}" font-size="11" text-anchor="end">{t:g}</text>'
        )

    op_points = []
    for kind, color in (("mask", "#1f77b4"), ("box", "#d62728")):
        r = getattr(report, f"recall_{kind}")
        p = getattr(report, f"precision_{kind}")
        px, py = page(r, p)
        op_points.append(
            f'<circle id="op-{kind}" cx="{px:.2f}" cy="{py:.2f}" r="4" '
            f'fill="none" stroke="{color}" stroke-width="1.5"/>'
        )

    title = (
        f"PR curves @ IoU {meta.get('iou_threshold', 0.5):g} | "
        f"{meta.get('model_tag', 'external')} | "
        f"{meta.get('dataset_version', 'custom')}/{meta.get('bucket') or 'all'}"
    )
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        '<svg xmlns="http://www.w3.org/2000/svg" width="470" height="440" '
        'viewBox="0 0 470 440">',
        f'<title>{title}</title>',
        f'<text x="{x0}" y="22" font-size="13">{title}</text>',
        f'<rect x="{x0}" y="{y0 - side}" width="{side}" height="{side}" '
        'fill="none" stroke="#333"/>',
        *ticks,
        f'<text x="{x0 + side / 2}" y="{y0 + 36}" font-size="12" '
        'text-anchor="middle">Recall</text>',
        f'<text x="{x0 - 40}" y="{y0 - side / 2}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 {x0 - 40} {y0 - side / 2})">Precision</text>',
        f'<g transform="translate({x0} {y0}) scale({side} {-side})">',
        polyline(report.pr_curve_mask, "pr-mask", "#1f77b4"),
        polyline(report.pr_curve_box, "pr-box", "#d62728"),
        "</g>",
        *op_points,
        f'<text x="{x0 + side - 4}" y="{y0 - side + 16}" font-size="11" '
        'text-anchor="end" fill="#1f77b4">masks</text>',
        f'<text x="{x0 + side - 4}" y="{y0 - side + 30}" font-size="11" '
        'text-anchor="end" fill="#d62728">boxes</text>',
        "</svg>",
        "",
    ]
    return "\n".join(parts)


def render_report(report: EvalReport, fmt: str) -> str:
    if fmt == "csv":
        return render_csv(report)
    if fmt == "json":
        return render_json(report)
    if fmt == "svg":
        return render_svg(report)
    raise ValueError(f"format must be one of {FORMATS}, got {fmt!r}")


def write_report(report: EvalReport, fmt: str, path) -> None:
    write_atomic_text(path, render_report(report, fmt))


def default_report_name(report: EvalReport, fmt: str) -> str:
    meta = report.metadata
    version = meta.get("dataset_version", "custom")
    bucket = meta.get("bucket") or "all"
    seed = meta.get("split_seed")
    seed_part = f"_seed{seed}" if seed is not None else ""
    return f"report_{version}_{bucket}{seed_part}.{fmt}"
