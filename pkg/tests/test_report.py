import json
import re

import numpy as np
import pytest

from nodulekit.annotations import AnnotationRecord, AnnotationSet
from nodulekit.evaluation import EvalReport, evaluate, predictions_from_ground_truth
from nodulekit.geometry import NodulePolygon
from nodulekit.report import (
    CSV_COLUMNS,
    default_report_name,
    render_csv,
    render_json,
    render_report,
    render_svg,
)


def identity_report(model_tag="external"):
    record = AnnotationRecord(
        image_ref="im.png", patient_id="p", image_width=32, image_height=32,
        nodules=[NodulePolygon(np.array([(2, 2), (12, 2), (12, 12), (2, 12)]))],
    )
    annotations = AnnotationSet([record])
    return evaluate(predictions_from_ground_truth(annotations), annotations,
                    model_tag=model_tag)


def test_csv_all_ones_row():
    text = render_csv(identity_report())
    header, row = text.strip().splitlines()
    assert header == ",".join(CSV_COLUMNS)
    assert row == "external,custom," + ",".join(["1.000"] * 8)


def test_json_round_trip_equal_value():
    report = identity_report()
    back = EvalReport.from_dict(json.loads(render_json(report)))
    assert back == report


def test_svg_polyline_matches_pr_points():
    report = identity_report()
    svg = render_svg(report)
    assert "Recall" in svg and "Precision" in svg
    for ident, curve in (("pr-mask", report.pr_curve_mask),
                         ("pr-box", report.pr_curve_box)):
        match = re.search(rf'<polyline id="{ident}" points="([^"]*)"', svg)
        assert match, f"missing polyline {ident}"
        points = [
            tuple(float(c) for c in pair.split(","))
            for pair in match.group(1).split()
        ]
        assert points == [(r, p) for r, p in curve]
    assert 'id="op-mask"' in svg and 'id="op-box"' in svg


def test_render_report_dispatch_and_unknown_format():
    report = identity_report()
    assert render_report(report, "csv").startswith("model,")
    assert render_report(report, "json").startswith("{")
    assert render_report(report, "svg").startswith("<?xml")
    with pytest.raises(ValueError):
        render_report(report, "pdf")


def test_default_report_name_embeds_context():
    report = identity_report()
    report.metadata["dataset_version"] = "V1"
    report.metadata["bucket"] = "test"
    report.metadata["split_seed"] = 42
    assert default_report_name(report, "csv") == "report_V1_test_seed42.csv"
