import json

import numpy as np
import pytest

from nodulekit.annotations import (
    AnnotationRecord,
    AnnotationSet,
    emit_annotations,
    parse_annotations,
    validate_against_images,
)
from nodulekit.errors import EmptyExport, MalformedJson, SchemaViolation
from nodulekit.geometry import NodulePolygon, Tirads


def doc(records):
    return json.dumps({"schema": "nodule-annotations/1", "records": records})


SINGLE = doc([{
    "image": "P1_00.png", "patient_id": "P1", "width": 640, "height": 480,
    "nodules": [{
        "polygon": [[100, 100], [200, 100], [200, 180], [100, 180]],
        "tirads": "TR3",
        "attrs": {"shape": "oval"},
    }],
}])


class TestParse:
    def test_single_record_field_by_field(self):
        result = parse_annotations(SINGLE)
        assert len(result.records) == 1
        record = result.records[0]
        assert record.image_ref == "P1_00.png"
        assert record.patient_id == "P1"
        assert (record.image_width, record.image_height) == (640, 480)
        assert len(record.nodules) == 1
        nodule = record.nodules[0]
        assert nodule.tirads is Tirads.TR3
        assert nodule.shape_attrs == {"shape": "oval"}
        assert nodule.vertices.tolist() == [[100, 100], [200, 100], [200, 180], [100, 180]]

    def test_two_point_polygon_rejected_with_path(self):
        bad = doc([{
            "image": "a.png", "patient_id": "p", "width": 10, "height": 10,
            "nodules": [{"polygon": [[0, 0], [5, 5]]}],
        }])
        with pytest.raises(SchemaViolation) as excinfo:
            parse_annotations(bad)
        assert "records[0].nodules[0].polygon" in str(excinfo.value)

    def test_empty_records(self):
        with pytest.raises(EmptyExport):
            parse_annotations(doc([]))

    def test_malformed_json(self):
        with pytest.raises(MalformedJson):
            parse_annotations(b"{nope")
        with pytest.raises(MalformedJson):
            parse_annotations(b"[1,2,3]")

    def test_wrong_schema(self):
        bad = json.dumps({"schema": "something/9", "records": []})
        with pytest.raises(SchemaViolation):
            parse_annotations(bad)

    def test_duplicate_image_ref(self):
        entry = {"image": "a.png", "patient_id": "p", "width": 4, "height": 4,
                 "nodules": [{"polygon": [[0, 0], [2, 0], [0, 2]]}]}
        with pytest.raises(SchemaViolation) as excinfo:
            parse_annotations(doc([entry, dict(entry)]))
        assert "duplicate" in str(excinfo.value)

    def test_empty_nodules_requires_no_finding(self):
        bad = doc([{"image": "a.png", "patient_id": "p", "width": 4, "height": 4,
                    "nodules": []}])
        with pytest.raises(SchemaViolation):
            parse_annotations(bad)
        ok = doc([{"image": "a.png", "patient_id": "p", "width": 4, "height": 4,
                   "no_finding": True, "nodules": []}])
        record = parse_annotations(ok).records[0]
        assert record.no_finding and not record.nodules

    def test_degenerate_polygon_rejected(self):
        bad = doc([{"image": "a.png", "patient_id": "p", "width": 4, "height": 4,
                    "nodules": [{"polygon": [[1, 1], [1, 1], [1, 1]]}]}])
        with pytest.raises(SchemaViolation):
            parse_annotations(bad)

    def test_unknown_tirads_preserved(self):
        raw = doc([{"image": "a.png", "patient_id": "p", "width": 9, "height": 9,
                    "nodules": [{"polygon": [[0, 0], [4, 0], [0, 4]],
                                 "tirads": "TRX"}]}])
        record = parse_annotations(raw).records[0]
        assert record.nodules[0].tirads is None
        assert record.source_meta["nodules[0].tirads"] == "TRX"

    def test_unknown_record_keys_into_meta(self):
        raw = doc([{"image": "a.png", "patient_id": "p", "width": 9, "height": 9,
                    "scanner": "GE-9", "frames": 3,
                    "nodules": [{"polygon": [[0, 0], [4, 0], [0, 4]]}]}])
        record = parse_annotations(raw).records[0]
        assert record.source_meta["scanner"] == "GE-9"
        assert record.source_meta["frames"] == "3"

    def test_count_conservation_nodules_exceed_images(self):
        records = []
        for i in range(5):
            nodules = [{"polygon": [[0, 0], [3 + j, 0], [0, 3 + j]]}
                       for j in range(i % 3 + 1)]
            records.append({"image": f"im{i}.png", "patient_id": f"p{i % 2}",
                            "width": 32, "height": 32, "nodules": nodules})
        raw = doc(records)
        parsed = parse_annotations(raw)
        source_count = sum(len(r["nodules"]) for r in records)
        assert parsed.total_nodules() == source_count
        assert parsed.total_nodules() > len(parsed.records)


class TestRoundTrip:
    def test_parse_emit_parse_fixpoint(self):
        raw = doc([
            {"image": "a.png", "patient_id": "p1", "width": 64, "height": 48,
             "doppler": True, "vendor_field": {"k": 1},
             "nodules": [
                 {"polygon": [[1.5, 2.25], [20, 2], [10, 30]], "tirads": "TR5"},
                 {"polygon": [[5, 5], [9, 5], [9, 9], [5, 9]],
                  "attrs": {"margin": "smooth"}},
             ]},
            {"image": "b.png", "patient_id": "p2", "width": 32, "height": 32,
             "excluded": "artifact", "no_finding": True, "nodules": []},
        ])
        first = parse_annotations(raw)
        second = parse_annotations(emit_annotations(first))
        assert second == first
        # and a second cycle is byte-stable
        assert emit_annotations(second) == emit_annotations(first)


class TestValidate:
    def _record(self, vertices, width=20, height=10, ref="a.png"):
        return AnnotationRecord(
            image_ref=ref, patient_id="p", image_width=width, image_height=height,
            nodules=[NodulePolygon(np.array(vertices, dtype=float))],
        )

    def test_clean_set_empty_report(self):
        record = self._record([(1, 1), (5, 1), (3, 5)])
        _, report = validate_against_images(
            AnnotationSet([record]), {"a.png": (20, 10)}
        )
        assert report.is_clean

    def test_missing_image_reported(self):
        record = self._record([(1, 1), (5, 1), (3, 5)], ref="x.png")
        _, report = validate_against_images(AnnotationSet([record]), {})
        assert report.missing_images == ["x.png"]

    def test_unannotated_image_reported(self):
        record = self._record([(1, 1), (5, 1), (3, 5)])
        _, report = validate_against_images(
            AnnotationSet([record]), {"a.png": (20, 10), "spare.png": (8, 8)}
        )
        assert report.unannotated_images == ["spare.png"]

    def test_small_overshoot_clipped(self):
        record = self._record([(1, 1), (20.4, 1), (3, 5)])
        clipped, report = validate_against_images(
            AnnotationSet([record]), {"a.png": (20, 10)}
        )
        assert report.is_clean
        assert clipped.records[0].nodules[0].vertices[1, 0] == 20.0

    def test_large_overshoot_flagged_not_clipped(self):
        record = self._record([(1, 1), (30.0, 1), (3, 5)])
        kept, report = validate_against_images(
            AnnotationSet([record]), {"a.png": (20, 10)}
        )
        assert len(report.out_of_bounds) == 1
        assert report.out_of_bounds[0][0] == "a.png"
        # non-destructive: the record and its vertices survive untouched
        assert kept.records[0].nodules[0].vertices[1, 0] == 30.0

    def test_negative_overshoot_clipped(self):
        record = self._record([(-0.3, 1), (5, 1), (3, 5)])
        clipped, report = validate_against_images(
            AnnotationSet([record]), {"a.png": (20, 10)}
        )
        assert report.is_clean
        assert clipped.records[0].nodules[0].vertices[0, 0] == 0.0

    def test_dimension_mismatch_reported(self):
        record = self._record([(1, 1), (5, 1), (3, 5)], width=20, height=10)
        _, report = validate_against_images(
            AnnotationSet([record]), {"a.png": (16, 10)}
        )
        assert len(report.dimension_mismatches) == 1
