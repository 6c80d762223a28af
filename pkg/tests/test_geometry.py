import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nodulekit.errors import DegeneratePolygon, DimensionMismatch, EmptyMask
from nodulekit.geometry import (
    BoundingBox,
    InstanceMask,
    NodulePolygon,
    box_iou,
    mask_iou,
    polygon_bbox,
    rasterize,
    shoelace_area,
)

from oracles import (
    box_iou_reference,
    mask_iou_reference,
    perimeter,
    random_convex_polygon,
    rasterize_reference,
)


def poly(*pts):
    return NodulePolygon(np.array(pts, dtype=np.float64))


class TestShoelace:
    def test_unit_square(self):
        assert shoelace_area(poly((0, 0), (1, 0), (1, 1), (0, 1))) == 1.0

    def test_right_triangle(self):
        assert shoelace_area(poly((0, 0), (4, 0), (0, 3))) == 6.0

    def test_orientation_independent(self):
        cw = shoelace_area(poly((0, 0), (0, 3), (4, 0)))
        ccw = shoelace_area(poly((0, 0), (4, 0), (0, 3)))
        assert cw == ccw == 6.0

    def test_too_few_vertices(self):
        with pytest.raises(DegeneratePolygon):
            shoelace_area(poly((0, 0), (1, 1)))

    def test_repeated_vertex_zero_area(self):
        with pytest.raises(DegeneratePolygon):
            shoelace_area(poly((2, 2), (2, 2), (2, 2)))

    def test_nan_vertex(self):
        with pytest.raises(DegeneratePolygon):
            shoelace_area(poly((0, 0), (1, float("nan")), (1, 1)))

    def test_area_close_to_raster_count(self):
        rng = np.random.default_rng(101)
        for _ in range(100):
            p = NodulePolygon(np.array(random_convex_polygon(rng, 96.0)))
            area = shoelace_area(p)
            mask = rasterize(p, 96, 96)
            assert abs(area - mask.area) <= 1.5 * perimeter(p.vertices)


class TestRasterize:
    def test_two_by_two_square(self):
        mask = rasterize(poly((0, 0), (2, 0), (2, 2), (0, 2)), 4, 4)
        assert mask.area == 4
        expected = np.zeros((4, 4), dtype=bool)
        expected[0:2, 0:2] = True
        assert np.array_equal(mask.bits, expected)

    def test_polygon_outside_frame(self):
        with pytest.raises(EmptyMask):
            rasterize(poly((10, 10), (12, 10), (11, 12)), 4, 4)

    def test_sliver_with_no_centers(self):
        with pytest.raises(EmptyMask):
            rasterize(poly((0.9, 0.9), (0.95, 0.9), (0.92, 0.95)), 4, 4)

    def test_matches_per_pixel_oracle(self):
        rng = np.random.default_rng(77)
        for _ in range(25):
            vertices = random_convex_polygon(rng, 48.0)
            mask = rasterize(NodulePolygon(np.array(vertices)), 48, 48)
            reference = np.array(rasterize_reference(vertices, 48, 48))
            assert np.array_equal(mask.bits, reference)

    def test_self_intersecting_even_odd(self):
        # asymmetric bowtie (symmetric ones have zero signed area and are
        # rejected); even-odd fills the lobes and leaves the pinch empty
        bowtie = poly((0, 0), (8, 4), (8, 0), (0, 6))
        mask = rasterize(bowtie, 10, 10)
        reference = np.array(rasterize_reference(bowtie.vertices.tolist(), 10, 10))
        assert np.array_equal(mask.bits, reference)
        assert 0 < mask.area < 48

    def test_translation_invariance(self):
        base = np.array([(3.2, 1.7), (9.4, 2.1), (12.8, 6.3), (10.1, 11.6),
                         (4.6, 12.2), (1.9, 7.0)])
        m1 = rasterize(NodulePolygon(base), 20, 20)
        m2 = rasterize(NodulePolygon(base + np.array([5.0, 3.0])), 25, 23)
        shifted = np.zeros((23, 25), dtype=bool)
        shifted[3:23, 5:25] = m1.bits
        assert np.array_equal(shifted, m2.bits)

    def test_clipping_keeps_inside_portion(self):
        mask = rasterize(poly((-5, -5), (3, -5), (3, 3), (-5, 3)), 8, 8)
        expected = np.zeros((8, 8), dtype=bool)
        expected[0:3, 0:3] = True
        assert np.array_equal(mask.bits, expected)

    def test_scale_convergence_monotone(self):
        base = np.array([(3.2, 1.7), (9.4, 2.1), (12.8, 6.3), (10.1, 11.6),
                         (4.6, 12.2), (1.9, 7.0)])
        ratios = []
        for scale in (1, 4, 16):
            p = NodulePolygon(base * scale)
            area = shoelace_area(p)
            frame = int(np.ceil(base.max() * scale)) + 4
            ratios.append(abs(area - rasterize(p, frame, frame).area) / area)
        assert ratios[0] >= ratios[1] >= ratios[2]

    def test_area_bounded_by_padded_bbox(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            p = NodulePolygon(np.array(random_convex_polygon(rng, 40.0)))
            bbox = polygon_bbox(p)
            mask = rasterize(p, 40, 40)
            padded = (bbox.x_max - bbox.x_min + 2) * (bbox.y_max - bbox.y_min + 2)
            assert mask.area <= padded

    def test_mask_bbox_within_padded_polygon_bbox(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            p = NodulePolygon(np.array(random_convex_polygon(rng, 40.0)))
            pb = polygon_bbox(p)
            mb = rasterize(p, 40, 40).bbox
            assert mb.x_min >= pb.x_min - 1 and mb.y_min >= pb.y_min - 1
            assert mb.x_max <= pb.x_max + 1 and mb.y_max <= pb.y_max + 1


class TestPolygonBbox:
    def test_triangle(self):
        assert polygon_bbox(poly((0, 0), (4, 0), (0, 3))) == BoundingBox(0, 0, 4, 3)

    def test_degenerate(self):
        with pytest.raises(DegeneratePolygon):
            polygon_bbox(poly((1, 1), (1, 1), (1, 1)))


class TestBoxIou:
    def test_identical(self):
        b = BoundingBox(1, 2, 5, 7)
        assert box_iou(b, b) == 1.0

    def test_disjoint(self):
        assert box_iou(BoundingBox(0, 0, 1, 1), BoundingBox(5, 5, 6, 6)) == 0.0

    def test_partial_overlap(self):
        value = box_iou(BoundingBox(0, 0, 2, 2), BoundingBox(1, 1, 3, 3))
        assert value == pytest.approx(1 / 7, abs=1e-12)

    def test_degenerate_zero_area(self):
        line = BoundingBox(1, 1, 1, 5)
        assert box_iou(line, line) == 0.0
        assert box_iou(line, BoundingBox(0, 0, 9, 9)) == 0.0

    @given(st.lists(st.floats(-50, 50), min_size=8, max_size=8))
    def test_symmetry_range_and_reference(self, raw):
        xs = sorted(raw[0:2]), sorted(raw[2:4]), sorted(raw[4:6]), sorted(raw[6:8])
        a = BoundingBox(xs[0][0], xs[1][0], xs[0][1], xs[1][1])
        b = BoundingBox(xs[2][0], xs[3][0], xs[2][1], xs[3][1])
        forward = box_iou(a, b)
        assert forward == box_iou(b, a)
        assert 0.0 <= forward <= 1.0
        reference = box_iou_reference(
            (a.x_min, a.y_min, a.x_max, a.y_max),
            (b.x_min, b.y_min, b.x_max, b.y_max),
        )
        assert forward == reference

    @given(st.tuples(st.floats(-20, 20), st.floats(-20, 20),
                     st.floats(0.1, 30), st.floats(0.1, 30)))
    def test_identity_iff_equal(self, box):
        x, y, w, h = box
        a = BoundingBox(x, y, x + w, y + h)
        b = BoundingBox(x + 0.5, y, x + w + 0.5, y + h)
        assert box_iou(a, a) == 1.0
        assert box_iou(a, b) < 1.0


class TestMaskIou:
    def _mask(self, bits):
        return InstanceMask.from_bits(np.array(bits, dtype=bool))

    def test_self(self):
        m = self._mask([[1, 0], [1, 1]])
        assert mask_iou(m, m) == 1.0

    def test_disjoint(self):
        a = self._mask([[1, 0], [0, 0]])
        b = self._mask([[0, 0], [0, 1]])
        assert mask_iou(a, b) == 0.0

    def test_dimension_mismatch(self):
        a = self._mask([[1]])
        b = self._mask([[1, 0]])
        with pytest.raises(DimensionMismatch):
            mask_iou(a, b)

    def test_random_pairs_match_pixel_loop(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            a_bits = rng.random((12, 9)) < 0.4
            b_bits = rng.random((12, 9)) < 0.4
            if not a_bits.any() or not b_bits.any():
                continue
            a, b = self._mask(a_bits), self._mask(b_bits)
            assert mask_iou(a, b) == mask_iou_reference(a_bits.tolist(), b_bits.tolist())
            assert mask_iou(a, b) == mask_iou(b, a)

    def test_one_iff_identical_bits(self):
        rng = np.random.default_rng(12)
        bits = rng.random((8, 8)) < 0.5
        bits[0, 0] = True
        other = bits.copy()
        other[7, 7] = not other[7, 7]
        assert mask_iou(self._mask(bits), self._mask(bits)) == 1.0
        assert mask_iou(self._mask(bits), self._mask(other)) < 1.0


class TestInstanceMask:
    def test_area_is_popcount_and_bbox_tight(self):
        bits = np.zeros((6, 7), dtype=bool)
        bits[2, 3] = bits[4, 5] = True
        mask = InstanceMask.from_bits(bits)
        assert mask.area == 2
        assert mask.bbox == BoundingBox(3, 2, 6, 5)

    def test_empty_rejected(self):
        with pytest.raises(EmptyMask):
            InstanceMask.from_bits(np.zeros((3, 3), dtype=bool))
