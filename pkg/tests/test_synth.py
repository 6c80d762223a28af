import numpy as np
import pytest

from nodulekit.annotations import emit_annotations, validate_against_images
from nodulekit.errors import InvalidConfig, NoRoomForSpurious
from nodulekit.evaluation import evaluate
from nodulekit.manifest import detect_doppler
from nodulekit.synth import PerturbConfig, PlantedCounts, SynthConfig, generate, perturb


class TestGenerate:
    def test_exact_counts(self):
        cfg = SynthConfig(n_patients=10, images_per_patient=(2, 2),
                          nodules_per_image=(1, 1), seed=1)
        _, annotations, manifest = generate(cfg)
        assert (manifest.stats.n_patients, manifest.stats.n_images,
                manifest.stats.n_nodules) == (10, 20, 20)

    def test_doppler_planting_matches_detector(self):
        cfg = SynthConfig(n_patients=40, images_per_patient=(2, 3),
                          doppler_fraction=0.25, seed=7)
        images, _, manifest = generate(cfg)
        n_images = len(images)
        expected = round(0.25 * n_images)
        detected = {ref for ref, img in images.items() if detect_doppler(img)}
        flagged = {e.image_ref for e in manifest.entries if e.doppler}
        assert detected == flagged
        assert len(detected) == expected

    def test_determinism(self):
        cfg = SynthConfig(n_patients=6, seed=99, doppler_fraction=0.3)
        images_a, ann_a, man_a = generate(cfg)
        images_b, ann_b, man_b = generate(cfg)
        assert list(images_a) == list(images_b)
        for ref in images_a:
            assert np.array_equal(images_a[ref].samples, images_b[ref].samples)
        assert emit_annotations(ann_a) == emit_annotations(ann_b)
        assert man_a.entries == man_b.entries

    def test_ground_truth_passes_validation_cleanly(self):
        images, annotations, _ = generate(SynthConfig(n_patients=8, seed=3))
        dims = {ref: (img.width, img.height) for ref, img in images.items()}
        _, report = validate_against_images(annotations, dims)
        assert report.is_clean

    def test_no_finding_rate(self):
        cfg = SynthConfig(n_patients=30, images_per_patient=(2, 2),
                          no_finding_rate=0.4, seed=5)
        _, annotations, manifest = generate(cfg)
        empties = [r for r in annotations.records if r.no_finding]
        assert empties, "some records should be no_finding at rate 0.4"
        assert all(not r.nodules for r in empties)
        assert manifest.stats.n_nodules == annotations.total_nodules()

    def test_infeasible_config_rejected(self):
        with pytest.raises(InvalidConfig):
            SynthConfig(width_range=(40, 64), height_range=(40, 64),
                        axis_range=(20, 30))

    def test_speckle_texture_present(self):
        images, _, _ = generate(SynthConfig(n_patients=2, speckle=0.25, seed=11))
        img = next(iter(images.values()))
        assert img.samples.std() > 10  # multiplicative speckle, not flat gray


class TestPerturb:
    def _dataset(self, seed=21, n_patients=25):
        return generate(SynthConfig(
            n_patients=n_patients, images_per_patient=(1, 3),
            nodules_per_image=(1, 2), seed=seed,
        ))

    def test_identity_when_rates_zero(self):
        _, annotations, _ = self._dataset()
        preds, counts = perturb(annotations, PerturbConfig(seed=1))
        total = annotations.total_nodules()
        assert counts == PlantedCounts(kept=total, dropped=0, spurious=0)
        report = evaluate(preds, annotations)
        assert report.counts_mask.tp == total
        assert report.counts_mask.fp == 0
        assert report.counts_mask.fn == 0

    def test_planted_counts_are_the_eval_counts(self):
        _, annotations, _ = self._dataset()
        cfg = PerturbConfig(drop_rate=0.2, spurious_rate=0.1, jitter_px=0.0, seed=12)
        preds, counts = perturb(annotations, cfg)
        assert counts.kept + counts.dropped == annotations.total_nodules()
        report = evaluate(preds, annotations)
        for side in (report.counts_mask, report.counts_box):
            assert side.tp == counts.kept
            assert side.fp == counts.spurious
            assert side.fn == counts.dropped
        assert report.recall_mask == counts.kept / annotations.total_nodules()

    def test_iou_guarded_jitter_keeps_every_match(self):
        _, annotations, _ = self._dataset(seed=33)
        cfg = PerturbConfig(drop_rate=0.0, spurious_rate=0.0, jitter_px=1.5, seed=4)
        preds, counts = perturb(annotations, cfg)
        report = evaluate(preds, annotations)
        assert report.counts_mask.tp == counts.kept == annotations.total_nodules()
        assert report.counts_box.tp == counts.kept
        # jitter actually moved vertices
        moved = False
        gt_map = annotations.record_map()
        for ref, dets in preds.items():
            for d, g in zip(dets, gt_map[ref].nodules):
                if not np.array_equal(d.polygon.vertices, g.vertices):
                    moved = True
        assert moved

    def test_determinism(self):
        _, annotations, _ = self._dataset()
        cfg = PerturbConfig(drop_rate=0.3, spurious_rate=0.2, jitter_px=1.0, seed=8)
        preds_a, counts_a = perturb(annotations, cfg)
        preds_b, counts_b = perturb(annotations, cfg)
        assert counts_a == counts_b
        for ref in preds_a:
            assert len(preds_a[ref]) == len(preds_b[ref])
            for da, db in zip(preds_a[ref], preds_b[ref]):
                assert da.score == db.score
                assert np.array_equal(da.polygon.vertices, db.polygon.vertices)

    def test_score_separation(self):
        _, annotations, _ = self._dataset()
        cfg = PerturbConfig(drop_rate=0.1, spurious_rate=0.3, seed=2)
        preds, counts = perturb(annotations, cfg)
        matched_scores, spurious_scores = [], []
        for dets in preds.values():
            for d in dets:
                (matched_scores if d.score >= cfg.matched_score_range[0]
                 else spurious_scores).append(d.score)
        assert len(spurious_scores) == counts.spurious
        assert min(matched_scores) > max(spurious_scores)

    def test_no_room_for_spurious(self):
        # one huge nodule fills the frame; padded placement must fail
        _, annotations, _ = generate(SynthConfig(
            n_patients=1, images_per_patient=(1, 1), nodules_per_image=(1, 1),
            width_range=(72, 72), height_range=(72, 72), axis_range=(30, 32),
            placement_margin=2.0, seed=6,
        ))
        with pytest.raises(NoRoomForSpurious):
            perturb(annotations, PerturbConfig(spurious_rate=1.0, seed=1))

    def test_bad_config(self):
        with pytest.raises(InvalidConfig):
            PerturbConfig(drop_rate=1.5)
        with pytest.raises(InvalidConfig):
            PerturbConfig(matched_score_range=(0.3, 0.9),
                          spurious_score_range=(0.1, 0.4))
