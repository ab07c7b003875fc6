import numpy as np
import pytest

from ichseg.detection import DetBox
from ichseg.ensemble import (
    FillBoxBackend,
    OracleBackend,
    RecordingBackend,
    SegmentationError,
    SegmenterCapability,
    ThresholdInBoxBackend,
    VariantKind,
    majority_vote,
    run_variant,
    segment_one,
    segment_slice,
    vote_map,
)
from ichseg.prompts import PerturbSpec, PromptSet, SamplingConfig, strip_skull
from ichseg.windowing import CtSlice, make_composite

from conftest import make_phantom, mask_bbox


def phantom():
    hu, mask = make_phantom()
    ct = CtSlice(pixels=hu, patient_id="p", slice_index=0, slice_id="s0")
    return ct, make_composite(ct), mask


def lesion_box(mask, conf=1.0):
    return DetBox(*mask_bbox(mask), subtype="IPH", confidence=conf)


class TestSegmentOne:
    def test_fill_box_bbox_variant(self):
        _, composite, _ = phantom()
        prompt = PromptSet(box=(2, 2, 5, 5), positive_points=((3, 3),))
        mask = segment_one(composite, prompt, VariantKind.BBOX, FillBoxBackend())
        expected = np.zeros((64, 64), dtype=bool)
        expected[2:5, 2:5] = True
        assert np.array_equal(mask, expected)

    def test_point_variant_withholds_box(self):
        _, composite, _ = phantom()
        backend = RecordingBackend(inner=FillBoxBackend())
        prompt = PromptSet(box=(2, 2, 5, 5), positive_points=((3, 3),),
                           negative_points=((10, 10),))
        segment_one(composite, prompt, VariantKind.POINT, backend)
        received = backend.received[0]
        assert received.box is None
        assert received.positive_points == ((3, 3),)

    def test_bbox_variant_withholds_points(self):
        _, composite, _ = phantom()
        backend = RecordingBackend(inner=FillBoxBackend())
        prompt = PromptSet(box=(2, 2, 5, 5), positive_points=((3, 3),))
        segment_one(composite, prompt, VariantKind.BBOX, backend)
        assert backend.received[0].positive_points == ()

    def test_capability_mismatch(self):
        _, composite, _ = phantom()
        backend = FillBoxBackend(capability=SegmenterCapability(accepts_points=False))
        prompt = PromptSet(box=(2, 2, 5, 5), positive_points=((3, 3),))
        with pytest.raises(SegmentationError, match="point"):
            segment_one(composite, prompt, VariantKind.POINT, backend)

    def test_missing_box_for_bbox_variant(self):
        _, composite, _ = phantom()
        prompt = PromptSet(box=None, positive_points=((3, 3),))
        with pytest.raises(SegmentationError, match="box"):
            segment_one(composite, prompt, VariantKind.BBOX, FillBoxBackend())


def brute_force_majority(samples):
    stack = np.stack(samples)
    return stack.sum(axis=0) > len(samples) / 2


class TestMajorityVote:
    def test_unanimity(self):
        m = np.random.default_rng(0).random((5, 5)) < 0.5
        assert np.array_equal(majority_vote([m] * 10), m)

    def test_strict_majority_boundary(self):
        # Exhaustive check of the rule over all vote counts 0..10.
        for votes in range(11):
            samples = [np.full((1, 1), i < votes) for i in range(10)]
            out = majority_vote(samples)
            assert out[0, 0] == (votes >= 6)

    def test_single_sample_identity(self):
        m = np.random.default_rng(1).random((4, 4)) < 0.5
        assert np.array_equal(majority_vote([m]), m)

    def test_matches_brute_force_on_random_stacks(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n = int(rng.integers(1, 11))
            samples = [rng.random((5, 5)) < 0.5 for _ in range(n)]
            assert np.array_equal(majority_vote(samples), brute_force_majority(samples))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        samples = [rng.random((4, 4)) < 0.5 for _ in range(7)]
        a = majority_vote(samples)
        b = majority_vote(samples[::-1])
        assert np.array_equal(a, b)

    def test_superset_sample_never_removes_pixels(self):
        rng = np.random.default_rng(4)
        samples = [rng.random((5, 5)) < 0.5 for _ in range(5)]
        before = majority_vote(samples)
        superset = before | (rng.random((5, 5)) < 0.3)
        after = majority_vote(samples + [superset])
        assert not (before & ~after).any()

    def test_half_rule(self):
        samples = [np.full((1, 1), i < 5) for i in range(10)]
        assert not majority_vote(samples, rule="strict")[0, 0]
        assert majority_vote(samples, rule="half")[0, 0]

    def test_dimension_mismatch(self):
        with pytest.raises(SegmentationError):
            vote_map([np.zeros((2, 2), bool), np.zeros((3, 3), bool)])

    def test_empty_stack(self):
        with pytest.raises(SegmentationError):
            majority_vote([])


class TestRunVariant:
    def run(self, variant, backend=None, seed=0, spec=None):
        ct, composite, mask = phantom()
        stripped, brain = strip_skull(ct)
        return run_variant(
            composite, stripped, lesion_box(mask), variant,
            backend or FillBoxBackend(), spec or PerturbSpec(),
            SamplingConfig(), seed=seed, brain_mask=brain,
        )

    def test_member_count(self):
        masks = self.run(VariantKind.BBOX)
        assert len(masks) == 10

    def test_min_max_one_all_members_equal(self):
        ct, composite, mask = phantom()
        stripped, brain = strip_skull(ct)
        spec = PerturbSpec(count=10, min_expand_px=1, max_expand_px=1)
        masks = run_variant(composite, stripped, lesion_box(mask), VariantKind.BBOX,
                            FillBoxBackend(), spec, SamplingConfig(), brain_mask=brain)
        x0, y0, x1, y1 = lesion_box(mask).int_corners()
        expected = np.zeros_like(mask)
        expected[y0 - 1:y1 + 1, x0 - 1:x1 + 1] = True
        assert all(np.array_equal(m, expected) for m in masks)

    def test_n_equals_one(self):
        masks = self.run(VariantKind.BBOX, spec=PerturbSpec(count=1))
        assert len(masks) == 1
        assert np.array_equal(majority_vote(masks), masks[0])

    def test_deterministic_per_seed(self):
        a = self.run(VariantKind.POINT_BBOX, seed=11)
        b = self.run(VariantKind.POINT_BBOX, seed=11)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_all_members_failing_raises(self):
        class Boom:
            capability = SegmenterCapability()
            def segment(self, image, prompt):
                raise RuntimeError("no")
        with pytest.raises(SegmentationError, match="all 10 ensemble members"):
            self.run(VariantKind.BBOX, backend=Boom())


class TestSegmentSlice:
    def test_union_of_disjoint_boxes(self):
        ct, composite, mask = phantom()
        stripped, brain = strip_skull(ct)
        boxes = [DetBox(5, 5, 10, 10, "IPH", 0.9), DetBox(40, 40, 45, 45, "SDH", 0.8)]
        spec = PerturbSpec(count=3, min_expand_px=1, max_expand_px=1)
        final, report = segment_slice(composite, stripped, boxes, VariantKind.BBOX,
                                      FillBoxBackend(), spec, SamplingConfig(),
                                      brain_mask=brain)
        expected = np.zeros_like(mask)
        expected[4:11, 4:11] = True
        expected[39:46, 39:46] = True
        assert np.array_equal(final, expected)
        assert len(report.boxes) == 2

    def test_no_boxes_empty_mask(self):
        ct, composite, _ = phantom()
        stripped, brain = strip_skull(ct)
        final, report = segment_slice(composite, stripped, [], VariantKind.BBOX,
                                      FillBoxBackend(), PerturbSpec(), SamplingConfig())
        assert not final.any() and report.boxes == []

    def test_partial_failure_records_and_survives(self):
        ct, composite, mask = phantom()
        stripped, brain = strip_skull(ct)

        class FailLeft:
            capability = SegmenterCapability()
            def segment(self, image, prompt):
                if prompt.box[0] < 20:
                    raise RuntimeError("left box broken")
                out = np.zeros((image.height, image.width), dtype=bool)
                x0, y0, x1, y1 = prompt.box
                out[y0:y1, x0:x1] = True
                return out

        boxes = [DetBox(5, 5, 10, 10, "IPH", 0.9), DetBox(40, 40, 45, 45, "SDH", 0.8)]
        final, report = segment_slice(composite, stripped, boxes, VariantKind.BBOX,
                                      FailLeft(), PerturbSpec(), SamplingConfig(),
                                      brain_mask=brain)
        assert final.any()
        assert len(report.failed_boxes) == 1 and len(report.boxes) == 1

    def test_all_boxes_failing_raises(self):
        ct, composite, mask = phantom()
        stripped, brain = strip_skull(ct)

        class Boom:
            capability = SegmenterCapability()
            def segment(self, image, prompt):
                raise RuntimeError("no")

        with pytest.raises(SegmentationError, match="every box"):
            segment_slice(composite, stripped, [lesion_box(mask)], VariantKind.BBOX,
                          Boom(), PerturbSpec(), SamplingConfig())

    def test_oracle_backend_round_trip(self):
        ct, composite, mask = phantom()
        stripped, brain = strip_skull(ct)
        backend = OracleBackend(masks_by_slice={"s0": mask})
        final, _ = segment_slice(composite, stripped, [lesion_box(mask)],
                                 VariantKind.POINT_BBOX, backend, PerturbSpec(),
                                 SamplingConfig(), seed=3, brain_mask=brain)
        assert np.array_equal(final, mask)


class TestThresholdBackend:
    def test_keeps_bright_brain_pixels_in_box(self):
        ct, composite, mask = phantom()
        box = lesion_box(mask)
        prompt = PromptSet(box=box.int_corners(), positive_points=())
        out = ThresholdInBoxBackend(brain_floor=0.6, bone_ceiling=0.5).segment(
            composite, prompt
        )
        # Lesion HU 70 -> brain channel clamps to 0.875; box equals lesion bbox.
        assert np.array_equal(out, mask)
