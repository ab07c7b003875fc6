import numpy as np
import pytest

from ichseg.data import build_index
from ichseg.detection import (
    DetBox,
    DetectionError,
    FixtureReplayBackend,
    StubDetector,
    detect,
    nms,
    slice_prediction,
    stub_detector,
)
from ichseg.prompts import PerturbSpec
from ichseg.windowing import CtSlice, make_composite


def image(size=32):
    ct = CtSlice(pixels=np.zeros((size, size)), patient_id="p", slice_index=0,
                 slice_id="s0")
    return make_composite(ct)


def backend_with(boxes):
    return StubDetector(boxes_by_slice={"s0": boxes})


class TestDetect:
    def test_threshold_filters(self):
        b = backend_with([DetBox(1, 1, 5, 5, "IPH", 0.9), DetBox(2, 2, 6, 6, "SDH", 0.1)])
        out = detect(image(), b, 0.25)
        assert len(out) == 1 and out[0].confidence == 0.9

    def test_threshold_inclusive(self):
        b = backend_with([DetBox(1, 1, 5, 5, "IPH", 0.25)])
        assert len(detect(image(), b, 0.25)) == 1

    def test_empty(self):
        assert detect(image(), backend_with([])) == []

    def test_clamped_to_image_bounds(self):
        b = backend_with([DetBox(28, 5, 40, 10, "EDH", 0.8)])
        out = detect(image(32), b)
        assert out[0].corners == (28, 5, 32, 10)

    def test_box_fully_outside_dropped(self):
        b = backend_with([DetBox(40, 40, 50, 50, "EDH", 0.8)])
        assert detect(image(32), b) == []

    def test_sorted_by_descending_confidence(self):
        b = backend_with([DetBox(1, 1, 2, 2, "IPH", 0.3), DetBox(3, 3, 4, 4, "IVH", 0.7)])
        out = detect(image(), b)
        assert [x.confidence for x in out] == [0.7, 0.3]

    def test_threshold_monotonicity(self):
        rng = np.random.default_rng(3)
        boxes = [DetBox(1, 1, 5, 5, "IPH", float(c)) for c in rng.uniform(0, 1, 20)]
        b = backend_with(boxes)
        img = image()
        prev = len(detect(img, b, 0.0))
        for t in np.linspace(0, 1, 11):
            n = len(detect(img, b, float(t)))
            assert n <= prev
            prev = n

    def test_repeated_calls_agree(self):
        b = backend_with([DetBox(1, 1, 5, 5, "IPH", 0.5)])
        img = image()
        assert detect(img, b) == detect(img, b)

    def test_backend_failure_wrapped(self):
        class Boom:
            descriptor = {}
            def infer(self, image):
                raise RuntimeError("weights on fire")
        with pytest.raises(DetectionError, match="weights on fire"):
            detect(image(), Boom())

    def test_bad_threshold(self):
        with pytest.raises(DetectionError):
            detect(image(), backend_with([]), 1.5)


class TestSlicePrediction:
    def test_empty(self):
        pred = slice_prediction([])
        assert (pred.positive, pred.score) == (False, 0.0)

    def test_max_rule(self):
        pred = slice_prediction([DetBox(1, 1, 2, 2, "IPH", 0.3),
                                 DetBox(3, 3, 4, 4, "SAH", 0.7)])
        assert (pred.positive, pred.score) == (True, 0.7)

    def test_single_box_at_threshold(self):
        pred = slice_prediction([DetBox(1, 1, 2, 2, "IPH", 0.25)])
        assert (pred.positive, pred.score) == (True, 0.25)

    def test_order_invariant(self):
        boxes = [DetBox(1, 1, 2, 2, "IPH", 0.3), DetBox(3, 3, 4, 4, "SAH", 0.7)]
        assert slice_prediction(boxes) == slice_prediction(boxes[::-1])


class TestStubDetector:
    def test_identity_backend(self, fixture_dataset):
        index = build_index(fixture_dataset["root"], fixture_dataset["manifest"])
        backend = stub_detector(index)
        rec = index.get("p1_s0")
        boxes = backend.boxes_by_slice["p1_s0"]
        assert len(boxes) == 1
        assert boxes[0].corners == tuple(float(v) for v in rec.boxes[0].corners)
        assert boxes[0].confidence == 1.0

    def test_healthy_slice_empty(self, fixture_dataset):
        index = build_index(fixture_dataset["root"], fixture_dataset["manifest"])
        backend = stub_detector(index)
        assert backend.boxes_by_slice["p1_s2"] == []

    def test_jitter_deterministic(self, fixture_dataset):
        index = build_index(fixture_dataset["root"], fixture_dataset["manifest"])
        noise = PerturbSpec(count=1, min_expand_px=1, max_expand_px=4)
        a = stub_detector(index, noise=noise, seed=42).boxes_by_slice
        b = stub_detector(index, noise=noise, seed=42).boxes_by_slice
        assert a == b
        c = stub_detector(index, noise=noise, seed=43).boxes_by_slice
        assert a != c


class TestNms:
    def test_overlapping_suppressed(self):
        boxes = [DetBox(0, 0, 10, 10, "IPH", 0.9), DetBox(1, 1, 10, 10, "IPH", 0.5),
                 DetBox(20, 20, 30, 30, "SDH", 0.6)]
        kept = nms(boxes)
        assert len(kept) == 2
        assert kept[0].confidence == 0.9


class TestFixtureReplay:
    def test_round_trip(self, tmp_path):
        payload = {"s0": [{"corners": [1, 2, 5, 6], "subtype": "IVH",
                           "confidence": 0.8}]}
        p = tmp_path / "det.json"
        import json
        p.write_text(json.dumps(payload))
        backend = FixtureReplayBackend.from_json(p)
        out = detect(image(), backend)
        assert out == [DetBox(1, 2, 5, 6, "IVH", 0.8)]
