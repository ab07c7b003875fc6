"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion
lines. The reproduction harness at the end is conditional on user-supplied
data and weights (see the environment variables it names) and is skipped
otherwise.
"""

import json
import os
import time

import numpy as np
import pytest
from click.testing import CliRunner
from scipy import ndimage

from ichseg.cli import main as cli_main
from ichseg.ensemble import majority_vote
from ichseg.metrics import dice, iou, seg_detection_rule
from ichseg.prompts import (
    PerturbSpec,
    cluster_roi,
    perturb_bbox,
    select_lesion_cluster,
)
from ichseg.skeleton import skeletonize
from ichseg.stats import paired_ttest, roc_auc
from ichseg.windowing import CtSlice, WindowSpec, apply_window, default_window_specs, make_composite

from test_skeleton import random_blob
from test_stats import brute_force_auc, oracle_t_p


def test_windowing_properties_10k_per_window():
    start = time.perf_counter()
    rng = np.random.default_rng(100)
    for spec in default_window_specs():
        hu = rng.uniform(-3000, 5000, size=10_000)
        ct = CtSlice(pixels=hu.reshape(100, 100), patient_id="p", slice_index=0)
        out = apply_window(ct, spec).ravel()
        # Clamp totality
        assert (out >= 0.0).all() and (out <= 1.0).all()
        # Monotonicity
        order = np.argsort(hu)
        assert (np.diff(out[order]) >= 0).all()
        # Endpoints
        edge = CtSlice(pixels=np.array([[spec.low, spec.level, spec.high]]),
                       patient_id="p", slice_index=0)
        assert np.allclose(apply_window(edge, spec), [[0.0, 0.5, 1.0]])
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0, f"windowing suite took {elapsed:.2f}s"
    print(f"\nPASS: windowing properties (10k HU x 3 windows, {elapsed:.3f}s)")


def test_perturbation_containment_and_determinism_1000():
    rng = np.random.default_rng(101)
    for _ in range(1000):
        w, h = int(rng.integers(32, 256)), int(rng.integers(32, 256))
        x0 = int(rng.integers(4, w - 8))
        y0 = int(rng.integers(4, h - 8))
        x1 = int(rng.integers(x0 + 1, min(w - 4, x0 + 20)))
        y1 = int(rng.integers(y0 + 1, min(h - 4, y0 + 20)))
        seed = int(rng.integers(0, 2**32))
        spec = PerturbSpec(count=3, seed=seed)
        perturbed = [tuple(b) for b in perturb_bbox((x0, y0, x1, y1), spec, (w, h))]
        again = [tuple(b) for b in perturb_bbox((x0, y0, x1, y1), spec, (w, h))]
        assert perturbed == again  # exact determinism per seed
        for px0, py0, px1, py1 in perturbed:
            # Containment (box is >= 4 px from every edge)
            assert px0 <= x0 and py0 <= y0 and px1 >= x1 and py1 >= y1
            for growth in (x0 - px0, y0 - py0, px1 - x1, py1 - y1):
                assert 1 <= growth <= 4
    print("PASS: perturbation containment/growth/determinism (1000 boxes)")


def _random_four_region_roi(rng):
    size = int(rng.integers(6, 9))
    cy = int(rng.integers(2, size - 2))
    cx = int(rng.integers(2, size - 2))
    hu = np.empty((size, size))
    truth = np.empty((size, size), dtype=int)
    bands = [
        float(rng.uniform(-800, -400)),   # dark background
        float(rng.uniform(10, 40)),       # healthy brain
        float(rng.uniform(60, 100)),      # lesion
        float(rng.uniform(2200, 3000)),   # bone (saturates the bone window)
    ]
    assignment = rng.permutation(4)
    quadrants = [(slice(0, cy), slice(0, cx)), (slice(0, cy), slice(cx, size)),
                 (slice(cy, size), slice(0, cx)), (slice(cy, size), slice(cx, size))]
    for q, (sy, sx) in enumerate(quadrants):
        region = int(assignment[q])
        hu[sy, sx] = bands[region]
        truth[sy, sx] = region
    return hu, truth, size


def test_clustering_oracle_200_rois():
    rng = np.random.default_rng(102)
    recovered = 0
    trials = 200
    for t in range(trials):
        with_bone = t % 2 == 0
        hu, truth, size = _random_four_region_roi(rng)
        if not with_bone:
            hu[truth == 3] = float(rng.uniform(-300, -150))  # replace bone band
        ct = CtSlice(pixels=hu, patient_id="p", slice_index=0)
        composite = make_composite(ct)
        cmap = cluster_roi(composite, ct, (0, 0, size, size), k=4,
                           seed=int(rng.integers(0, 2**32)))
        # Partition recovery up to label permutation
        perm_ok = True
        mapping = {}
        for j in range(4):
            members = truth[cmap.labels == j]
            if len(members) == 0:
                continue
            vals = np.unique(members)
            if len(vals) != 1 or int(vals[0]) in mapping.values():
                perm_ok = False
                break
            mapping[j] = int(vals[0])
        if perm_ok and len(mapping) == 4:
            recovered += 1
            # Lesion selection must pick the planted lesion region (truth 2)
            lesion = select_lesion_cluster(cmap)
            assert mapping[lesion] == 2, (
                f"lesion selection failed (with_bone={with_bone})"
            )
    rate = recovered / trials
    assert rate >= 0.95, f"partition recovery rate {rate:.3f} < 0.95"
    print(f"PASS: clustering oracle (recovery {rate:.1%}, lesion selection 100%)")


def test_skeleton_suite_500_blobs():
    rng = np.random.default_rng(103)
    struct = np.ones((3, 3), dtype=int)
    for _ in range(500):
        mask = random_blob(rng, size=16)
        skel = skeletonize(mask)
        assert not (skel & ~mask).any()  # subset
        labels, n = ndimage.label(mask, structure=struct)
        for comp in range(1, n + 1):
            assert skel[labels == comp].any()  # component preservation
    golden = np.zeros((3, 11), dtype=bool)
    golden[1, 1:9] = True
    assert np.array_equal(skeletonize(np.ones((3, 11), dtype=bool)), golden)
    print("PASS: skeleton subset/component invariants (500 blobs) + 3x11 golden")


def test_voting_oracle_1000_stacks():
    rng = np.random.default_rng(104)
    for _ in range(1000):
        n = int(rng.integers(1, 11))
        shape = (int(rng.integers(1, 6)), int(rng.integers(1, 6)))
        samples = [rng.random(shape) < rng.random() for _ in range(n)]
        expected = np.stack(samples).sum(axis=0) > n / 2
        out = majority_vote(samples)
        assert np.array_equal(out, expected)
        # Permutation invariance
        perm = [samples[i] for i in rng.permutation(n)]
        assert np.array_equal(majority_vote(perm), out)
        # Idempotence
        m = samples[0]
        assert np.array_equal(majority_vote([m] * n), m)
    print("PASS: voting oracle (1000 stacks), idempotence, permutation invariance")


def test_metrics_oracle():
    rng = np.random.default_rng(105)
    for _ in range(500):
        n = int(rng.integers(2, 12))
        scores = np.round(rng.random(n) * 4) / 4  # ties likely
        labels = rng.random(n) < 0.5
        if labels.all() or not labels.any():
            labels[0] = not labels[0]
        assert abs(roc_auc(scores, labels) - brute_force_auc(scores, labels)) <= 1e-12
    for _ in range(1000):
        a = rng.random((6, 6)) < rng.random()
        b = rng.random((6, 6)) < rng.random()
        d, i = dice(a, b), iou(a, b)
        assert i <= d <= 2 * i / (1 + i) + 1e-12
    for _ in range(100):
        n = int(rng.integers(3, 20))
        x = rng.normal(0.5, 0.2, size=n)
        y = x - rng.normal(0.03, 0.1, size=n)
        r = paired_ttest(x, y)
        if not r.degenerate:
            assert abs(r.p - oracle_t_p(r.t, r.df)) <= 1e-6
    mask = np.zeros((8, 8), dtype=bool)
    mask.flat[:10] = True
    assert not seg_detection_rule(mask)
    mask.flat[10] = True
    assert seg_detection_rule(mask)
    print("PASS: metrics oracle (AUC 1e-12, dice/iou identity, t-test 1e-6, 10-px rule)")


def test_end_to_end_determinism_and_identity(fixture_dataset, tmp_path):
    runner = CliRunner()
    outputs = []
    for run_dir in (tmp_path / "runA", tmp_path / "runB"):
        os.environ["ICHSEG_OUTPUT_DIR"] = str(run_dir)
        try:
            res = runner.invoke(cli_main, ["run", str(fixture_dataset["config"])])
        finally:
            del os.environ["ICHSEG_OUTPUT_DIR"]
        assert res.exit_code == 0, res.output
        tree = {str(p.relative_to(run_dir)): p.read_bytes()
                for p in sorted(run_dir.rglob("*")) if p.is_file()}
        outputs.append(tree)
    assert outputs[0] == outputs[1], "same-seed runs are not byte-identical"
    report = json.loads(outputs[0]["evaluation.json"].decode())
    assert report["segmentation"]["dice_mean"] == 1.0
    assert report["detection"]["accuracy"] == 1.0
    print("PASS: end-to-end determinism (byte-identical) + identity-stub Dice/accuracy 1.0")


REPRO_VARS = ("ICHSEG_REPRO_CONFIG",)


@pytest.mark.skipif(
    not all(os.environ.get(v) for v in REPRO_VARS),
    reason="reproduction harness needs ICHSEG_REPRO_CONFIG pointing at a config "
           "with user-supplied PhysioNet data and exported detector/segmenter weights",
)
def test_conditional_reproduction_harness():
    runner = CliRunner()
    config_path = os.environ["ICHSEG_REPRO_CONFIG"]
    res = runner.invoke(cli_main, ["run", config_path, "--variant", "PointBBox"])
    assert res.exit_code in (0, 3), res.output
    out_dir = json.loads(open(config_path).read()).get("output_dir", "out")
    report = json.loads(
        (os.path.join(os.path.dirname(config_path), out_dir, "evaluation.json"))
    )
    dice_mean = report["segmentation"]["dice_mean"]
    acc = report["detection"]["accuracy"]
    # Sanity gates, reported but not pass/fail (weight-provenance variance).
    print(f"reproduction: Dice {dice_mean:.3f} (gate [0.50, 0.75] vs 0.629 ± 0.018), "
          f"accuracy {acc:.3f} (gate [0.85, 1.00] vs 0.933)")
    if not 0.50 <= dice_mean <= 0.75:
        print("WARNING: Dice outside the sanity gate")
    if not 0.85 <= acc <= 1.0:
        print("WARNING: accuracy outside the sanity gate")
    print("PASS: reproduction harness emitted Dice/IoU and detection tables")
