import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from usadapt.metrics import (DetectionCounts, MetricReport, aggregate, boundary, detect_classify, dice_ce_loss,
                             evaluate_pair, overlap_metrics, surface_distances)
from usadapt.tensor import Tensor, float64_mode, grad_check


# ---- brute-force oracles ---------------------------------------------------------

def boundary_loop(mask):
    h, w = mask.shape
    out = []
    for i in range(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                a, b = i + di, j + dj
                if not (0 <= a < h and 0 <= b < w) or not mask[a, b]:
                    out.append((i, j))
                    break
    return out


def percentile_linear(values, q):
    v = sorted(values)
    pos = q / 100.0 * (len(v) - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (pos - lo) * (v[hi] - v[lo])


def distances_bruteforce(p, g):
    bp, bg = boundary_loop(p), boundary_loop(g)
    dist = []
    for src, dst in ((bp, bg), (bg, bp)):
        for a in src:
            dist.append(min(math.hypot(a[0] - b[0], a[1] - b[1]) for b in dst))
    return max(dist), percentile_linear(dist, 95), sum(dist) / len(dist)


def overlap_counting(p, g):
    inter = union = sp = sg = 0
    for a, b in zip(p.ravel(), g.ravel()):
        inter += a and b
        union += a or b
        sp += a
        sg += b
    if sp + sg == 0:
        return 1.0, 1.0
    return 2 * inter / (sp + sg), inter / union


def random_mask_pair(rng, size=16):
    kind = rng.integers(3)
    if kind == 0:
        p, g = rng.random((size, size)) < 0.3, rng.random((size, size)) < 0.3
    else:
        yy, xx = np.mgrid[:size, :size]
        c = rng.uniform(3, size - 3, size=4)
        r = rng.uniform(1.5, 6, size=2)
        p = (yy - c[0]) ** 2 + (xx - c[1]) ** 2 < r[0] ** 2
        g = (yy - c[2]) ** 2 + (xx - c[3]) ** 2 < r[1] ** 2
    return p, g


# ---- loss --------------------------------------------------------------------------

class TestDiceCE:
    def test_strongly_correct_logits(self):
        target = np.random.default_rng(0).integers(0, 3, size=(2, 6, 6))
        logits = 20.0 * np.eye(3)[target]
        assert dice_ce_loss(Tensor(logits), target).item() < 0.01

    def test_uniform_logits_closed_form(self):
        target = np.zeros((1, 4, 4), dtype=int)
        target[0, :2] = 1
        with float64_mode():
            loss = dice_ce_loss(Tensor(np.zeros((1, 4, 4, 2))), target).item()
        # probabilities are 1/2 everywhere, each class covers 8 of 16 pixels
        eps = 1e-5
        dice = (2 * 0.5 * 8 + eps) / (0.5 * 16 + 8 + eps)
        assert abs(loss - ((1 - dice) + math.log(2))) < 1e-12

    def test_ce_term_alone(self):
        target = np.array([[[0, 1], [1, 0]]])
        with float64_mode():
            ce = dice_ce_loss(Tensor(np.zeros((1, 2, 2, 2))), target, lambda_dice=0.0).item()
        assert abs(ce - math.log(2)) < 1e-12

    def test_grad_check(self):
        rng = np.random.default_rng(1)
        logits = Tensor(rng.normal(size=(1, 4, 4, 2)), requires_grad=True)
        target = rng.integers(0, 2, size=(1, 4, 4))
        assert grad_check(lambda: dice_ce_loss(logits, target), [logits]) < 1e-3

    @pytest.mark.parametrize("bad", [-1, 3])
    def test_out_of_range_labels(self, bad):
        target = np.zeros((1, 2, 2), dtype=int)
        target[0, 0, 0] = bad
        with pytest.raises(ValueError):
            dice_ce_loss(Tensor(np.zeros((1, 2, 2, 3))), target)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            dice_ce_loss(Tensor(np.zeros((1, 2, 2, 3))), np.zeros((1, 3, 3), dtype=int))


# ---- overlap -----------------------------------------------------------------------

class TestOverlap:
    def test_identical(self):
        lab = np.random.default_rng(0).integers(0, 3, size=(8, 8))
        dsc, iou, acc = overlap_metrics(lab, lab, 3)
        assert dsc == [1.0, 1.0] and iou == [1.0, 1.0] and acc == 1.0

    def test_disjoint(self):
        p = np.zeros((4, 4), dtype=int)
        g = np.zeros((4, 4), dtype=int)
        p[0, 0], g[3, 3] = 1, 1
        dsc, iou, _ = overlap_metrics(p, g, 2)
        assert dsc == [0.0] and iou == [0.0]

    def test_counting_example(self):
        p = np.zeros((4, 4), dtype=int)
        g = np.zeros((4, 4), dtype=int)
        p[0, :4] = 1
        g[0, 1:4] = 1
        g[1, :3] = 1
        dsc, iou, _ = overlap_metrics(p, g, 2)
        assert dsc[0] == pytest.approx(0.6, abs=1e-15)
        assert iou[0] == pytest.approx(3 / 7, abs=1e-15)

    def test_both_empty(self):
        z = np.zeros((3, 3), dtype=int)
        dsc, iou, _ = overlap_metrics(z, z, 3)
        assert dsc == [1.0, 1.0] and iou == [1.0, 1.0]

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_dice_iou_identity(self, seed):
        p, g = random_mask_pair(np.random.default_rng(seed))
        dsc, iou, _ = overlap_metrics(p.astype(int), g.astype(int), 2)
        assert dsc[0] >= iou[0]
        assert abs(dsc[0] - 2 * iou[0] / (1 + iou[0])) < 1e-12

    def test_matches_counting_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            p, g = random_mask_pair(rng)
            dsc, iou, acc = overlap_metrics(p.astype(int), g.astype(int), 2)
            assert (dsc[0], iou[0]) == overlap_counting(p, g)
            assert acc == sum(a == b for a, b in zip(p.ravel(), g.ravel())) / p.size


# ---- distances ---------------------------------------------------------------------

class TestSurfaceDistances:
    def test_identical_masks(self):
        m = np.zeros((8, 8), dtype=bool)
        m[2:6, 1:5] = True
        sd = surface_distances(m, m)
        assert sd.valid and sd.hd == sd.hd95 == sd.asd == 0.0

    def test_single_pixels(self):
        p = np.zeros((6, 6), dtype=bool)
        g = np.zeros((6, 6), dtype=bool)
        p[0, 0], g[3, 4] = True, True
        sd = surface_distances(p, g)
        assert sd.hd == sd.hd95 == sd.asd == 5.0

    def test_empty_is_invalid(self):
        m = np.ones((4, 4), dtype=bool)
        assert not surface_distances(m, np.zeros_like(m)).valid
        assert not surface_distances(np.zeros_like(m), m).valid

    def test_boundary_includes_image_edge(self):
        assert boundary(np.ones((3, 3), dtype=bool)).sum() == 8

    def test_boundary_matches_loop(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            m = rng.random((10, 10)) < 0.6
            assert set(zip(*np.nonzero(boundary(m)))) == set(boundary_loop(m))

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(11)
        checked = 0
        while checked < 60:
            p, g = random_mask_pair(rng)
            if not p.any() or not g.any():
                continue
            sd = surface_distances(p, g)
            hd, hd95, asd = distances_bruteforce(p, g)
            assert abs(sd.hd - hd) < 1e-9 and abs(sd.hd95 - hd95) < 1e-9 and abs(sd.asd - asd) < 1e-9
            checked += 1

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_symmetric_and_ordered(self, seed):
        p, g = random_mask_pair(np.random.default_rng(seed))
        if not p.any() or not g.any():
            return
        a, b = surface_distances(p, g), surface_distances(g, p)
        assert (a.hd, a.hd95, a.asd) == pytest.approx((b.hd, b.hd95, b.asd), abs=1e-12)
        assert a.hd >= a.hd95 >= 0 and a.asd >= 0


# ---- detection ---------------------------------------------------------------------

def classify_by_enumeration(p, g, threshold):
    has_p, has_g = bool(p.any()), bool(g.any())
    table = {(False, False): "TN", (True, False): "FP", (False, True): "FN"}
    if (has_p, has_g) in table:
        return table[(has_p, has_g)]
    inter = sum(1 for a, b in zip(p.ravel(), g.ravel()) if a and b)
    union = sum(1 for a, b in zip(p.ravel(), g.ravel()) if a or b)
    return "TP" if inter / union > threshold else "FN"


class TestDetection:
    def test_both_empty(self):
        z = np.zeros((4, 4), dtype=bool)
        assert detect_classify(z, z) == "TN"

    def test_gt_empty_pred_pixel(self):
        p = np.zeros((4, 4), dtype=bool)
        p[1, 1] = True
        assert detect_classify(p, np.zeros_like(p)) == "FP"

    def test_pred_empty(self):
        g = np.ones((4, 4), dtype=bool)
        assert detect_classify(np.zeros_like(g), g) == "FN"

    def test_threshold_boundary_is_fn(self):
        g = np.zeros((4, 4), dtype=bool)
        p = np.zeros((4, 4), dtype=bool)
        g[0, :] = True
        p[0, 0] = True
        # IoU = 1/4 exactly
        assert detect_classify(p, g) == "FN"
        p[0, 1] = True
        assert detect_classify(p, g) == "TP"

    def test_exhaustive_strip(self):
        # every (pred, gt) pair on a 1x4 strip: 256 combinations
        for bits in itertools.product([False, True], repeat=8):
            p = np.array(bits[:4]).reshape(1, 4)
            g = np.array(bits[4:]).reshape(1, 4)
            assert detect_classify(p, g) == classify_by_enumeration(p, g, 0.25)

    def test_rates_from_known_stream(self):
        counts = DetectionCounts()
        for outcome in ["TP"] * 6 + ["FN"] * 2 + ["TN"] * 3 + ["FP"] * 1:
            counts.add(outcome)
        assert (counts.tp, counts.fn, counts.tn, counts.fp) == (6, 2, 3, 1)
        assert counts.precision == 6 / 7
        assert counts.recall == 6 / 8
        assert counts.specificity == 3 / 4
        assert counts.f1 == pytest.approx(2 * (6 / 7) * (6 / 8) / (6 / 7 + 6 / 8), abs=1e-15)

    def test_zero_denominators(self):
        c = DetectionCounts()
        assert c.precision == c.recall == c.specificity == c.f1 == 0.0


class TestReport:
    def test_evaluate_pair_counts_classes(self):
        lab = np.zeros((8, 8), dtype=int)
        lab[1:4, 1:4] = 1
        rep = evaluate_pair(lab, lab, 3)
        assert rep.detection.total == 2
        assert rep.detection.tp == 1 and rep.detection.tn == 1
        assert rep.distance_valid == [True, False]
        assert rep.mean_hd == 0.0

    def test_aggregate(self):
        rng = np.random.default_rng(4)
        reps = [evaluate_pair(rng.integers(0, 3, (8, 8)), rng.integers(0, 3, (8, 8)), 3) for _ in range(5)]
        agg = aggregate(reps)
        assert agg.num_images == 5 and agg.detection.total == 10
        assert agg.dsc[0] == pytest.approx(np.mean([r.dsc[0] for r in reps]))
        for d, i in zip(agg.dsc, agg.iou):
            assert 0 <= i <= d <= 1

    def test_serialization(self):
        lab = np.zeros((6, 6), dtype=int)
        lab[2:4, 2:4] = 1
        rep = evaluate_pair(lab, lab, 2)
        d = json.loads(rep.to_json())
        assert d["summary"]["dsc"] == 1.0 and d["summary"]["hd"] == 0.0
        lines = rep.to_csv().strip().splitlines()
        assert len(lines) == 2 and lines[0].startswith("dsc,")

    def test_invalid_distance_serializes_as_null(self):
        z = np.zeros((4, 4), dtype=int)
        d = MetricReport([1.0], [1.0], 1.0, [float("nan")], [float("nan")], [float("nan")], [False]).to_dict()
        assert d["summary"]["hd"] is None and d["hd"] == [None]
        assert evaluate_pair(z, z, 2).summary()["hd95"] is None
