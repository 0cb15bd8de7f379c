import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _support import write_jsonl
from siteguard.detection import BoundingBox, ClassLabel, Detection, GroundTruth
from siteguard.evaluation import (
    EvalConfig,
    accuracy,
    confusion_matrix,
    evaluate_dataset,
    format_report,
    iou,
    load_predictions,
    match_detections,
)


def det(label, box, conf):
    return Detection(label=label, box=BoundingBox(*box), confidence=conf)


def gt(label, box):
    return GroundTruth(label=label, box=BoundingBox(*box))


def boxes_strategy():
    return st.tuples(
        st.floats(min_value=0, max_value=500),
        st.floats(min_value=0, max_value=500),
        st.floats(min_value=1, max_value=400),
        st.floats(min_value=1, max_value=400),
    ).map(lambda t: BoundingBox(t[0], t[1], t[0] + t[2], t[1] + t[3]))


class TestIou:
    def test_identical(self):
        box = BoundingBox(3, 4, 20, 30)
        assert iou(box, box) == 1.0

    def test_disjoint(self):
        assert iou(BoundingBox(0, 0, 10, 10), BoundingBox(20, 20, 30, 30)) == 0.0

    def test_half_overlap_value(self):
        # 50 px intersection over 150 px union.
        value = iou(BoundingBox(0, 0, 10, 10), BoundingBox(5, 0, 15, 10))
        assert value == pytest.approx(1 / 3, abs=1e-12)

    def test_pixel_count_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            ax0, ay0 = rng.integers(0, 30, 2)
            bx0, by0 = rng.integers(0, 30, 2)
            a = BoundingBox(ax0, ay0, ax0 + rng.integers(1, 20), ay0 + rng.integers(1, 20))
            b = BoundingBox(bx0, by0, bx0 + rng.integers(1, 20), by0 + rng.integers(1, 20))
            grid = np.zeros((60, 60), dtype=int)
            ga = grid.copy()
            ga[int(a.ymin):int(a.ymax), int(a.xmin):int(a.xmax)] = 1
            gb = grid.copy()
            gb[int(b.ymin):int(b.ymax), int(b.xmin):int(b.xmax)] = 1
            inter = int(np.sum(ga & gb))
            union = int(np.sum(ga | gb))
            assert iou(a, b) == pytest.approx(inter / union, abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(a=boxes_strategy(), b=boxes_strategy())
    def test_symmetry(self, a, b):
        assert iou(a, b) == iou(b, a)

    @settings(max_examples=30, deadline=None)
    @given(a=boxes_strategy())
    def test_self_iou_is_one(self, a):
        assert iou(a, a) == 1.0


def brute_force_match(preds, gts, cfg):
    """Reference best-first assignment: walk predictions by descending
    confidence, scanning all remaining ground truths exhaustively."""
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].confidence, i))
    available = list(range(len(gts)))
    pairs = []
    for pi in order:
        scored = [
            (gi, iou(preds[pi].box, gts[gi].box))
            for gi in available
            if iou(preds[pi].box, gts[gi].box) >= cfg.iou_threshold
        ]
        if not scored:
            continue
        best_iou = max(s[1] for s in scored)
        gi = min(g for g, s in scored if s == best_iou)
        available.remove(gi)
        pairs.append((pi, gi, best_iou))
    return sorted(pairs)


class TestMatching:
    def test_exact_match(self):
        gts = [gt(ClassLabel.WITH_MASK, (0, 0, 10, 10))]
        preds = [det(ClassLabel.WITH_MASK, (0, 0, 10, 10), 0.9)]
        result = match_detections(preds, gts)
        assert result.pairs == ((0, 0, 1.0),)
        assert result.unmatched_predictions == ()
        assert result.unmatched_ground_truths == ()

    def test_greedy_prefers_higher_confidence(self):
        gts = [gt(ClassLabel.WITH_MASK, (0, 0, 10, 10))]
        preds = [
            det(ClassLabel.WITH_MASK, (0, 0, 10, 10), 0.6),
            det(ClassLabel.WITH_MASK, (1, 0, 11, 10), 0.9),
        ]
        result = match_detections(preds, gts)
        assert result.pairs[0][0] == 1
        assert result.unmatched_predictions == (0,)

    def test_labels_not_required_to_match(self):
        gts = [gt(ClassLabel.WITH_MASK, (0, 0, 10, 10))]
        preds = [det(ClassLabel.WITHOUT_MASK, (0, 0, 10, 10), 0.9)]
        result = match_detections(preds, gts)
        assert len(result.pairs) == 1

    def test_matches_brute_force_on_small_instances(self):
        rng = np.random.default_rng(13)
        cfg = EvalConfig()
        labels = list(ClassLabel)
        for _ in range(100):
            n_preds, n_gts = rng.integers(0, 6), rng.integers(0, 6)
            gts = [
                gt(labels[rng.integers(1, 4)],
                   (x, y, x + rng.integers(5, 30), y + rng.integers(5, 30)))
                for x, y in rng.integers(0, 60, (n_gts, 2))
            ]
            preds = [
                det(labels[rng.integers(0, 4)],
                    (x, y, x + rng.integers(5, 30), y + rng.integers(5, 30)),
                    float(rng.integers(1, 100)) / 100)
                for x, y in rng.integers(0, 60, (n_preds, 2))
            ]
            result = match_detections(preds, gts, cfg)
            assert list(result.pairs) == brute_force_match(preds, gts, cfg)

    def test_never_exceeds_smaller_side(self):
        rng = np.random.default_rng(21)
        for _ in range(30):
            gts = [gt(ClassLabel.WITH_MASK, (x, 0, x + 10, 10)) for x in rng.integers(0, 90, 4)]
            preds = [
                det(ClassLabel.WITH_MASK, (x, 0, x + 10, 10), 0.5)
                for x in rng.integers(0, 90, 7)
            ]
            result = match_detections(preds, gts)
            assert len(result.pairs) <= min(len(preds), len(gts))


class TestAccuracy:
    def ten_gts_nine_correct(self):
        gts = [gt(ClassLabel.WITH_MASK, (i * 20, 0, i * 20 + 10, 10)) for i in range(10)]
        preds = [det(g.label, g.box.as_list(), 0.95) for g in gts[:9]]
        preds.append(det(ClassLabel.WITHOUT_MASK, gts[9].box.as_list(), 0.95))
        return preds, gts

    def test_nine_of_ten(self):
        preds, gts = self.ten_gts_nine_correct()
        result = match_detections(preds, gts)
        assert accuracy(result, preds, gts) == 0.9

    def test_confidence_floor_is_inclusive_080(self):
        gts = [gt(ClassLabel.WITH_MASK, (0, 0, 10, 10))]
        below = [det(ClassLabel.WITH_MASK, (0, 0, 10, 10), 0.79)]
        at = [det(ClassLabel.WITH_MASK, (0, 0, 10, 10), 0.80)]
        assert accuracy(match_detections(below, gts), below, gts) == 0.0
        assert accuracy(match_detections(at, gts), at, gts) == 1.0

    def test_vacuous_accuracy(self):
        assert accuracy(match_detections([], []), [], []) == 1.0

    def test_monotone_in_floor(self):
        preds, gts = self.ten_gts_nine_correct()
        result = match_detections(preds, gts)
        values = [
            accuracy(result, preds, gts, EvalConfig(confidence_floor=f))
            for f in (0.99, 0.9, 0.8, 0.5, 0.0)
        ]
        assert values == sorted(values)

    def test_false_positives_ignored(self):
        gts = [gt(ClassLabel.WITH_MASK, (0, 0, 10, 10))]
        preds = [
            det(ClassLabel.WITH_MASK, (0, 0, 10, 10), 0.95),
            det(ClassLabel.WITHOUT_MASK, (200, 200, 220, 220), 0.99),
        ]
        result = match_detections(preds, gts)
        assert accuracy(result, preds, gts) == 1.0


class TestConfusionMatrix:
    def test_all_correct_is_diagonal(self):
        gts = [gt(ClassLabel.WITH_MASK, (0, 0, 10, 10)),
               gt(ClassLabel.WITHOUT_MASK, (20, 0, 30, 10))]
        preds = [det(g.label, g.box.as_list(), 0.9) for g in gts]
        out = confusion_matrix(match_detections(preds, gts), preds, gts)
        matrix = np.asarray(out["matrix"])
        assert matrix.sum() == 2
        assert matrix[1][1] == 1 and matrix[2][2] == 1

    def test_off_diagonal(self):
        gts = [gt(ClassLabel.WITH_MASK, (0, 0, 10, 10))]
        preds = [det(ClassLabel.WITHOUT_MASK, (0, 0, 10, 10), 0.9)]
        out = confusion_matrix(match_detections(preds, gts), preds, gts)
        assert out["matrix"][1][2] == 1

    def test_hand_filled_six_item_fixture(self):
        gts = [
            gt(ClassLabel.WITH_MASK, (0, 0, 10, 10)),
            gt(ClassLabel.WITH_MASK, (20, 0, 30, 10)),
            gt(ClassLabel.WITHOUT_MASK, (40, 0, 50, 10)),
            gt(ClassLabel.MASK_WORN_INCORRECT, (60, 0, 70, 10)),
        ]
        preds = [
            det(ClassLabel.WITH_MASK, (0, 0, 10, 10), 0.9),        # correct
            det(ClassLabel.WITHOUT_MASK, (20, 0, 30, 10), 0.8),    # wrong label
            det(ClassLabel.WITHOUT_MASK, (40, 0, 50, 10), 0.7),    # correct
            # gt 3 unmatched; spurious prediction off to the side:
            det(ClassLabel.PERSON, (200, 0, 210, 10), 0.6),
        ]
        out = confusion_matrix(match_detections(preds, gts), preds, gts)
        matrix = np.asarray(out["matrix"])
        labels = out["labels"]
        wm, wom, inc = labels.index("with_mask"), labels.index("without_mask"), labels.index("mask_worn_incorrect")
        assert matrix[wm][wm] == 1
        assert matrix[wm][wom] == 1
        assert matrix[wom][wom] == 1
        assert out["unmatched_ground_truths"]["mask_worn_incorrect"] == 1
        assert out["unmatched_predictions"]["person"] == 1
        # Row sums plus unmatched equal each label's GT count.
        for label, row in zip(labels, matrix):
            total = row.sum() + out["unmatched_ground_truths"][label]
            assert total == sum(1 for g in gts if g.label.value == label)


class TestDatasetEvaluation:
    def test_file_level_report(self, tmp_path):
        gts = {
            "img1": [gt(ClassLabel.WITH_MASK, (0, 0, 10, 10))],
            "img2": [gt(ClassLabel.WITHOUT_MASK, (0, 0, 10, 10))],
        }
        records = [
            {"image": "img1", "detections": [
                {"label": "with_mask", "box": [0, 0, 10, 10], "conf": 0.9}
            ]},
            {"image": "img2", "detections": [
                {"label": "with_mask", "box": [0, 0, 10, 10], "conf": 0.9}
            ]},
        ]
        preds_path = write_jsonl(tmp_path / "preds.jsonl", records)
        report = evaluate_dataset(load_predictions(preds_path), gts)
        assert report["accuracy"] == 0.5
        assert report["ground_truths"] == 2
        text = format_report(report)
        assert "img1" in text and "overall" in text and "confusion" in text
