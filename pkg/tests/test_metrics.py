"""
Tests of the segmentation metrics and report writers
"""

import csv

import numpy as np
import pytest

from segsemi.errors import ShapeError
from segsemi.metrics import (REPORT_COLUMNS, Segment, edit_score, f1_at, f1_counts, format_report, iod,
                             levenshtein, mof, score_videos, segment_iou, segments_from_labels,
                             write_reports_csv)

BG = 0


@pytest.mark.unit
class TestSegments:
    """Run-length segmentation"""

    def test_segments_from_labels(self):
        """Test inclusive segment bounds"""
        assert segments_from_labels([2, 2, 1, 1, 1, 2]) == [Segment(2, 0, 1), Segment(1, 2, 4), Segment(2, 5, 5)]
        assert segments_from_labels([]) == []

    def test_iou(self):
        """Test overlap over union"""
        assert segment_iou(Segment(1, 0, 5), Segment(1, 3, 8)) == pytest.approx(1 / 3)
        assert segment_iou(Segment(1, 0, 2), Segment(1, 5, 8)) == 0.0


@pytest.mark.unit
class TestMof:
    """Frame accuracy"""

    def test_identical(self):
        """Test 100 for equal sequences"""
        assert mof([1, 2, 3], [1, 2, 3]) == 100.0

    def test_disjoint(self):
        """Test 0 when no frame agrees"""
        assert mof([0, 0, 0], [1, 1, 1]) == 0.0

    def test_seven_of_ten(self):
        """Test 7 matching frames out of 10"""
        truth = [1] * 10
        pred = [1] * 7 + [2] * 3
        assert mof(pred, truth) == pytest.approx(70.0)

    def test_background_frames_excluded(self):
        """Test MoF-BG skips frames whose truth is background"""
        truth = [BG, BG, 1, 1]
        pred = [1, 1, 1, 2]
        assert mof(pred, truth) == pytest.approx(25.0)
        assert mof(pred, truth, ignore_background=True, background_id=BG) == pytest.approx(50.0)

    def test_length_mismatch(self):
        """Test that unequal lengths are rejected"""
        with pytest.raises(ShapeError):
            mof([1, 2], [1, 2, 3])


@pytest.mark.unit
class TestEditScore:
    """Segmental edit score"""

    def test_levenshtein(self):
        """Test the DP distance"""
        assert levenshtein([1, 2, 3], [1, 3]) == 1
        assert levenshtein([], [1, 2]) == 2
        assert levenshtein([1, 2, 3], [3, 2, 1]) == 2

    def test_identical(self):
        """Test 100 for the same segment classes"""
        segments = segments_from_labels([1, 1, 2, 3])
        assert edit_score(segments, segments) == 100.0

    def test_empty_prediction(self):
        """Test 0 against a non-empty truth"""
        assert edit_score([], segments_from_labels([1, 2])) == 0.0

    def test_one_deletion(self):
        """Test [a,b,c] vs [a,c] = 66.67"""
        pred = segments_from_labels([1, 1, 2, 3, 3])
        truth = segments_from_labels([1, 1, 3, 3, 3])
        assert edit_score(pred, truth) == pytest.approx(100 * (1 - 1 / 3))
        assert edit_score(truth, pred) == edit_score(pred, truth)


@pytest.mark.unit
class TestF1:
    """Segmental F1 at IoU thresholds"""

    def test_exact(self):
        """Test 100 at every threshold for an exact segmentation"""
        segments = segments_from_labels([1, 1, 2, 2, 2, 3])
        for k in (0.1, 0.25, 0.5):
            assert f1_at(segments, segments, k) == 100.0

    def test_no_class_overlap(self):
        """Test 0 when the classes never agree"""
        assert f1_at(segments_from_labels([1, 1, 1]), segments_from_labels([2, 2, 2]), 0.1) == 0.0

    def test_one_third_iou(self):
        """Test a prediction covering half of an equal-length truth segment"""
        pred = [Segment(1, 3, 8)]
        truth = [Segment(1, 0, 5)]
        assert f1_counts(pred, truth, 0.25) == (1, 0, 0)
        assert f1_counts(pred, truth, 0.5) == (0, 1, 1)
        assert f1_at(pred, truth, 0.25) == 100.0
        assert f1_at(pred, truth, 0.5) == 0.0

    def test_one_to_one_matching(self):
        """Test that two predictions cannot both match one truth segment"""
        pred = [Segment(1, 0, 4), Segment(1, 5, 9)]
        truth = [Segment(1, 0, 9)]
        assert f1_counts(pred, truth, 0.1) == (1, 1, 0)

    def test_background_excluded(self):
        """Test that background segments count on neither side"""
        pred = segments_from_labels([BG, BG, 1, 1])
        truth = segments_from_labels([1, 1, 1, 1])
        assert f1_counts(pred, truth, 0.5, background_id=BG) == (1, 0, 0)

    def test_threshold_range(self):
        """Test that the threshold must lie strictly inside (0, 1)"""
        with pytest.raises(ValueError):
            f1_at([], [], 1.0)


@pytest.mark.unit
class TestIoD:
    """Intersection over detection"""

    def test_perfect(self):
        """Test 100 for a perfect prediction"""
        labels = [BG, 1, 1, 2, 2, BG]
        assert iod(labels, labels, BG) == 100.0

    def test_no_detection(self):
        """Test 0 when no same-class prediction overlaps"""
        assert iod([BG] * 4, [1] * 4, BG) == 0.0

    def test_half_detection(self):
        """Test truth on frames 0-9, prediction on frames 5-14"""
        truth = [1] * 10 + [BG] * 10
        pred = [BG] * 5 + [1] * 10 + [BG] * 5
        assert iod(pred, truth, BG) == pytest.approx(50.0)

    def test_no_truth_segments(self):
        """Test the all-background truth"""
        assert iod([BG] * 3, [BG] * 3, BG) == 100.0
        assert iod([BG, 1, BG], [BG] * 3, BG) == 0.0


@pytest.mark.unit
class TestScoreVideos:
    """Aggregation over videos"""

    def test_aggregation(self):
        """Test micro MoF, macro Edit and summed F1 counts"""
        truths = [np.array([1, 1, 1, 1]), np.array([2, 2, 3, 3, 3, 3, 3, 3])]
        preds = [np.array([1, 1, 1, 1]), np.array([2, 2, 2, 2, 3, 3, 3, 3])]
        report = score_videos(preds, truths, mode="collected")
        assert report.videos == 2
        assert report.mof == pytest.approx(100 * 10 / 12)
        assert report.edit == pytest.approx(100.0)
        assert report.f1_10 == pytest.approx(100.0)
        assert report.mof_bg is None and report.iod is None

    def test_background_metrics(self):
        """Test that MoF-BG and IoD appear when a background id is set"""
        labels = np.array([BG, 1, 1, BG])
        report = score_videos([labels], [labels], background_id=BG)
        assert report.mof_bg == 100.0
        assert report.iod == 100.0

    def test_count_mismatch(self):
        """Test one prediction per truth"""
        with pytest.raises(ShapeError):
            score_videos([np.array([1])], [])

    def test_reports(self, tmp_path):
        """Test CSV columns and the text report"""
        report = score_videos([np.array([1, 2])], [np.array([1, 1])])
        path = tmp_path / "report.csv"
        write_reports_csv([report], path)
        with path.open() as handle:
            rows = list(csv.DictReader(handle))
        assert list(rows[0]) == REPORT_COLUMNS
        assert rows[0]["mof"] == "50.0000"
        assert rows[0]["iod"] == ""
        assert "MoF" in format_report(report)


def reference_levenshtein(a, b):
    """Row-by-row DP over plain lists"""
    previous = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        current = [i]
        for j, y in enumerate(b, start=1):
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (x != y)))
        previous = current
    return previous[-1]


def naive_f1(pred, truth, threshold, background_id=None):
    """Quadratic matcher over frame sets"""
    pred = [s for s in pred if s.label != background_id]
    truth = [s for s in truth if s.label != background_id]
    used = set()
    tp = 0
    for p in pred:
        p_frames = set(range(p.start, p.end + 1))
        scores = []
        for j, t in enumerate(truth):
            if j in used or t.label != p.label:
                continue
            t_frames = set(range(t.start, t.end + 1))
            scores.append((len(p_frames & t_frames) / len(p_frames | t_frames), -j))
        if scores:
            iou, neg_j = max(scores)
            if iou > 0 and iou >= threshold:
                used.add(-neg_j)
                tp += 1
    fp, fn = len(pred) - tp, len(truth) - tp
    return 100.0 * 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 100.0


def naive_iod(pred, truth, background_id):
    """Interval arithmetic per truth segment"""
    pred_segments = [s for s in segments_from_labels(pred) if s.label != background_id]
    ratios = []
    for g in segments_from_labels(truth):
        if g.label == background_id:
            continue
        g_frames = set(range(g.start, g.end + 1))
        span = set()
        for p in pred_segments:
            p_frames = set(range(p.start, p.end + 1))
            if p.label == g.label and p_frames & g_frames:
                span |= p_frames
        ratios.append(len(span & g_frames) / len(span) if span else 0.0)
    return 100.0 * sum(ratios) / len(ratios) if ratios else None


@pytest.mark.unit
class TestMetricOracles:
    """Random instances against independent reference implementations"""

    @staticmethod
    def _instances(n=60):
        rng = np.random.default_rng(21)
        for _ in range(n):
            length = int(rng.integers(5, 40))
            truth = np.repeat(rng.integers(0, 4, size=6), rng.integers(1, 8, size=6))[:length]
            pred = np.repeat(rng.integers(0, 4, size=8), rng.integers(1, 6, size=8))
            pred = np.resize(pred, truth.size)
            yield pred, truth

    def test_edit_matches_reference(self):
        """Test exact equality with a list-based Levenshtein"""
        for pred, truth in self._instances():
            p = [s.label for s in segments_from_labels(pred)]
            t = [s.label for s in segments_from_labels(truth)]
            assert levenshtein(p, t) == reference_levenshtein(p, t)
            expected = 100.0 * (1.0 - reference_levenshtein(p, t) / max(len(p), len(t)))
            assert edit_score(segments_from_labels(pred), segments_from_labels(truth)) == expected

    @pytest.mark.parametrize("threshold", [0.1, 0.25, 0.5])
    def test_f1_matches_naive_matcher(self, threshold):
        """Test exact equality with a frame-set matcher"""
        for pred, truth in self._instances():
            ps, ts = segments_from_labels(pred), segments_from_labels(truth)
            assert f1_at(ps, ts, threshold, background_id=BG) == naive_f1(ps, ts, threshold, BG)

    def test_iod_matches_interval_arithmetic(self):
        """Test exact equality with frame-set intersection over detection"""
        for pred, truth in self._instances():
            expected = naive_iod(pred, truth, BG)
            if expected is None:
                continue
            assert iod(pred, truth, BG) == pytest.approx(expected, abs=1e-12)
