"""
Segmentation metrics: frame accuracy (MoF, MoF-BG), segmental edit score,
segmental F1 at IoU thresholds and intersection over detection.

Aggregation over a set of videos: MoF is micro-averaged over all frames,
Edit and IoD are averaged per video, F1 is computed from summed TP/FP/FN.
"""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ShapeError
from .schemas import MetricReport

F1_THRESHOLDS = (0.10, 0.25, 0.50)


@dataclass(frozen=True)
class Segment:
    label: int
    start: int
    end: int  # inclusive

    @property
    def length(self) -> int:
        return self.end - self.start + 1


def segments_from_labels(labels: Sequence[int]) -> List[Segment]:
    labels = np.asarray(labels).reshape(-1)
    if labels.size == 0:
        return []
    change = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change - 1, [labels.size - 1]))
    return [Segment(int(labels[s]), int(s), int(e)) for s, e in zip(starts, ends)]


def _drop_background(segments: Sequence[Segment], background_id: Optional[int]) -> List[Segment]:
    if background_id is None:
        return list(segments)
    return [s for s in segments if s.label != background_id]


def _check_lengths(pred: np.ndarray, truth: np.ndarray) -> None:
    if pred.shape != truth.shape:
        raise ShapeError("Prediction and ground truth differ in length", pred=pred.shape, truth=truth.shape)


def frame_counts(pred: Sequence[int], truth: Sequence[int],
                 background_id: Optional[int] = None) -> Tuple[int, int]:
    """(correct, counted) frames; frames whose truth is background are skipped when background_id is set"""
    pred, truth = np.asarray(pred).reshape(-1), np.asarray(truth).reshape(-1)
    _check_lengths(pred, truth)
    keep = np.ones(truth.shape, dtype=bool) if background_id is None else truth != background_id
    return int(np.sum(pred[keep] == truth[keep])), int(np.sum(keep))


def mof(pred: Sequence[int], truth: Sequence[int], ignore_background: bool = False,
        background_id: Optional[int] = None) -> float:
    """
    Mean over frames, in percent

    Args:
        pred (Sequence[int]): Predicted frame labels
        truth (Sequence[int]): Ground-truth frame labels of the same length
        ignore_background (bool): Skip frames whose truth is ``background_id``
        background_id (Optional[int]): Background class

    Returns:
        float: Share of correct frames times 100, 100 when nothing is counted
    """
    correct, counted = frame_counts(pred, truth, background_id if ignore_background else None)
    return 100.0 * correct / counted if counted else 100.0


def levenshtein(a: Sequence[int], b: Sequence[int]) -> int:
    rows, cols = len(a) + 1, len(b) + 1
    dist = np.zeros((rows, cols), dtype=np.int64)
    dist[:, 0] = np.arange(rows)
    dist[0, :] = np.arange(cols)
    for i in range(1, rows):
        for j in range(1, cols):
            substitution = 0 if a[i - 1] == b[j - 1] else 1
            dist[i, j] = min(dist[i - 1, j] + 1, dist[i, j - 1] + 1, dist[i - 1, j - 1] + substitution)
    return int(dist[-1, -1])


def edit_score(pred_segments: Sequence[Segment], truth_segments: Sequence[Segment]) -> float:
    """100·(1 − Levenshtein/max length) over the segment class sequences"""
    p = [s.label for s in pred_segments]
    t = [s.label for s in truth_segments]
    longest = max(len(p), len(t))
    if longest == 0:
        return 100.0
    return 100.0 * (1.0 - levenshtein(p, t) / longest)


def segment_iou(a: Segment, b: Segment) -> float:
    inter = max(0, min(a.end, b.end) - max(a.start, b.start) + 1)
    union = a.length + b.length - inter
    return inter / union if union > 0 else 0.0


def f1_counts(pred_segments: Sequence[Segment], truth_segments: Sequence[Segment], threshold: float,
              background_id: Optional[int] = None) -> Tuple[int, int, int]:
    """
    Greedy one-to-one matching in prediction order: a predicted segment is a
    true positive when its best same-class, still unmatched truth segment
    reaches the IoU threshold.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    pred = _drop_background(pred_segments, background_id)
    truth = _drop_background(truth_segments, background_id)
    matched = [False] * len(truth)
    tp = fp = 0
    for p in pred:
        best, best_iou = -1, 0.0
        for j, t in enumerate(truth):
            if matched[j] or t.label != p.label:
                continue
            iou = segment_iou(p, t)
            if iou > best_iou:
                best, best_iou = j, iou
        if best >= 0 and best_iou >= threshold:
            matched[best] = True
            tp += 1
        else:
            fp += 1
    return tp, fp, len(truth) - tp


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    denominator = 2 * tp + fp + fn
    return 100.0 * 2 * tp / denominator if denominator else 100.0


def f1_at(pred_segments: Sequence[Segment], truth_segments: Sequence[Segment], threshold: float,
          background_id: Optional[int] = None) -> float:
    """F1 in percent, a prediction matching at most one truth segment of its class with IoU ≥ threshold"""
    return f1_from_counts(*f1_counts(pred_segments, truth_segments, threshold, background_id))


def iod(pred: Sequence[int], truth: Sequence[int], background_id: Optional[int] = None) -> float:
    """
    Mean over non-background truth segments of |same-class predicted frames
    inside the segment| / |detection span|, the span being the union of the
    same-class predicted segments that overlap it.
    """
    pred, truth = np.asarray(pred).reshape(-1), np.asarray(truth).reshape(-1)
    _check_lengths(pred, truth)
    truth_segments = _drop_background(segments_from_labels(truth), background_id)
    pred_segments = _drop_background(segments_from_labels(pred), background_id)
    if not truth_segments:
        return 100.0 if not pred_segments else 0.0

    ratios = []
    for g in truth_segments:
        detections = [p for p in pred_segments
                      if p.label == g.label and p.start <= g.end and p.end >= g.start]
        if not detections:
            ratios.append(0.0)
            continue
        span = sum(p.length for p in detections)
        inter = int(np.sum(pred[g.start:g.end + 1] == g.label))
        ratios.append(inter / span)
    return 100.0 * float(np.mean(ratios))


def score_videos(predictions: Sequence[Sequence[int]], truths: Sequence[Sequence[int]], mode: str = "collected",
                 background_id: Optional[int] = None) -> MetricReport:
    """Aggregate every metric over a set of videos"""
    if len(predictions) != len(truths):
        raise ShapeError("One prediction per video is required", predictions=len(predictions), truths=len(truths))
    correct = counted = correct_bg = counted_bg = 0
    edits: List[float] = []
    iods: List[float] = []
    counts = {k: np.zeros(3, dtype=np.int64) for k in F1_THRESHOLDS}

    for pred, truth in zip(predictions, truths):
        c, n = frame_counts(pred, truth)
        correct, counted = correct + c, counted + n
        pred_segments = segments_from_labels(pred)
        truth_segments = segments_from_labels(truth)
        edits.append(edit_score(pred_segments, truth_segments))
        for k in F1_THRESHOLDS:
            counts[k] += f1_counts(pred_segments, truth_segments, k, background_id)
        if background_id is not None:
            c, n = frame_counts(pred, truth, background_id)
            correct_bg, counted_bg = correct_bg + c, counted_bg + n
            iods.append(iod(pred, truth, background_id))

    def percent(hits: int, total: int) -> float:
        return 100.0 * hits / total if total else 100.0

    f1 = {k: f1_from_counts(*(int(x) for x in counts[k])) for k in F1_THRESHOLDS}
    return MetricReport(
        mode=mode,
        videos=len(predictions),
        mof=percent(correct, counted),
        mof_bg=percent(correct_bg, counted_bg) if background_id is not None else None,
        edit=float(np.mean(edits)) if edits else 100.0,
        f1_10=f1[0.10],
        f1_25=f1[0.25],
        f1_50=f1[0.50],
        iod=float(np.mean(iods)) if iods else None,
    )


REPORT_COLUMNS = ["mode", "videos", "f1_10", "f1_25", "f1_50", "edit", "mof", "mof_bg", "iod"]


def write_reports_csv(reports: Iterable[MetricReport], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for report in reports:
            row: Dict[str, object] = report.as_row()
            writer.writerow({k: format_cell(row.get(k)) for k in REPORT_COLUMNS})


def format_cell(value: object) -> object:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.4f}"
    return value


def format_report(report: MetricReport) -> str:
    lines = [f"[{report.mode}] videos={report.videos}",
             "  (MoF micro over frames; Edit and IoD macro per video; F1 from summed segment counts)",
             f"  F1@10 {report.f1_10:6.2f}  F1@25 {report.f1_25:6.2f}  F1@50 {report.f1_50:6.2f}",
             f"  Edit  {report.edit:6.2f}  MoF   {report.mof:6.2f}"]
    if report.mof_bg is not None:
        lines.append(f"  MoF-BG {report.mof_bg:6.2f}  IoD  {report.iod:6.2f}")
    return "\n".join(lines)
