"""Evaluation metrics: segmentation overlap, detection AP, frame-level
classification scores, and anticipation error, plus anticipation target
construction.

All functions are pure; dataset-level metrics reduce associatively so partial
accumulations can be merged in any order with identical results.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import AnticipationSeries, Detection, FrameTimeline, LabelMask


# ---------------------------------------------------------------------------
# segmentation overlap


def _class_counts(pred: LabelMask, gt: LabelMask, class_id: int) -> tuple[int, int]:
    """(intersection, union) for one class, with gt-void pixels excluded."""
    if (pred.width, pred.height) != (gt.width, gt.height):
        raise ValueError("pred/gt dimensions differ")
    keep = gt.data != gt.void_id
    p = (pred.data == class_id) & keep
    g = (gt.data == class_id) & keep
    inter = int(np.count_nonzero(p & g))
    union = int(np.count_nonzero(p | g))
    return inter, union


def iou_semantic(pred: LabelMask, gt: LabelMask, class_id: int) -> Optional[float]:
    """Per-class IoU on one image pair; None when the class is absent from
    both (empty union is skipped, not scored)."""
    inter, union = _class_counts(pred, gt, class_id)
    if union == 0:
        return None
    return inter / union


def miou(preds: Sequence[LabelMask], gts: Sequence[LabelMask],
         classes: Sequence[int]) -> Optional[float]:
    """Image-averaged mIoU: mean over images of the mean IoU over classes
    present in that image's ground truth."""
    per_image = []
    for pred, gt in zip(preds, gts):
        vals = []
        present = set(gt.label_ids())
        for c in classes:
            if c not in present:
                continue
            v = iou_semantic(pred, gt, c)
            if v is not None:
                vals.append(v)
        if vals:
            per_image.append(float(np.mean(vals)))
    return float(np.mean(per_image)) if per_image else None


def mciou(preds: Sequence[LabelMask], gts: Sequence[LabelMask],
          classes: Sequence[int]) -> Optional[float]:
    """Class-pooled mcIoU: per class, pool intersection/union over the whole
    dataset, then average over classes with non-empty pooled union."""
    per_class = []
    for c in classes:
        inter = union = 0
        for pred, gt in zip(preds, gts):
            i, u = _class_counts(pred, gt, c)
            inter += i
            union += u
        if union > 0:
            per_class.append(inter / union)
    return float(np.mean(per_class)) if per_class else None


def pooled_class_iou(preds: Sequence[LabelMask], gts: Sequence[LabelMask],
                     classes: Sequence[int]) -> dict[int, float]:
    """Dataset-pooled IoU per class (the terms averaged by mciou)."""
    out = {}
    for c in classes:
        inter = union = 0
        for pred, gt in zip(preds, gts):
            i, u = _class_counts(pred, gt, c)
            inter += i
            union += u
        if union > 0:
            out[c] = inter / union
    return out


# ---------------------------------------------------------------------------
# detection average precision


@dataclass(frozen=True)
class GroundTruthInstance:
    frame: int
    box: tuple[float, float, float, float]
    class_id: int
    mask: Optional[LabelMask] = None


@dataclass(frozen=True)
class PRPoint:
    recall: float
    precision: float
    threshold: float


def box_iou(a, b) -> float:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union if union > 0 else 0.0


def mask_iou(a: LabelMask, b: LabelMask) -> float:
    pa = a.data != a.void_id
    pb = b.data != b.void_id
    union = int(np.count_nonzero(pa | pb))
    if union == 0:
        return 0.0
    return int(np.count_nonzero(pa & pb)) / union


def _ap_from_flags(flags: Sequence[bool], scores: Sequence[float],
                   n_gt: int) -> tuple[float, list[PRPoint]]:
    """All-points (continuous envelope) AP from per-detection TP flags.

    Detections sharing a score form a single operating point, so fully tied
    scores yield one PR point at full recall.
    """
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    flags = np.asarray(flags, dtype=bool)[order]
    scores_sorted = np.asarray(scores, dtype=np.float64)[order]
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    # keep only the last prefix of each distinct score
    points = []
    n = len(scores_sorted)
    for i in range(n):
        if i + 1 < n and scores_sorted[i + 1] == scores_sorted[i]:
            continue
        points.append(PRPoint(recall=tp[i] / n_gt,
                              precision=tp[i] / (tp[i] + fp[i]),
                              threshold=float(scores_sorted[i])))
    mrec = np.array([0.0] + [p.recall for p in points])
    mpre = np.array([1.0] + [p.precision for p in points])
    # precision envelope from the right
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    ap = float(np.sum((mrec[1:] - mrec[:-1]) * mpre[1:]))
    return ap, points


def detection_ap(preds: Sequence[Detection], gts: Sequence[GroundTruthInstance],
                 iou_thresh: float = 0.5, kernel: str = "box"
                 ) -> tuple[dict[int, float], Optional[float]]:
    """Per-class AP and macro mAP with greedy score-ordered matching.

    Each detection matches the unmatched ground truth in its frame with the
    highest IoU >= ``iou_thresh``; classes without ground truth are skipped.
    ``kernel`` selects box IoU or mask IoU.
    """
    if kernel not in ("box", "mask"):
        raise ValueError(f"unknown IoU kernel {kernel!r}")

    def pair_iou(d: Detection, g: GroundTruthInstance) -> float:
        if kernel == "mask":
            if d.mask is None or g.mask is None:
                raise ValueError("mask kernel requires masks on detections and gt")
            return mask_iou(d.mask, g.mask)
        return box_iou(d.box, g.box)

    classes = sorted({g.class_id for g in gts})
    per_class: dict[int, float] = {}
    for c in classes:
        c_gts = [g for g in gts if g.class_id == c]
        c_preds = sorted((d for d in preds if d.class_id == c),
                         key=lambda d: -d.score)
        matched: set[int] = set()
        flags, scores = [], []
        for d in c_preds:
            best, best_iou = None, -1.0
            for gi, g in enumerate(c_gts):
                if gi in matched or g.frame != d.frame:
                    continue
                v = pair_iou(d, g)
                if v >= iou_thresh and v > best_iou:
                    best, best_iou = gi, v
            if best is not None:
                matched.add(best)
                flags.append(True)
            else:
                flags.append(False)
            scores.append(d.score)
        if flags:
            ap, _ = _ap_from_flags(flags, scores, len(c_gts))
        else:
            ap = 0.0
        per_class[c] = ap
    mean = float(np.mean(list(per_class.values()))) if per_class else None
    return per_class, mean


# ---------------------------------------------------------------------------
# frame classification (phase / step recognition)


def classification_scores(pred_scores: np.ndarray, gt: Sequence[int]
                          ) -> dict[str, float]:
    """Frame-level recognition metrics from (N, C) scores and N gt class ids.

    Returns macro mAP (one-vs-rest, all-points AP over frames), macro F1 over
    argmax predictions, and accuracy.  Classes without gt frames are skipped
    from the macro means.
    """
    scores = np.asarray(pred_scores, dtype=np.float64)
    gt = np.asarray(list(gt), dtype=np.int64)
    if scores.ndim != 2 or scores.shape[0] != gt.shape[0]:
        raise ValueError("pred_scores must be (n_frames, n_classes) matching gt length")
    n, n_classes = scores.shape
    pred = scores.argmax(axis=1)
    accuracy = float(np.mean(pred == gt)) if n else 0.0

    aps, f1s = [], []
    for c in range(n_classes):
        pos = gt == c
        n_pos = int(pos.sum())
        if n_pos == 0:
            continue
        ap, _ = _ap_from_flags(pos.tolist(), scores[:, c].tolist(), n_pos)
        aps.append(ap)
        tp = int(np.count_nonzero((pred == c) & pos))
        fp = int(np.count_nonzero((pred == c) & ~pos))
        fn = int(np.count_nonzero((pred != c) & pos))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    return {
        "mAP": float(np.mean(aps)) if aps else float("nan"),
        "macro_f1": float(np.mean(f1s)) if f1s else float("nan"),
        "accuracy": accuracy,
    }


# ---------------------------------------------------------------------------
# step anticipation


def anticipation_targets(t: FrameTimeline, step_class: int, h: float
                         ) -> AnticipationSeries:
    """Ground-truth remaining time (seconds, clipped to [0, h]) until the
    next occurrence of ``step_class``: 0 while active, h if it never occurs
    again."""
    if h <= 0:
        raise ValueError("horizon must be positive")
    if step_class not in set(t.step_of.values()):
        raise ValueError(f"step class {step_class} never occurs in timeline")
    frames = t.frames
    times = np.array([t.time_of(f) for f in frames])
    active = np.array([t.step_of[f] == step_class for f in frames])
    values = np.empty(len(frames), dtype=np.float64)
    next_onset = np.inf
    for i in range(len(frames) - 1, -1, -1):
        if active[i]:
            values[i] = 0.0
            next_onset = times[i]
        else:
            values[i] = min(h, next_onset - times[i]) if np.isfinite(next_onset) else h
    return AnticipationSeries(step_class, h, values)


@dataclass(frozen=True)
class AnticipationEval:
    horizon_h: float
    predictions: np.ndarray  # f_i, seconds
    ground_truth: np.ndarray  # r_i, seconds, in [0, h]

    def __post_init__(self):
        f = np.asarray(self.predictions, dtype=np.float64)
        r = np.asarray(self.ground_truth, dtype=np.float64)
        if f.shape != r.shape:
            raise ValueError("prediction/ground-truth length mismatch")
        if not (np.isfinite(f).all() and np.isfinite(r).all()):
            raise ValueError("non-finite anticipation values")
        if r.size and (r.min() < 0 or r.max() > self.horizon_h):
            raise ValueError("ground-truth remaining time outside [0, h]")
        object.__setattr__(self, "predictions", f)
        object.__setattr__(self, "ground_truth", r)


def _mae_window(e: AnticipationEval, upper: float) -> Optional[float]:
    r = e.ground_truth
    sel = (r > 0) & (r < upper)  # strict bounds: frames at 0 or the cap are excluded
    if not sel.any():
        return None
    return float(np.mean(np.abs(e.predictions[sel] - r[sel])))


def mae_in(e: AnticipationEval) -> Optional[float]:
    """Mean absolute error over anticipated frames (0 < r < h); None when no
    frame qualifies."""
    return _mae_window(e, e.horizon_h)


def mae_e(e: AnticipationEval) -> Optional[float]:
    """Mean absolute error over imminent frames (0 < r < 0.1 h)."""
    return _mae_window(e, 0.1 * e.horizon_h)
