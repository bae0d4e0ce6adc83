"""Detection metrics: per-class AP at an IoU threshold, mAP grids, AUC/ACC.

AP uses greedy confidence-ordered matching (each ground-truth instance
matchable once, best-IoU unmatched instance wins) and all-point
interpolation of the precision-recall curve. AUC uses the exact pairwise
formula; accuracy thresholds at 0.5 with ties counted as negative.
"""

from __future__ import annotations

import numpy as np

from .datamodel import GroundTruthInstance, Proposal
from .inference import temporal_iou

BANDS = {
    "0.1:0.5": (0.1, 0.2, 0.3, 0.4, 0.5),
    "0.3:0.7": (0.3, 0.4, 0.5, 0.6, 0.7),
    "0.1:0.7": (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7),
}

DEFAULT_IOU_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)


def _ranked(proposals: list[Proposal]) -> list[Proposal]:
    return sorted(proposals, key=lambda p: (-p.confidence, p.video_id, p.s, p.e))


def match_and_ap(
    proposals: list[Proposal],
    gt: list[GroundTruthInstance],
    iou_thr: float,
    cls: int,
) -> float | None:
    """Average precision of one class at one IoU threshold.

    Returns None when the class has no ground truth (undefined AP, the
    class is then excluded from mAP averaging).
    """
    gt_cls = [g for g in gt if g.y == cls]
    if not gt_cls:
        return None
    props = _ranked([p for p in proposals if p.y == cls])
    # stable per-video gt ordering so max-IoU ties resolve deterministically
    gt_by_video: dict[str, list[GroundTruthInstance]] = {}
    for g in sorted(gt_cls, key=lambda g: (g.video_id, g.s, g.e)):
        gt_by_video.setdefault(g.video_id, []).append(g)
    matched: dict[str, list[bool]] = {v: [False] * len(gs) for v, gs in gt_by_video.items()}

    tp = np.zeros(len(props))
    for i, p in enumerate(props):
        candidates = gt_by_video.get(p.video_id, [])
        best_iou, best_j = -1.0, -1
        for j, g in enumerate(candidates):
            if matched[p.video_id][j]:
                continue
            iou = temporal_iou((p.s, p.e), (g.s, g.e))
            if iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0 and best_iou >= iou_thr:
            tp[i] = 1.0
            matched[p.video_id][best_j] = True

    if not props:
        return 0.0
    cum_tp = np.cumsum(tp)
    recall = cum_tp / len(gt_cls)
    precision = cum_tp / np.arange(1, len(props) + 1)
    # all-point interpolation: integrate the precision envelope over recall
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[1.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def mean_ap(
    proposals: list[Proposal],
    gt: list[GroundTruthInstance],
    iou_grid=DEFAULT_IOU_GRID,
) -> dict:
    """mAP at each threshold of the grid plus the standard band averages."""
    if not gt:
        raise ValueError("cannot evaluate without any ground-truth instances")
    classes = sorted({g.y for g in gt})
    per_thr = {}
    for thr in iou_grid:
        aps = [match_and_ap(proposals, gt, thr, c) for c in classes]
        aps = [a for a in aps if a is not None]
        per_thr[round(float(thr), 10)] = float(np.mean(aps))
    bands = {}
    for name, thrs in BANDS.items():
        vals = [per_thr[t] for t in thrs if t in per_thr]
        if len(vals) == len(thrs):
            bands[name] = float(np.mean(vals))
    return {"per_threshold": per_thr, "bands": bands}


def binary_auc_acc(scores_pos, scores_neg) -> tuple[float, float]:
    """Exact AUC (pairwise win rate, ties worth 1/2) and accuracy at 0.5.

    A score of exactly 0.5 is classified negative.
    """
    pos = np.asarray(scores_pos, dtype=np.float64)
    neg = np.asarray(scores_neg, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("both score lists must be nonempty")
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    auc = (wins + 0.5 * ties) / (pos.size * neg.size)
    acc = ((pos > 0.5).sum() + (neg <= 0.5).sum()) / (pos.size + neg.size)
    return float(auc), float(acc)
