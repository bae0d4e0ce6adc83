"""Proposal generation from fused score maps and Soft-NMS suppression."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .datamodel import Proposal


def _default_thresholds() -> tuple:
    return tuple(round(0.1 + 0.05 * i, 10) for i in range(10))  # 0.10 .. 0.55


@dataclass(frozen=True)
class InferConfig:
    thresholds: tuple = field(default_factory=_default_thresholds)
    softnms_sigma: float = 0.3
    softnms_min_score: float = 0.001
    top_k: int = 200

    def __post_init__(self):
        th = tuple(float(x) for x in self.thresholds)
        if not th or any(not (0.0 < x < 1.0) for x in th):
            raise ValueError("thresholds must be a nonempty list inside (0, 1)")
        if any(b <= a for a, b in zip(th, th[1:])):
            raise ValueError("thresholds must be strictly ascending")
        if self.softnms_sigma <= 0:
            raise ValueError("softnms_sigma must be positive")
        object.__setattr__(self, "thresholds", th)


def generate_proposals(
    P_hat: np.ndarray, config: InferConfig, video_id: str = ""
) -> list[Proposal]:
    """Threshold the fused scores into maximal runs, one pass per (class, threshold).

    A proposal's confidence is the mean fused score over its segment, so
    identical (s, e, class) segments found at different thresholds are
    exact duplicates and are kept once.
    """
    P_hat = np.asarray(P_hat, dtype=np.float64)
    T, C = P_hat.shape
    seen: dict[tuple, Proposal] = {}
    for c in range(C):
        col = P_hat[:, c]
        for theta in config.thresholds:
            above = col >= theta
            t = 0
            while t < T:
                if not above[t]:
                    t += 1
                    continue
                s = t
                while t + 1 < T and above[t + 1]:
                    t += 1
                key = (s, t, c)
                if key not in seen:
                    seen[key] = Proposal(
                        video_id=video_id,
                        s=s,
                        e=t,
                        y=c,
                        confidence=float(col[s : t + 1].mean()),
                    )
                t += 1
    return [seen[k] for k in sorted(seen)]


def temporal_iou(a: tuple[int, int], b: tuple[int, int]) -> float:
    """IoU of two inclusive snippet segments, in snippet counts."""
    inter = min(a[1], b[1]) - max(a[0], b[0]) + 1
    if inter <= 0:
        return 0.0
    union = (a[1] - a[0] + 1) + (b[1] - b[0] + 1) - inter
    return inter / union


def soft_nms(
    proposals: list[Proposal],
    sigma: float = 0.3,
    min_score: float = 0.001,
    top_k: int = 200,
) -> list[Proposal]:
    """Gaussian-decay Soft-NMS, suppressing within each class only.

    Repeatedly selects the highest-confidence remaining proposal (tie-break
    by (s, e, class)), then decays every remaining same-class proposal by
    exp(-IoU^2 / sigma). Proposals falling below ``min_score`` are dropped;
    selection stops after ``top_k`` proposals. Segments and classes are
    never altered, and confidences never increase.
    """
    live = [(p.confidence, p) for p in proposals if p.confidence >= min_score]
    selected: list[Proposal] = []
    while live and len(selected) < top_k:
        best = max(range(len(live)), key=lambda i: (live[i][0], (-live[i][1].s, -live[i][1].e, -live[i][1].y)))
        score, pick = live.pop(best)
        pick = Proposal(pick.video_id, pick.s, pick.e, pick.y, score)
        selected.append(pick)
        decayed = []
        for score_q, q in live:
            if q.y == pick.y:
                iou = temporal_iou((pick.s, pick.e), (q.s, q.e))
                score_q = score_q * math.exp(-(iou * iou) / sigma)
            if score_q >= min_score:
                decayed.append((score_q, q))
        live = decayed
    selected.sort(key=lambda p: (-p.confidence, p.s, p.e, p.y))
    return selected
