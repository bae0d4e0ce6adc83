"""Pseudo-label mining, temporal windows, and all training loss terms.

Mining rule
-----------
Around every annotated point, snippets are claimed as pseudo-action by
contiguous expansion while the background score stays below ``low``
(default 0.1); expansion is capped at the sequence ends and at the
midpoint toward each neighboring point, so two points never claim the
same snippet (for consecutive points a < b, the left point may claim up
to ``(a + b) // 2`` and the right point from ``(a + b) // 2 + 1``).

Pseudo-background comes from the complementary regions: every snippet
with background score above ``high`` (default 0.95) in the gaps strictly
between consecutive points and in the regions before the first / after
the last point, plus the single argmax-score snippet of each
between-points gap (ties broken by smallest index; with no points at all
the whole sequence counts as one outer region). Snippets already claimed
as pseudo-action are never pseudo-background.

Losses
------
Foreground/background classification uses the focal form
``-alpha * (1-p)**gamma * log(p)`` for target 1 and
``-(1-alpha) * p**gamma * log(1-p)`` for target 0, with each
pseudo-action snippet treated as a multi-label target (1 for its own
class, 0 for the others). The contrastive term compares normalized
embeddings against per-class prototypes at temperature ``tau``; see
:func:`loss_contrastive` for the two supported forms. The completion
loss is one minus mean cosine similarity; the order/regularity losses
are binary cross-entropy with genuine windows labeled 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .datamodel import PointAnnotationSet, PseudoLabelSet

EPS_PROB = 1e-7
EPS_NORM = 1e-12


@dataclass(frozen=True)
class LossWeights:
    lam_act: float = 0.5
    lam_bkg: float = 1.0
    lam_contra: float = 1.0
    lam_ac: float = 0.5
    lam_aou: float = 0.5
    lam_aru: float = 0.5
    tau: float = 0.1
    focal_gamma: float = 2.0
    focal_alpha: float = 0.5
    # "split_log": -log applied to each softmax ratio separately (default:
    # both ratios are pushed up). "as_written": -log(first ratio) plus the
    # bare second ratio, whose gradient drags action snippets toward
    # background similarities and empirically stalls pseudo-label mining.
    contrastive_mode: str = "split_log"

    def __post_init__(self):
        for name in ("lam_act", "lam_bkg", "lam_contra", "lam_ac", "lam_aou", "lam_aru"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.focal_gamma < 0 or not (0 < self.focal_alpha <= 1):
            raise ValueError("bad focal parameters")
        if self.contrastive_mode not in ("as_written", "split_log"):
            raise ValueError(f"unknown contrastive_mode {self.contrastive_mode!r}")


# ---------------------------------------------------------------------------
# Pseudo-label mining
# ---------------------------------------------------------------------------


def mine_pseudo_labels(
    points: PointAnnotationSet,
    Q: np.ndarray,
    low: float = 0.1,
    high: float = 0.95,
) -> PseudoLabelSet:
    """Mine pseudo-action and pseudo-background snippets from background scores.

    ``Q`` is consumed as plain values (no gradient flows through mining).
    """
    Q = np.asarray(Q, dtype=np.float64)
    T = Q.shape[0]
    pts = points.points

    action: list[tuple[int, int]] = []
    claimed: set[int] = set()
    for idx, (t, y) in enumerate(pts):
        left_lim = 0 if idx == 0 else (pts[idx - 1][0] + t) // 2 + 1
        right_lim = T - 1 if idx == len(pts) - 1 else (t + pts[idx + 1][0]) // 2
        collected = [t]
        j = t - 1
        while j >= left_lim and Q[j] < low:
            collected.append(j)
            j -= 1
        j = t + 1
        while j <= right_lim and Q[j] < low:
            collected.append(j)
            j += 1
        for s in collected:
            action.append((s, y))
            claimed.add(s)
    action.sort()

    background: set[int] = set()
    if pts:
        outer = []
        if pts[0][0] > 0:
            outer.append((0, pts[0][0] - 1))
        if pts[-1][0] < T - 1:
            outer.append((pts[-1][0] + 1, T - 1))
        gaps = [
            (pts[i][0] + 1, pts[i + 1][0] - 1)
            for i in range(len(pts) - 1)
            if pts[i + 1][0] - pts[i][0] > 1
        ]
    else:
        outer = [(0, T - 1)] if T >= 1 else []
        gaps = []

    for lo, hi in outer:
        for j in range(lo, hi + 1):
            if Q[j] > high and j not in claimed:
                background.add(j)
    for lo, hi in gaps:
        for j in range(lo, hi + 1):
            if Q[j] > high and j not in claimed:
                background.add(j)
        jmax = lo + int(np.argmax(Q[lo : hi + 1]))  # argmax takes the first maximum
        if jmax not in claimed:
            background.add(jmax)

    return PseudoLabelSet(
        action_snippets=tuple(action), background_snippets=tuple(sorted(background))
    )


# ---------------------------------------------------------------------------
# Temporal windows
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TemporalWindow:
    """A center snippet with ``half`` neighbors per side; invalid when clipped."""

    center: int
    half: int
    indices: tuple
    features: torch.Tensor | None
    valid: bool


def build_window(X_task: torch.Tensor, i: int, half: int) -> TemporalWindow:
    """Slice the window centered at ``i``; windows crossing a boundary are invalid."""
    T = X_task.shape[0]
    if not (0 <= i < T):
        raise ValueError(f"center {i} outside [0, {T})")
    valid = i - half >= 0 and i + half <= T - 1
    if not valid:
        return TemporalWindow(center=i, half=half, indices=(), features=None, valid=False)
    indices = tuple(range(i - half, i + half + 1))
    return TemporalWindow(
        center=i, half=half, indices=indices, features=X_task[i - half : i + half + 1],
        valid=True,
    )


def reverse_window(w: TemporalWindow) -> TemporalWindow:
    if not w.valid:
        raise ValueError("cannot reverse an invalid window")
    return TemporalWindow(
        center=w.center,
        half=w.half,
        indices=tuple(reversed(w.indices)),
        features=torch.flip(w.features, dims=[0]),
        valid=True,
    )


def shuffle_window_non_reversed(w: TemporalWindow, rng: np.random.Generator) -> TemporalWindow:
    """Permute the window rows, rejecting the identity and the full reversal."""
    if not w.valid:
        raise ValueError("cannot shuffle an invalid window")
    n = len(w.indices)
    if n < 3:
        raise ValueError(f"window of length {n} has no qualifying shuffle")
    identity = np.arange(n)
    reversal = identity[::-1]
    while True:
        perm = rng.permutation(n)
        if not np.array_equal(perm, identity) and not np.array_equal(perm, reversal):
            break
    return TemporalWindow(
        center=w.center,
        half=w.half,
        indices=tuple(w.indices[p] for p in perm),
        features=w.features[torch.from_numpy(perm.copy())],
        valid=True,
    )


def split_context(w: TemporalWindow) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Split a valid window into (left ascending, right descending, center row)."""
    t = w.half
    left = w.features[:t]
    right = torch.flip(w.features[t + 1 :], dims=[0])
    return left, right, w.features[t]


# ---------------------------------------------------------------------------
# Loss terms
# ---------------------------------------------------------------------------


def _clamp_prob(p: torch.Tensor) -> torch.Tensor:
    return p.clamp(EPS_PROB, 1.0 - EPS_PROB)


def _zero() -> torch.Tensor:
    return torch.zeros((), dtype=torch.float64)


def loss_act(P: torch.Tensor, pseudo: PseudoLabelSet, weights: LossWeights) -> torch.Tensor:
    """Focal classification loss over pseudo-action snippets, multi-label targets."""
    if pseudo.N_act == 0:
        return _zero()
    a, g = weights.focal_alpha, weights.focal_gamma
    ts = torch.tensor([t for t, _ in pseudo.action_snippets], dtype=torch.long)
    ys = torch.tensor([y for _, y in pseudo.action_snippets], dtype=torch.long)
    rows = _clamp_prob(P[ts])
    target = torch.zeros_like(rows)
    target[torch.arange(len(ts)), ys] = 1.0
    pos = -a * (1.0 - rows) ** g * torch.log(rows)
    neg = -(1.0 - a) * rows**g * torch.log(1.0 - rows)
    return (target * pos + (1.0 - target) * neg).sum() / pseudo.N_act


def loss_bkg(Q: torch.Tensor, pseudo: PseudoLabelSet, weights: LossWeights) -> torch.Tensor:
    """Focal loss pushing background scores up on pseudo-background snippets."""
    if pseudo.N_bkg == 0:
        return _zero()
    a, g = weights.focal_alpha, weights.focal_gamma
    q = _clamp_prob(Q[torch.tensor(pseudo.background_snippets, dtype=torch.long)])
    return (-a * (1.0 - q) ** g * torch.log(q)).sum() / pseudo.N_bkg


def loss_bkg_neg(Q: torch.Tensor, pseudo: PseudoLabelSet, weights: LossWeights) -> torch.Tensor:
    """Focal loss pushing background scores down on pseudo-action snippets.

    Without this counter-force nothing ever lowers Q: background mining
    monotonically drives scores up until every snippet (action included)
    crosses the mining threshold and localization collapses. Treating a
    pseudo-action snippet as a background-negative restores the two-sided
    supervision of the focal scheme this loss family comes from.
    """
    if pseudo.N_act == 0:
        return _zero()
    a, g = weights.focal_alpha, weights.focal_gamma
    ts = torch.tensor(sorted({t for t, _ in pseudo.action_snippets}), dtype=torch.long)
    q = _clamp_prob(Q[ts])
    return (-(1.0 - a) * q**g * torch.log(1.0 - q)).sum() / len(ts)


def l2_normalize(X: torch.Tensor, eps: float = EPS_NORM) -> torch.Tensor:
    return X / X.norm(dim=-1, keepdim=True).clamp_min(eps)


def loss_contrastive(
    X_norm: torch.Tensor, pseudo: PseudoLabelSet, weights: LossWeights
) -> torch.Tensor:
    """Prototype contrastive loss over normalized embeddings.

    Per pseudo-action snippet of class c there are two softmax-style
    ratios: the first contrasts the snippet's similarity to its own class
    prototype against the other class prototypes, the second against the
    pseudo-background snippets' similarities to that prototype. In
    ``as_written`` mode the sample loss is ``-log(first) + second``; in
    ``split_log`` mode it is ``-log(first) - log(second)``. Prototypes
    are in-batch means of the normalized features, renormalized. The sum
    is divided by the number of classes present.
    """
    if pseudo.N_act == 0:
        return _zero()
    tau = weights.tau
    by_class: dict[int, list[int]] = {}
    for t, y in pseudo.action_snippets:
        by_class.setdefault(y, []).append(t)
    classes = sorted(by_class)
    protos = torch.stack(
        [
            l2_normalize(X_norm[torch.tensor(by_class[c], dtype=torch.long)].mean(dim=0))
            for c in classes
        ]
    )  # (K, D)

    bg_feats = None
    if pseudo.N_bkg > 0:
        bg_feats = X_norm[torch.tensor(pseudo.background_snippets, dtype=torch.long)]

    total = _zero()
    for ci, c in enumerate(classes):
        rows = X_norm[torch.tensor(by_class[c], dtype=torch.long)]  # (n_c, D)
        sims = rows @ protos.T / tau  # (n_c, K)
        own = sims[:, ci]
        # first ratio: softmax over class prototypes at the own-class index
        neg_log_first = torch.logsumexp(sims, dim=1) - own
        total = total + neg_log_first.sum()
        if bg_feats is not None:
            bg_sims = bg_feats @ protos[ci] / tau  # (N_bkg,)
            stacked = torch.cat(
                [own[:, None], bg_sims[None, :].expand(len(own), -1)], dim=1
            )
            log_second = own - torch.logsumexp(stacked, dim=1)
            if weights.contrastive_mode == "as_written":
                total = total + torch.exp(log_second).sum()
            else:
                total = total - log_second.sum()
    return total / len(classes)


def loss_ac(pred: list[torch.Tensor], target: list[torch.Tensor]) -> torch.Tensor:
    """One minus mean cosine similarity between predicted and actual features."""
    if len(pred) != len(target):
        raise ValueError(f"length mismatch: {len(pred)} predictions, {len(target)} targets")
    if not pred:
        return _zero()
    sims = []
    for p, x in zip(pred, target):
        sims.append(
            (p * x).sum() / (p.norm().clamp_min(EPS_NORM) * x.norm().clamp_min(EPS_NORM))
        )
    return 1.0 - torch.stack(sims).mean()


def _binary_real_fake_loss(
    pred_real: list[torch.Tensor], pred_fake: list[torch.Tensor]
) -> torch.Tensor:
    if len(pred_real) != len(pred_fake):
        raise ValueError(
            f"length mismatch: {len(pred_real)} real vs {len(pred_fake)} fake predictions"
        )
    if not pred_real:
        return _zero()
    real = _clamp_prob(torch.stack([p.reshape(()) for p in pred_real]))
    fake = _clamp_prob(torch.stack([p.reshape(()) for p in pred_fake]))
    return -(torch.log(real) + torch.log(1.0 - fake)).mean()


def loss_aou(pred_fwd: list[torch.Tensor], pred_rev: list[torch.Tensor]) -> torch.Tensor:
    """Order loss: forward windows labeled 1, reversed windows labeled 0."""
    return _binary_real_fake_loss(pred_fwd, pred_rev)


def loss_aru(pred_reg: list[torch.Tensor], pred_shuf: list[torch.Tensor]) -> torch.Tensor:
    """Regularity loss: in-order windows labeled 1, shuffled windows labeled 0."""
    return _binary_real_fake_loss(pred_reg, pred_shuf)


@dataclass
class LossParts:
    act: torch.Tensor | float = 0.0
    bkg: torch.Tensor | float = 0.0
    contra: torch.Tensor | float = 0.0
    ac: torch.Tensor | float = 0.0
    aou: torch.Tensor | float = 0.0
    aru: torch.Tensor | float = 0.0

    def detached(self) -> dict:
        out = {}
        for name in ("act", "bkg", "contra", "ac", "aou", "aru"):
            v = getattr(self, name)
            out[name] = float(v.detach()) if torch.is_tensor(v) else float(v)
        return out


def loss_total(parts: LossParts, weights: LossWeights):
    """Weighted sum of all parts; a zero weight removes that task entirely."""
    return (
        weights.lam_act * parts.act
        + weights.lam_bkg * parts.bkg
        + weights.lam_contra * parts.contra
        + weights.lam_ac * parts.ac
        + weights.lam_aou * parts.aou
        + weights.lam_aru * parts.aru
    )
