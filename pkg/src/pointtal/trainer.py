"""Deterministic multi-task training loop and proxy-task evaluation.

Seed discipline: every random stream is derived from the config seed with
:func:`derive_seed` (a SeedSequence over the integer parts), so runs are
bit-reproducible. Stream ids: 1 = batch shuffling, 2 = regularity-task
window shuffling, 3 = proxy-eval point sampling. The model itself is
initialized from ``config.net.seed``.

Auxiliary tasks whose loss weight is zero are skipped entirely: their
adapters, heads and discriminators are never run, so those parameters
receive no gradient and are left untouched by the optimizer.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .datamodel import DatasetBundle, FeatureSequence, GroundTruthInstance
from .evaluation import binary_auc_acc
from .network import ActionLocalizer, NetConfig, build_model, save_checkpoint
from .supervision import (
    LossParts,
    LossWeights,
    build_window,
    l2_normalize,
    loss_ac,
    loss_act,
    loss_aou,
    loss_aru,
    loss_bkg,
    loss_bkg_neg,
    loss_contrastive,
    loss_total,
    mine_pseudo_labels,
    reverse_window,
    shuffle_window_non_reversed,
    split_context,
)
from .synthgen import PointStrategy, sample_points


def derive_seed(*parts: int) -> int:
    """Mix integer parts into one child seed (documented, fixed algorithm)."""
    return int(np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts]).generate_state(1)[0])


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, message: str):
        super().__init__(f"training diverged at step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-3
    batch_size: int = 16
    steps: int = 2000
    seed: int = 0
    log_every: int = 1
    eval_every: int = 0  # 0 disables periodic proxy evaluation
    mine_low: float = 0.1
    mine_high: float = 0.95
    weights: LossWeights = field(default_factory=LossWeights)
    net: NetConfig = field(default_factory=NetConfig)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size must be >= 1, steps >= 0")


@dataclass
class TrainReport:
    records: list = field(default_factory=list)  # one dict per logged step
    proxy: list = field(default_factory=list)  # periodic proxy metrics
    counters: dict = field(default_factory=dict)
    wall_clock_sec: float = 0.0
    checkpoint_path: str | None = None


def _video_losses(
    model: ActionLocalizer,
    feats: torch.Tensor,
    points,
    config: TrainConfig,
    shuffle_rng: np.random.Generator,
    counters: dict,
) -> LossParts:
    """All loss terms for one video; zero-weighted tasks are never run."""
    w = config.weights
    x = model.embed(feats)
    P, Q = model.classify(x)
    pseudo = mine_pseudo_labels(
        points, Q.detach().numpy(), low=config.mine_low, high=config.mine_high
    )
    if pseudo.N_bkg == 0:
        counters["videos_without_background"] += 1
    parts = LossParts(
        act=loss_act(P, pseudo, w),
        bkg=loss_bkg(Q, pseudo, w) + loss_bkg_neg(Q, pseudo, w),
        contra=loss_contrastive(l2_normalize(x), pseudo, w),
    )

    run_ac = w.lam_ac > 0
    run_aou = w.lam_aou > 0
    run_aru = w.lam_aru > 0
    if not (run_ac or run_aou or run_aru):
        return parts

    half = model.config.t
    T = x.shape[0]
    valid = [t for t, _ in points.points if t - half >= 0 and t + half <= T - 1]
    n_invalid = len(points.points) - len(valid)
    counters["windows_excluded"] += n_invalid
    counters["windows_included"] += len(valid)
    if not valid:
        return parts

    def stack_windows(feats_task: torch.Tensor) -> torch.Tensor:
        return torch.stack([feats_task[i - half : i + half + 1] for i in valid])

    if run_ac:
        wins = stack_windows(model.adapt(x, "ac"))
        left, right = wins[:, :half], torch.flip(wins[:, half + 1 :], dims=[1])
        preds = model.ac_predict_batch(left, right)
        parts.ac = loss_ac(list(preds), list(wins[:, half]))
    if run_aou:
        wins = stack_windows(model.adapt(x, "aou"))
        fwd = model.discriminate_batch(wins, "order")
        rev = model.discriminate_batch(torch.flip(wins, dims=[1]), "order")
        parts.aou = loss_aou(list(fwd), list(rev))
    if run_aru:
        x_aru = model.adapt(x, "aru")
        wins = stack_windows(x_aru)
        shuf = torch.stack(
            [
                shuffle_window_non_reversed(build_window(x_aru, i, half), shuffle_rng).features
                for i in valid
            ]
        )
        reg = model.discriminate_batch(wins, "regularity")
        irr = model.discriminate_batch(shuf, "regularity")
        parts.aru = loss_aru(list(reg), list(irr))
    return parts


def _make_optimizer(model: ActionLocalizer, config: TrainConfig) -> torch.optim.AdamW:
    # decoupled weight decay on matrix/conv weights only, never biases or scales
    decay = [p for p in model.parameters() if p.ndim >= 2]
    no_decay = [p for p in model.parameters() if p.ndim < 2]
    return torch.optim.AdamW(
        [
            {"params": decay, "weight_decay": config.weight_decay},
            {"params": no_decay, "weight_decay": 0.0},
        ],
        lr=config.learning_rate,
        betas=(0.9, 0.999),
    )


def train(
    bundle: DatasetBundle,
    config: TrainConfig,
    out_dir=None,
) -> tuple[ActionLocalizer, TrainReport]:
    """Run the full training loop; returns the trained model and its report.

    When ``out_dir`` is given, writes ``checkpoint.ckpt`` and
    ``report.jsonl`` there (and ``last_good.ckpt`` on divergence).
    """
    vids = [v for v in bundle.manifest.videos if v in bundle.points and len(bundle.points[v])]
    if not vids:
        raise ValueError("dataset has no video with point annotations")
    if bundle.manifest.C != config.net.C:
        raise ValueError(
            f"manifest declares C={bundle.manifest.C} but net config has C={config.net.C}"
        )

    t0 = time.monotonic()
    model = build_model(config.net)
    opt = _make_optimizer(model, config)
    feats = {v: torch.tensor(bundle.features[v].values, dtype=torch.float64) for v in vids}

    batch_rng = np.random.default_rng(derive_seed(config.seed, 1))
    shuffle_rng = np.random.default_rng(derive_seed(config.seed, 2))
    queue: list[str] = []
    report = TrainReport(
        counters={
            "windows_included": 0,
            "windows_excluded": 0,
            "videos_without_background": 0,
        }
    )

    def dump_checkpoint(name: str, step: int) -> str | None:
        if out_dir is None:
            return None
        path = Path(out_dir) / name
        path.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, path, step=step, seed=config.seed)
        return str(path)

    for step in range(config.steps):
        while len(queue) < config.batch_size:
            queue.extend(np.array(vids)[batch_rng.permutation(len(vids))].tolist())
        batch, queue = queue[: config.batch_size], queue[config.batch_size :]

        opt.zero_grad()
        sums = LossParts(*[torch.zeros((), dtype=torch.float64) for _ in range(6)])
        for vid in batch:
            parts = _video_losses(
                model, feats[vid], bundle.points[vid], config, shuffle_rng, report.counters
            )
            for name in ("act", "bkg", "contra", "ac", "aou", "aru"):
                setattr(sums, name, getattr(sums, name) + getattr(parts, name))
        mean_parts = LossParts(
            *[getattr(sums, n) / len(batch) for n in ("act", "bkg", "contra", "ac", "aou", "aru")]
        )
        total = loss_total(mean_parts, config.weights)

        if not torch.isfinite(total):
            dump_checkpoint("last_good.ckpt", step)
            raise TrainingDiverged(step, f"non-finite loss {float(total)}")
        total.backward()
        for p in model.parameters():
            if p.grad is not None and not torch.isfinite(p.grad).all():
                dump_checkpoint("last_good.ckpt", step)
                raise TrainingDiverged(step, "non-finite gradient")
        opt.step()

        if step % config.log_every == 0 or step == config.steps - 1:
            rec = {"step": step, **mean_parts.detached(), "total": float(total.detach())}
            report.records.append(rec)
        if config.eval_every and bundle.gt and (step + 1) % config.eval_every == 0:
            metrics = evaluate_proxy(
                model, bundle.features, bundle.gt, seed=config.seed, repeats=1
            )
            report.proxy.append({"step": step, **metrics})

    report.wall_clock_sec = time.monotonic() - t0
    report.checkpoint_path = dump_checkpoint("checkpoint.ckpt", config.steps)
    if out_dir is not None:
        with open(Path(out_dir) / "report.jsonl", "w", encoding="utf-8") as f:
            for rec in report.records:
                f.write(json.dumps(rec) + "\n")
            for rec in report.proxy:
                f.write(json.dumps({"proxy": rec}) + "\n")
    return model, report


# ---------------------------------------------------------------------------
# Proxy-task evaluation
# ---------------------------------------------------------------------------


def _cosine(a: torch.Tensor, b: torch.Tensor) -> float:
    denom = a.norm().clamp_min(1e-12) * b.norm().clamp_min(1e-12)
    return float((a * b).sum() / denom)


def evaluate_proxy(
    model: ActionLocalizer,
    features: dict[str, FeatureSequence],
    gt: dict[str, list[GroundTruthInstance]],
    seed: int = 0,
    repeats: int = 1,
    gaussian_sigma_fraction: float = 1.0 / 6.0,
) -> dict:
    """Score the three auxiliary heads on held-out data.

    Points are Gaussian-sampled inside each ground-truth instance; every
    valid window contributes one completion cosine similarity, one
    order-discriminator pair (forward vs reversed) and one
    regularity-discriminator pair (in-order vs shuffled). Metrics with no
    valid windows are omitted from the result.
    """
    strategy = PointStrategy(kind="gaussian", gaussian_sigma_fraction=gaussian_sigma_fraction)
    shuffle_rng = np.random.default_rng(derive_seed(seed, 3))
    half = model.config.t
    ac_sims: list[float] = []
    aou_pos: list[float] = []
    aou_neg: list[float] = []
    aru_pos: list[float] = []
    aru_neg: list[float] = []

    with torch.no_grad():
        for vi, vid in enumerate(sorted(features)):
            instances = gt.get(vid, [])
            if not instances:
                continue
            x = model.embed(torch.tensor(features[vid].values, dtype=torch.float64))
            x_tasks = {task: model.adapt(x, task) for task in ("ac", "aou", "aru")}
            for rep in range(repeats):
                pts = sample_points(
                    instances, strategy, seed=derive_seed(seed, 3, vi, rep), T=x.shape[0]
                )
                for i, _ in pts.points:
                    if not build_window(x, i, half).valid:
                        continue
                    win = build_window(x_tasks["ac"], i, half)
                    left, right, center = split_context(win)
                    ac_sims.append(_cosine(model.ac_predict(left, right), center))

                    win = build_window(x_tasks["aou"], i, half)
                    aou_pos.append(float(model.discriminate(win.features, "order")))
                    aou_neg.append(
                        float(model.discriminate(reverse_window(win).features, "order"))
                    )

                    win = build_window(x_tasks["aru"], i, half)
                    aru_pos.append(float(model.discriminate(win.features, "regularity")))
                    shuf = shuffle_window_non_reversed(win, shuffle_rng)
                    aru_neg.append(float(model.discriminate(shuf.features, "regularity")))

    metrics: dict = {"n_windows": len(ac_sims)}
    if ac_sims:
        sim = float(np.mean(ac_sims))
        metrics["ac_cos_sim"] = sim
        metrics["ac_cos_dist"] = 1.0 - sim
    if aou_pos:
        auc, acc = binary_auc_acc(aou_pos, aou_neg)
        metrics["aou_auc"], metrics["aou_acc"] = auc, acc
    if aru_pos:
        auc, acc = binary_auc_acc(aru_pos, aru_neg)
        metrics["aru_auc"], metrics["aru_acc"] = auc, acc
    return metrics


def config_from_dict(obj: dict) -> TrainConfig:
    """Build a TrainConfig from a plain JSON-style dict (missing keys default)."""
    obj = dict(obj)
    weights = LossWeights(**obj.pop("weights", {}))
    net = NetConfig(**obj.pop("net", {}))
    return TrainConfig(weights=weights, net=net, **obj)


def config_to_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    return d
