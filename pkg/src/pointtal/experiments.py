"""End-to-end experiment helpers: train -> infer -> evaluate, and ablation grids.

Every ablation row runs the same set of derived seeds, so rows are paired
and a row that disables all auxiliary tasks reproduces the plain baseline
run exactly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import replace

import torch

from .datamodel import DatasetBundle, Proposal
from .evaluation import mean_ap
from .inference import InferConfig, generate_proposals, soft_nms
from .network import ActionLocalizer, NetConfig, fuse_scores
from .supervision import LossWeights
from .synthgen import PointStrategy, sample_points
from .trainer import TrainConfig, derive_seed, train


def predict_video(model: ActionLocalizer, seq, config: InferConfig) -> list[Proposal]:
    """Fused scores -> thresholded proposals -> Soft-NMS for one video."""
    with torch.no_grad():
        x = model.embed(torch.tensor(seq.values, dtype=torch.float64))
        P, Q = model.classify(x)
        p_hat = fuse_scores(P, Q).numpy()
    props = generate_proposals(p_hat, config, video_id=seq.video_id)
    return soft_nms(
        props,
        sigma=config.softnms_sigma,
        min_score=config.softnms_min_score,
        top_k=config.top_k,
    )


def predict_bundle(model: ActionLocalizer, bundle: DatasetBundle, config: InferConfig) -> dict:
    return {
        vid: predict_video(model, bundle.features[vid], config)
        for vid in bundle.manifest.videos
    }


def run_experiment(
    train_bundle: DatasetBundle,
    test_bundle: DatasetBundle,
    config: TrainConfig,
    infer_config: InferConfig | None = None,
) -> dict:
    """Train on one bundle, localize on the other, report mAP bands."""
    infer_config = infer_config or InferConfig()
    model, _ = train(train_bundle, config)
    preds = predict_bundle(model, test_bundle, infer_config)
    proposals = [p for props in preds.values() for p in props]
    gt = [g for gs in test_bundle.gt.values() for g in gs]
    return mean_ap(proposals, gt)


# ---------------------------------------------------------------------------
# Ablation axes
# ---------------------------------------------------------------------------

AXES = ("tasks", "window", "points", "lambda")

_TASK_COMBOS = (
    (False, False, False),
    (True, False, False),
    (False, True, False),
    (False, False, True),
    (True, True, False),
    (False, True, True),
    (True, False, True),
    (True, True, True),
)


def _resample_points(bundle: DatasetBundle, strategy: PointStrategy, seed: int) -> DatasetBundle:
    points = {}
    for vi, vid in enumerate(bundle.manifest.videos):
        instances = bundle.gt.get(vid, [])
        if instances:
            points[vid] = sample_points(
                instances, strategy, seed=derive_seed(seed, 5, vi), T=bundle.features[vid].T
            )
    return dataclasses.replace(bundle, points=points)


def _row_configs(axis: str, base: TrainConfig, aux_weight: float):
    """Yield (setup dict, config transform) pairs for one ablation axis."""
    if axis == "tasks":
        for ac, aou, aru in _TASK_COMBOS:
            setup = {"ac": ac, "aou": aou, "aru": aru}
            weights = replace(
                base.weights,
                lam_ac=aux_weight if ac else 0.0,
                lam_aou=aux_weight if aou else 0.0,
                lam_aru=aux_weight if aru else 0.0,
            )
            yield setup, replace(base, weights=weights), None
    elif axis == "window":
        for t in (1, 2, 3):
            yield {"window_length": 2 * t + 1}, replace(base, net=replace(base.net, t=t)), None
    elif axis == "points":
        for kind in ("uniform", "center", "gaussian"):
            yield {"point_distribution": kind}, base, PointStrategy(kind=kind)
    elif axis == "lambda":
        for lam in [round(0.1 * i, 10) for i in range(1, 11)]:
            weights = replace(base.weights, lam_ac=lam, lam_aou=lam, lam_aru=lam)
            yield {"lambda": lam}, replace(base, weights=weights), None
    else:
        raise ValueError(f"unknown ablation axis {axis!r}, expected one of {AXES}")


def ablate(
    train_bundle: DatasetBundle,
    test_bundle: DatasetBundle,
    axis: str,
    base_config: TrainConfig,
    num_seeds: int = 3,
    aux_weight: float = 0.5,
    infer_config: InferConfig | None = None,
) -> dict:
    """Run one ablation axis; returns the results matrix.

    Schema: ``{"axis": ..., "rows": [{"setup": ..., "map_bands": ...,
    "per_seed": [...]}, ...]}`` where ``map_bands`` holds seed-mean band
    averages.
    """
    rows = []
    for setup, config, strategy in _row_configs(axis, base_config, aux_weight):
        per_seed = []
        for s in range(num_seeds):
            seed = derive_seed(base_config.seed, s)
            cfg = replace(config, seed=seed, net=replace(config.net, seed=seed))
            tb = train_bundle if strategy is None else _resample_points(train_bundle, strategy, seed)
            result = run_experiment(tb, test_bundle, cfg, infer_config)
            per_seed.append(result["bands"])
        bands = {
            name: sum(b[name] for b in per_seed) / len(per_seed) for name in per_seed[0]
        }
        rows.append({"setup": setup, "map_bands": bands, "per_seed": per_seed})
    return {"axis": axis, "rows": rows}


def ablation_markdown(matrix: dict) -> str:
    """Render a results matrix as a small markdown table."""
    rows = matrix["rows"]
    band_names = list(rows[0]["map_bands"])
    lines = [
        "| setup | " + " | ".join(band_names) + " |",
        "|---" * (1 + len(band_names)) + "|",
    ]
    for row in rows:
        setup = ", ".join(f"{k}={v}" for k, v in row["setup"].items())
        cells = " | ".join(f"{100 * row['map_bands'][b]:.1f}" for b in band_names)
        lines.append(f"| {setup} | {cells} |")
    return "\n".join(lines) + "\n"
