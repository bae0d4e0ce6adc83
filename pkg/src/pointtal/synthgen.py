"""Seeded synthetic dataset generator.

Produces desk-scale feature sequences with planted action instances so the
whole pipeline (training, inference, evaluation, ablations) runs end to end
without any real video data. Each instance region carries a class-specific
mean direction plus Gaussian noise; background carries noise only. With
``temporal_ramp`` enabled, a monotone phase signal is added along a fixed
feature direction inside every instance, which makes temporal order and
regularity statistically detectable.

Determinism: all randomness derives from the spec seed. The per-video seed
is ``np.random.SeedSequence([seed, video_index])``; dataset-level draws
(class directions, ramp direction) use ``SeedSequence([seed, 2**32])``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import FeatureSequence, GroundTruthInstance, PointAnnotationSet

_DATASET_STREAM = 2**32  # video indices stay < 2**32, so this never collides


class GenerationError(RuntimeError):
    """Raised when instances cannot be packed into the requested length."""


@dataclass(frozen=True)
class SynthSpec:
    num_videos: int = 20
    T_range: tuple = (55, 80)
    D: int = 32
    C: int = 3
    instances_per_video_range: tuple = (2, 4)
    instance_length_range: tuple = (8, 12)
    class_signal_strength: float = 2.0
    noise_std: float = 0.5
    temporal_ramp: bool = True
    seed: int = 0
    # offset into the per-video seed stream: splits generated from the same
    # seed share class/ramp directions but contain disjoint videos
    video_offset: int = 0

    def __post_init__(self):
        if self.T_range[0] > self.T_range[1] or self.T_range[0] < 1:
            raise ValueError(f"bad T_range {self.T_range}")
        if self.instances_per_video_range[0] > self.instances_per_video_range[1]:
            raise ValueError(f"bad instance count range {self.instances_per_video_range}")
        if self.instance_length_range[0] < 5:
            raise ValueError("minimum instance length is 5 (a length-5 window must fit)")
        if self.instance_length_range[0] > self.instance_length_range[1]:
            raise ValueError(f"bad instance length range {self.instance_length_range}")
        if self.class_signal_strength <= 0 or self.noise_std < 0:
            raise ValueError("class_signal_strength must be > 0 and noise_std >= 0")


@dataclass(frozen=True)
class PointStrategy:
    """How to place the single annotation point inside each instance."""

    kind: str = "gaussian"  # uniform | center | gaussian | file
    gaussian_sigma_fraction: float = 1.0 / 6.0
    annotation_path: str | None = None

    def __post_init__(self):
        if self.kind not in ("uniform", "center", "gaussian", "file"):
            raise ValueError(f"unknown point strategy {self.kind!r}")
        if self.kind == "gaussian" and not (0.0 < self.gaussian_sigma_fraction <= 0.5):
            raise ValueError("gaussian_sigma_fraction must lie in (0, 0.5]")
        if self.kind == "file" and not self.annotation_path:
            raise ValueError("file strategy requires annotation_path")


def _dataset_directions(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-class unit mean directions and the shared unit ramp direction."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, _DATASET_STREAM]))
    means = rng.normal(size=(spec.C, spec.D))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    ramp = rng.normal(size=spec.D)
    ramp /= np.linalg.norm(ramp)
    return means, ramp


def _pack_instances(rng, T, n, length_range):
    """Place n non-overlapping instances with >= 1 background snippet between."""
    lo, hi = length_range
    for _ in range(64):
        lengths = rng.integers(lo, hi + 1, size=n)
        slack = T - int(lengths.sum()) - max(0, n - 1)
        if slack >= 0:
            break
    else:
        raise GenerationError(
            f"cannot pack {n} instances of length {lo}..{hi} into T={T}; "
            f"increase T_range or shrink instances"
        )
    # Distribute the slack over the n+1 gaps (ends may be zero-width,
    # interior gaps already reserve one snippet).
    extra = np.zeros(n + 1, dtype=int)
    if slack > 0:
        slots = rng.integers(0, n + 1, size=slack)
        np.add.at(extra, slots, 1)
    gaps = extra.copy()
    gaps[1:n] += 1  # mandatory separators
    spans = []
    pos = 0
    for i in range(n):
        pos += int(gaps[i])
        spans.append((pos, pos + int(lengths[i]) - 1))
        pos += int(lengths[i])
    return spans


def _ramp_phase(length: int) -> np.ndarray:
    # Symmetric in [-1, 1] so the within-instance mean is zero.
    if length == 1:
        return np.zeros(1)
    return np.linspace(-1.0, 1.0, length)


def generate_dataset(spec: SynthSpec):
    """Generate (features, ground truth) for every video in the spec.

    Returns ``(features, gt)`` where ``features`` is a list of
    FeatureSequence and ``gt`` a parallel list of GroundTruthInstance lists.
    """
    class_means, ramp_dir = _dataset_directions(spec)
    features, gt = [], []
    for v in range(spec.num_videos):
        index = spec.video_offset + v
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, index]))
        vid = f"video_{index:04d}"
        T = int(rng.integers(spec.T_range[0], spec.T_range[1] + 1))
        n = int(
            rng.integers(
                spec.instances_per_video_range[0], spec.instances_per_video_range[1] + 1
            )
        )
        values = rng.normal(scale=spec.noise_std, size=(T, spec.D)) if spec.noise_std > 0 else np.zeros((T, spec.D))
        instances = []
        if n > 0:
            spans = _pack_instances(rng, T, n, spec.instance_length_range)
            for s, e in spans:
                y = int(rng.integers(0, spec.C))
                values[s : e + 1] += spec.class_signal_strength * class_means[y]
                if spec.temporal_ramp:
                    # ramp amplitude 2x the class strength: order/regularity
                    # must stay detectable through the shared embedder
                    phase = _ramp_phase(e - s + 1)
                    values[s : e + 1] += (
                        2.0 * spec.class_signal_strength * phase[:, None] * ramp_dir
                    )
                instances.append(GroundTruthInstance(video_id=vid, s=s, e=e, y=y))
        features.append(FeatureSequence(video_id=vid, values=values))
        gt.append(instances)
    return features, gt


def sample_points(
    gt: list[GroundTruthInstance], strategy: PointStrategy, seed: int, T: int
) -> PointAnnotationSet:
    """Sample exactly one labeled point inside each ground-truth instance."""
    if strategy.kind == "file":
        raise ValueError("file strategy points come from read_annotations, not sampling")
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    pts = []
    for inst in sorted(gt, key=lambda g: g.s):
        s, e = inst.s, inst.e
        if strategy.kind == "uniform":
            t = int(rng.integers(s, e + 1))
        elif strategy.kind == "center":
            t = (s + e) // 2
        else:  # gaussian
            # centered on the center-sampling index so the zero-variance
            # limit coincides with center sampling; ties at .5 round down
            center = (s + e) // 2
            sigma = strategy.gaussian_sigma_fraction * (e - s + 1)
            t = int(np.clip(np.ceil(rng.normal(center, sigma) - 0.5), s, e))
        pts.append((t, inst.y))
    vid = gt[0].video_id if gt else "empty"
    return PointAnnotationSet(video_id=vid, T=T, points=tuple(sorted(pts)))


def write_dataset(out_dir, spec: SynthSpec, strategy: PointStrategy) -> None:
    """Generate a dataset and write it as a directory.

    Layout: ``manifest.json``, ``features/<video>.feat``, ``gt.jsonl`` and
    ``points.jsonl`` (one sampled point per planted instance). Point
    sampling seeds derive from ``SeedSequence([seed, 2**32 + 1, video_index])``.
    """
    from pathlib import Path

    from .datamodel import (
        DatasetManifest,
        write_annotations,
        write_features,
        write_ground_truth,
        write_manifest,
    )

    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    features, gt = generate_dataset(spec)
    annos = []
    gt_map = {}
    for vi, (seq, instances) in enumerate(zip(features, gt)):
        write_features(seq, out / "features" / f"{seq.video_id}.feat")
        gt_map[seq.video_id] = instances
        if instances:
            point_seed = int(
                np.random.SeedSequence(
                    [spec.seed, _DATASET_STREAM + 1, spec.video_offset + vi]
                ).generate_state(1)[0]
            )
            pts = sample_points(instances, strategy, seed=point_seed, T=seq.T)
        else:
            pts = PointAnnotationSet(video_id=seq.video_id, T=seq.T, points=())
        annos.append(pts)
    write_ground_truth(gt_map, out / "gt.jsonl")
    write_annotations(annos, out / "points.jsonl")
    manifest = DatasetManifest(C=spec.C, videos=tuple(f.video_id for f in features))
    write_manifest(manifest, out / "manifest.json")


def default_train_spec(seed: int = 0) -> SynthSpec:
    """The default desk-scale training dataset: 20 videos, ramp on."""
    return SynthSpec(num_videos=20, seed=seed)


def default_test_spec(seed: int = 0) -> SynthSpec:
    """Held-out split: same class/ramp geometry, disjoint videos."""
    return SynthSpec(num_videos=10, seed=seed, video_offset=100_000)
