"""Core domain types and file I/O.

Everything downstream operates on snippet indices: a snippet is the atomic
temporal unit, and all starts/ends are inclusive integer snippet indices.
Features live on disk as float32; all in-memory math runs in float64.

File formats
------------
* Feature file (``.feat``): magic ``b"PTFT1\\n"``, one JSON header line
  ``{"video_id": ..., "T": ..., "D": ...}``, then ``T*D`` float32
  little-endian values in row-major order. Bit-exact and self-describing.
* Point annotations / ground truth / predictions: line-delimited JSON, one
  object per video.
* Dataset manifest: a single JSON object
  ``{"C": int, "videos": [...], "class_names": [...]}``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"PTFT1\n"


class ValidationError(ValueError):
    """Raised when a domain object violates its invariants."""


class FormatError(ValueError):
    """Raised when a file does not conform to its declared format."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureSequence:
    """A T x D matrix of per-snippet features for one video."""

    video_id: str
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValidationError(
                f"feature matrix must be T x D with T,D >= 1, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValidationError(f"non-finite feature values in video {self.video_id!r}")
        v = np.ascontiguousarray(v, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def D(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PointAnnotationSet:
    """Sparse labeled timestamps for one video: one (t, y) point per instance."""

    video_id: str
    T: int
    points: tuple  # of (t, y) pairs, strictly increasing in t

    def __post_init__(self):
        pts = tuple((int(t), int(y)) for t, y in self.points)
        for t, y in pts:
            if not (0 <= t < self.T):
                raise ValidationError(
                    f"video {self.video_id!r}: point t={t} outside [0, {self.T})"
                )
            if y < 0:
                raise ValidationError(f"video {self.video_id!r}: negative class id {y}")
        ts = [t for t, _ in pts]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValidationError(
                f"video {self.video_id!r}: point timestamps must be strictly increasing"
            )
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class GroundTruthInstance:
    """One true action instance with inclusive snippet boundaries."""

    video_id: str
    s: int
    e: int
    y: int

    def __post_init__(self):
        if not (0 <= self.s <= self.e):
            raise ValidationError(f"bad instance bounds ({self.s}, {self.e})")
        if self.y < 0:
            raise ValidationError(f"negative class id {self.y}")


@dataclass(frozen=True)
class Proposal:
    """A candidate instance (s, e, class, confidence), inclusive ends."""

    video_id: str
    s: int
    e: int
    y: int
    confidence: float

    def __post_init__(self):
        if self.s > self.e:
            raise ValidationError(f"proposal start {self.s} after end {self.e}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValidationError(f"confidence {self.confidence} outside [0, 1]")


class ScoreMaps:
    """Per-snippet class scores P (T x C), background scores Q (T,) and their fusion.

    The fused map is derived in the constructor, so ``P_hat = P * (1 - Q)``
    holds by construction and cannot be violated.
    """

    __slots__ = ("P", "Q", "P_hat")

    def __init__(self, P: np.ndarray, Q: np.ndarray):
        P = np.ascontiguousarray(P, dtype=np.float64)
        Q = np.ascontiguousarray(Q, dtype=np.float64)
        if P.ndim != 2 or Q.ndim != 1 or P.shape[0] != Q.shape[0]:
            raise ValidationError(f"inconsistent shapes P{P.shape} Q{Q.shape}")
        if P.size and (P.min() < 0.0 or P.max() > 1.0):
            raise ValidationError("P entries outside [0, 1]")
        if Q.size and (Q.min() < 0.0 or Q.max() > 1.0):
            raise ValidationError("Q entries outside [0, 1]")
        self.P = P
        self.Q = Q
        self.P_hat = P * (1.0 - Q)[:, None]
        for a in (self.P, self.Q, self.P_hat):
            a.setflags(write=False)

    @property
    def T(self) -> int:
        return self.P.shape[0]

    @property
    def C(self) -> int:
        return self.P.shape[1]


@dataclass(frozen=True)
class PseudoLabelSet:
    """Mined supervision: pseudo-action snippets (with classes) and pseudo-background snippets."""

    action_snippets: tuple  # of (t, y)
    background_snippets: tuple  # of t

    def __post_init__(self):
        acts = tuple((int(t), int(y)) for t, y in self.action_snippets)
        bkgs = tuple(int(t) for t in self.background_snippets)
        act_ts = {t for t, _ in acts}
        if act_ts & set(bkgs):
            raise ValidationError("pseudo-action and pseudo-background snippets overlap")
        object.__setattr__(self, "action_snippets", acts)
        object.__setattr__(self, "background_snippets", bkgs)

    @property
    def N_act(self) -> int:
        return len(self.action_snippets)

    @property
    def N_bkg(self) -> int:
        return len(self.background_snippets)


# ---------------------------------------------------------------------------
# Feature file I/O
# ---------------------------------------------------------------------------


def write_features(seq: FeatureSequence, path) -> None:
    """Write a feature sequence in the binary ``.feat`` container format."""
    header = json.dumps({"video_id": seq.video_id, "T": seq.T, "D": seq.D}) + "\n"
    payload = np.asarray(seq.values, dtype="<f4").tobytes(order="C")
    tmp = str(path) + ".tmp"
    try:
        with open(tmp, "wb") as f:
            f.write(FEATURE_MAGIC)
            f.write(header.encode("utf-8"))
            f.write(payload)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"failed writing feature file {path}: {exc}") from exc


def read_features(path) -> FeatureSequence:
    """Read a feature sequence written by :func:`write_features`."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise OSError(f"failed reading feature file {path}: {exc}") from exc

    if raw[: len(FEATURE_MAGIC)] != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic at offset 0")
    nl = raw.find(b"\n", len(FEATURE_MAGIC))
    if nl < 0:
        raise FormatError(f"{path}: unterminated header at offset {len(FEATURE_MAGIC)}")
    try:
        header = json.loads(raw[len(FEATURE_MAGIC) : nl].decode("utf-8"))
        video_id, T, D = header["video_id"], int(header["T"]), int(header["D"])
    except (ValueError, KeyError) as exc:
        raise FormatError(f"{path}: malformed header line: {exc}") from exc
    if T < 1 or D < 1:
        raise FormatError(f"{path}: header declares invalid shape T={T}, D={D}")

    payload_start = nl + 1
    expected = T * D * 4
    actual = len(raw) - payload_start
    if actual != expected:
        raise FormatError(
            f"{path}: payload size mismatch at offset {len(raw)}: "
            f"header implies {expected} bytes, found {actual}"
        )
    values = np.frombuffer(raw, dtype="<f4", count=T * D, offset=payload_start)
    return FeatureSequence(video_id=video_id, values=values.reshape(T, D).astype(np.float64))


# ---------------------------------------------------------------------------
# JSONL files: annotations, ground truth, predictions; manifest
# ---------------------------------------------------------------------------


def _iter_jsonl(path):
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc


def read_annotations(path, num_classes: int | None = None) -> list[PointAnnotationSet]:
    """Read point annotations, sorting each video's points by timestamp.

    Unsorted input is repaired by sorting; anything else out of contract
    (duplicate timestamps, out-of-range t or y) is rejected.
    """
    out = []
    for lineno, obj in _iter_jsonl(path):
        vid, T = obj["video_id"], int(obj["T"])
        pts = sorted((int(p["t"]), int(p["y"])) for p in obj["points"])
        ts = [t for t, _ in pts]
        if len(set(ts)) != len(ts):
            raise ValidationError(f"{path}:{lineno}: duplicate point t in video {vid!r}")
        if num_classes is not None:
            for t, y in pts:
                if y >= num_classes:
                    raise ValidationError(
                        f"{path}:{lineno}: video {vid!r} point (t={t}, y={y}) "
                        f"has class id >= C={num_classes}"
                    )
        out.append(PointAnnotationSet(video_id=vid, T=T, points=tuple(pts)))
    return out


def write_annotations(annos: list[PointAnnotationSet], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for a in annos:
            obj = {
                "video_id": a.video_id,
                "T": a.T,
                "points": [{"t": t, "y": y} for t, y in a.points],
            }
            f.write(json.dumps(obj) + "\n")


def read_ground_truth(path) -> dict[str, list[GroundTruthInstance]]:
    """Read ground-truth instances, one JSON object per video."""
    out: dict[str, list[GroundTruthInstance]] = {}
    for lineno, obj in _iter_jsonl(path):
        vid = obj["video_id"]
        if vid in out:
            raise ValidationError(f"{path}:{lineno}: duplicate video {vid!r}")
        out[vid] = [
            GroundTruthInstance(video_id=vid, s=int(i["s"]), e=int(i["e"]), y=int(i["y"]))
            for i in obj["instances"]
        ]
    return out


def write_ground_truth(gt: dict[str, list[GroundTruthInstance]], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for vid in gt:
            obj = {
                "video_id": vid,
                "instances": [{"s": g.s, "e": g.e, "y": g.y} for g in gt[vid]],
            }
            f.write(json.dumps(obj) + "\n")


def read_predictions(path) -> dict[str, list[Proposal]]:
    """Read predicted proposals; same schema as ground truth plus a confidence."""
    out: dict[str, list[Proposal]] = {}
    for lineno, obj in _iter_jsonl(path):
        vid = obj["video_id"]
        if vid in out:
            raise ValidationError(f"{path}:{lineno}: duplicate video {vid!r}")
        out[vid] = [
            Proposal(
                video_id=vid,
                s=int(i["s"]),
                e=int(i["e"]),
                y=int(i["y"]),
                confidence=float(i["confidence"]),
            )
            for i in obj["instances"]
        ]
    return out


def write_predictions(preds: dict[str, list[Proposal]], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for vid in preds:
            obj = {
                "video_id": vid,
                "instances": [
                    {"s": p.s, "e": p.e, "y": p.y, "confidence": p.confidence}
                    for p in preds[vid]
                ],
            }
            f.write(json.dumps(obj) + "\n")


@dataclass(frozen=True)
class DatasetManifest:
    C: int
    videos: tuple
    class_names: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "videos", tuple(self.videos))
        names = tuple(self.class_names) if self.class_names else tuple(
            f"class_{c}" for c in range(self.C)
        )
        if len(names) != self.C:
            raise ValidationError(f"{len(names)} class names for C={self.C}")
        object.__setattr__(self, "class_names", names)


def read_manifest(path) -> DatasetManifest:
    with open(path, "r", encoding="utf-8") as f:
        obj = json.load(f)
    return DatasetManifest(
        C=int(obj["C"]),
        videos=tuple(obj["videos"]),
        class_names=tuple(obj.get("class_names", ())),
    )


def write_manifest(manifest: DatasetManifest, path) -> None:
    obj = {
        "C": manifest.C,
        "videos": list(manifest.videos),
        "class_names": list(manifest.class_names),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f)
        f.write("\n")


# ---------------------------------------------------------------------------
# Dataset directory bundle
# ---------------------------------------------------------------------------


@dataclass
class DatasetBundle:
    """Everything a dataset directory holds, loaded into memory."""

    manifest: DatasetManifest
    features: dict = field(default_factory=dict)  # video_id -> FeatureSequence
    points: dict = field(default_factory=dict)  # video_id -> PointAnnotationSet
    gt: dict = field(default_factory=dict)  # video_id -> [GroundTruthInstance]


def load_dataset_dir(path) -> DatasetBundle:
    """Load manifest, features and (if present) points/gt from a dataset directory."""
    root = Path(path)
    manifest = read_manifest(root / "manifest.json")
    bundle = DatasetBundle(manifest=manifest)
    for vid in manifest.videos:
        bundle.features[vid] = read_features(root / "features" / f"{vid}.feat")
    points_path = root / "points.jsonl"
    if points_path.exists():
        for anno in read_annotations(points_path, num_classes=manifest.C):
            bundle.points[anno.video_id] = anno
    gt_path = root / "gt.jsonl"
    if gt_path.exists():
        bundle.gt = read_ground_truth(gt_path)
    return bundle
