"""Point-supervised temporal action localization with temporal-consistency tasks."""

from .datamodel import (
    DatasetBundle,
    FeatureSequence,
    GroundTruthInstance,
    PointAnnotationSet,
    Proposal,
    PseudoLabelSet,
    ScoreMaps,
    load_dataset_dir,
    read_features,
    write_features,
)
from .network import ActionLocalizer, NetConfig, build_model, fuse_scores
from .supervision import LossWeights, mine_pseudo_labels
from .synthgen import PointStrategy, SynthSpec, generate_dataset, sample_points
from .trainer import TrainConfig, evaluate_proxy, train

__version__ = "0.1.0"

__all__ = [
    "ActionLocalizer",
    "DatasetBundle",
    "FeatureSequence",
    "GroundTruthInstance",
    "LossWeights",
    "NetConfig",
    "PointAnnotationSet",
    "PointStrategy",
    "Proposal",
    "PseudoLabelSet",
    "ScoreMaps",
    "SynthSpec",
    "TrainConfig",
    "build_model",
    "evaluate_proxy",
    "fuse_scores",
    "generate_dataset",
    "load_dataset_dir",
    "mine_pseudo_labels",
    "read_features",
    "sample_points",
    "train",
    "write_features",
]
