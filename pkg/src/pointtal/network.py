"""Trainable computation: embedder, snippet classifier, task adapters and heads.

The model runs in float64 end to end so gradient checks against central
finite differences hold at tight tolerances; checkpoints store float32.

Architecture
------------
* embedder: input projection to the model width, fixed sinusoidal position
  signal, two self-attention encoder layers, then a temporal convolution
  and ReLU. Output features are therefore nonnegative.
* classifier: one temporal convolution emitting C+1 channels through a
  sigmoid; the first C channels are the per-class scores P, the last is
  the class-agnostic background score Q.
* three task adapters (affine, ReLU, affine) projecting shared features
  into task-specific spaces for completion / order / regularity heads.
* completion head: predicts the center snippet feature from the flattened
  left and right context windows.
* two discriminators (order, regularity): affine, ReLU, affine, sigmoid
  over a flattened window, so ordering is visible to the first layer.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

CHECKPOINT_MAGIC = b"PTCK1\n"

TASKS = ("ac", "aou", "aru")
DISCRIMINATORS = ("order", "regularity")


@dataclass(frozen=True)
class NetConfig:
    D: int = 32  # input feature dimension
    D_e: int = 64  # embedder width
    D_a: int = 64  # adapter width
    D_h: int = 64  # hidden width of the completion head and discriminators
    F_e: int | None = None  # encoder feed-forward width, defaults to 2 * D_e
    H: int = 4  # attention heads
    k: int = 3  # temporal conv kernel (odd)
    t: int = 2  # half-window; window length is 2t + 1
    C: int = 3  # action classes
    # absolute positions let the encoder and discriminators memorize
    # per-video layouts instead of content; off by default
    positional_encoding: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.F_e is None:
            object.__setattr__(self, "F_e", 2 * self.D_e)
        if self.k % 2 != 1:
            raise ValueError(f"conv kernel k={self.k} must be odd")
        if self.t < 1:
            raise ValueError(f"half-window t={self.t} must be >= 1")
        if self.D_e % self.H != 0:
            raise ValueError(f"D_e={self.D_e} must be divisible by H={self.H}")

    @property
    def window_length(self) -> int:
        return 2 * self.t + 1


def sinusoidal_positions(T: int, dim: int, dtype=torch.float64) -> torch.Tensor:
    """Fixed sine/cosine position signal of shape (T, dim)."""
    pos = torch.arange(T, dtype=dtype)[:, None]
    i = torch.arange(0, dim, 2, dtype=dtype)
    angle = pos / torch.pow(torch.tensor(10000.0, dtype=dtype), i / dim)
    pe = torch.zeros(T, dim, dtype=dtype)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle[:, : dim // 2])
    return pe


class ActionLocalizer(nn.Module):
    """Shared embedder with the classification head and three auxiliary heads."""

    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        c = config
        self.input_proj = nn.Linear(c.D, c.D_e)
        layer = nn.TransformerEncoderLayer(
            d_model=c.D_e,
            nhead=c.H,
            dim_feedforward=c.F_e,
            dropout=0.0,
            batch_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=2)
        self.temporal_conv = nn.Conv1d(c.D_e, c.D_e, c.k, padding=c.k // 2)
        self.classifier = nn.Conv1d(c.D_e, c.C + 1, c.k, padding=c.k // 2)
        self.adapters = nn.ModuleDict(
            {
                task: nn.Sequential(
                    nn.Linear(c.D_e, c.D_a), nn.ReLU(), nn.Linear(c.D_a, c.D_a)
                )
                for task in TASKS
            }
        )
        self.completion_head = nn.Sequential(
            nn.Linear(2 * c.t * c.D_a, c.D_h), nn.ReLU(), nn.Linear(c.D_h, c.D_a)
        )
        self.discriminators = nn.ModuleDict(
            {
                name: nn.Sequential(
                    nn.Linear(c.window_length * c.D_a, c.D_h),
                    nn.ReLU(),
                    nn.Linear(c.D_h, 1),
                )
                for name in DISCRIMINATORS
            }
        )
        self.double()

    # -- forward pieces ----------------------------------------------------

    def embed(self, features: torch.Tensor) -> torch.Tensor:
        """Embed raw (T, D) features into (T, D_e); entries are >= 0."""
        if features.ndim != 2 or features.shape[1] != self.config.D:
            raise ValueError(
                f"expected (T, {self.config.D}) input, got {tuple(features.shape)}"
            )
        x = self.input_proj(features)
        if self.config.positional_encoding:
            x = x + sinusoidal_positions(x.shape[0], self.config.D_e, dtype=x.dtype)
        x = self.encoder(x.unsqueeze(0)).squeeze(0)
        x = self.temporal_conv(x.T.unsqueeze(0)).squeeze(0).T
        return torch.relu(x)

    def classify(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-snippet class scores P (T, C) and background scores Q (T,)."""
        logits = self.classifier(x.T.unsqueeze(0)).squeeze(0).T
        scores = torch.sigmoid(logits)
        return scores[:, : self.config.C], scores[:, self.config.C]

    def adapt(self, x: torch.Tensor, task: str) -> torch.Tensor:
        """Project shared features into the given task's space, shape (T, D_a)."""
        if task not in TASKS:
            raise ValueError(f"unknown task {task!r}, expected one of {TASKS}")
        return self.adapters[task](x)

    def ac_predict(self, left: torch.Tensor, right: torch.Tensor) -> torch.Tensor:
        """Predict the center snippet feature from its ordered left/right context.

        ``left`` holds the t preceding snippets in ascending index order,
        ``right`` the t succeeding snippets in descending index order; the
        head sees their flat concatenation.
        """
        t, D_a = self.config.t, self.config.D_a
        if left.shape != (t, D_a) or right.shape != (t, D_a):
            raise ValueError(
                f"context blocks must be ({t}, {D_a}), got "
                f"{tuple(left.shape)} and {tuple(right.shape)}"
            )
        flat = torch.cat([left.reshape(-1), right.reshape(-1)])
        return self.completion_head(flat)

    def discriminate(self, window: torch.Tensor, which: str) -> torch.Tensor:
        """Score a (2t+1, D_a) window; returns a scalar probability in (0, 1)."""
        if which not in DISCRIMINATORS:
            raise ValueError(f"unknown discriminator {which!r}, expected {DISCRIMINATORS}")
        if window.shape != (self.config.window_length, self.config.D_a):
            raise ValueError(
                f"window must be ({self.config.window_length}, {self.config.D_a}), "
                f"got {tuple(window.shape)}"
            )
        logit = self.discriminators[which](window.reshape(-1))
        return torch.sigmoid(logit).squeeze(0)

    # batched variants of the window heads (same affine maps, one call per video)

    def ac_predict_batch(self, left: torch.Tensor, right: torch.Tensor) -> torch.Tensor:
        """ac_predict over M windows: (M, t, D_a) blocks -> (M, D_a) predictions."""
        m = left.shape[0]
        flat = torch.cat([left.reshape(m, -1), right.reshape(m, -1)], dim=1)
        return self.completion_head(flat)

    def discriminate_batch(self, windows: torch.Tensor, which: str) -> torch.Tensor:
        """discriminate over M windows: (M, 2t+1, D_a) -> (M,) probabilities."""
        if which not in DISCRIMINATORS:
            raise ValueError(f"unknown discriminator {which!r}, expected {DISCRIMINATORS}")
        logits = self.discriminators[which](windows.reshape(windows.shape[0], -1))
        return torch.sigmoid(logits).squeeze(-1)


def fuse_scores(P, Q):
    """Fuse class scores with background scores: P_hat[t, c] = P[t, c] * (1 - Q[t])."""
    return P * (1.0 - Q)[:, None]


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def _fan_in(param: torch.Tensor) -> int:
    return int(np.prod(param.shape[1:]))


def init_params(model: ActionLocalizer, seed: int) -> ActionLocalizer:
    """Deterministically initialize all parameters in place.

    Weights with >= 2 dims get uniform fan-in scaling (std 1/sqrt(fan_in)),
    biases are zero, and normalization scales are one.
    """
    gen = torch.Generator().manual_seed(seed & 0x7FFFFFFFFFFFFFFF)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if p.ndim >= 2:
                bound = math.sqrt(3.0) / math.sqrt(_fan_in(p))
                p.uniform_(-bound, bound, generator=gen)
            elif name.endswith("bias"):
                p.zero_()
            else:  # normalization scale vectors
                p.fill_(1.0)
    return model


def build_model(config: NetConfig) -> ActionLocalizer:
    """Construct and deterministically initialize a model from its config."""
    model = ActionLocalizer(config)
    return init_params(model, config.seed)


# ---------------------------------------------------------------------------
# Checkpoint I/O: JSON header + named float32 LE parameter blobs
# ---------------------------------------------------------------------------


def save_checkpoint(model: ActionLocalizer, path, step: int = 0, seed: int = 0) -> None:
    """Write the model atomically: magic, JSON header line, float32 blobs."""
    state = model.state_dict()
    names = list(state.keys())
    header = {
        "config": asdict(model.config),
        "step": int(step),
        "seed": int(seed),
        "tensors": [{"name": n, "shape": list(state[n].shape)} for n in names],
    }
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write((json.dumps(header) + "\n").encode("utf-8"))
        for n in names:
            f.write(state[n].numpy().astype("<f4").tobytes(order="C"))
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[ActionLocalizer, dict]:
    """Rebuild a model from a checkpoint file; returns (model, header)."""
    from .datamodel import FormatError

    with open(path, "rb") as f:
        raw = f.read()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic at offset 0")
    nl = raw.find(b"\n", len(CHECKPOINT_MAGIC))
    if nl < 0:
        raise FormatError(f"{path}: unterminated checkpoint header")
    header = json.loads(raw[len(CHECKPOINT_MAGIC) : nl].decode("utf-8"))
    config = NetConfig(**header["config"])
    model = ActionLocalizer(config)

    offset = nl + 1
    state = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(raw):
            raise FormatError(f"{path}: truncated tensor {entry['name']} at offset {offset}")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        state[entry["name"]] = torch.from_numpy(arr.astype(np.float64))
        offset = end
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes at offset {offset}")
    model.load_state_dict(state)
    return model, header
