import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from pointtal.network import NetConfig, build_model


def tiny_config(seed: int = 0, **kwargs) -> NetConfig:
    """Smallest config exercising every code path (T<=12, D=8, C=2, t=2)."""
    base = dict(D=8, D_e=8, D_a=8, D_h=8, F_e=8, H=2, k=3, t=2, C=2, seed=seed)
    base.update(kwargs)
    return NetConfig(**base)


@pytest.fixture
def tiny_model():
    return build_model(tiny_config(seed=0))


@pytest.fixture
def rand_input():
    gen = torch.Generator().manual_seed(123)
    return torch.randn(10, 8, dtype=torch.float64, generator=gen)
