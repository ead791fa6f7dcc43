import pytest
import torch
from torch import nn

from xvguard.data import generate_toy_dataset
from xvguard.model import XVectorConfig, build_classifier


class LinearLogitModel(nn.Module):
    """Two-class toy model with logits `(w . x + b, 0)`."""

    def __init__(self, length: int, bias: float = 2.0, dtype: torch.dtype = torch.float32) -> None:
        super().__init__()
        self.weight = nn.Parameter(torch.ones(length, dtype=dtype), requires_grad=False)
        self.bias = bias

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        score = x @ self.weight + self.bias
        return torch.stack([score, torch.zeros_like(score)], dim=-1)


@pytest.fixture
def tiny_config() -> XVectorConfig:
    return XVectorConfig(n_speakers=4, widths=(2, 4, 4, 4), embed_dim=16)


@pytest.fixture
def tiny_model(tiny_config):
    return build_classifier(tiny_config, seed=0).eval()


@pytest.fixture
def linear_model():
    return LinearLogitModel(length=16)


@pytest.fixture
def one_second_linear_model():
    """Linear model over one second of audio."""
    return LinearLogitModel(length=16000)


@pytest.fixture
def waveforms():
    """Two half-second utterances."""
    generator = torch.Generator().manual_seed(0)
    return 0.3 * torch.rand(2, 8000, generator=generator) - 0.15


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """Four speakers, ten half-second utterances each."""
    out = tmp_path_factory.mktemp("corpus")
    manifest = generate_toy_dataset(out, n_speakers=4, utts_per_speaker=10, duration_s=0.5, seed=0)
    return out, manifest
