from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import torch
import torch.nn.functional as F
from torch import nn

from ..core import derive_seed, seeded_rng
from ..dsp import DEFAULT_RESOLUTIONS, FeatureConfig, LogMelExtractor, multi_res_stft_loss
from ..errors import DivergenceError
from ..logger import get_logger
from ..types import Waveform
from .chain import Stage

__all__ = (
    "VocoderConfig",
    "VocoderDiscriminator",
    "VocoderModel",
    "VocoderStage",
    "train_vocoder",
    "vocoder_reconstruct",
)

log = get_logger("vocoder")


@dataclass(frozen=True)
class VocoderConfig:
    """Vocoder architecture and training settings"""

    features: FeatureConfig = field(default_factory=lambda: FeatureConfig(mean_norm=False))
    """Conditioning front end, un-normalized log-Mel energies"""
    channels: int = 32
    layers: int = 10
    dilation_cycle: int = 5
    """Dilations run 1, 2, ..., 2^(cycle-1) and repeat"""
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 8
    segment_samples: int = 8000
    """Random training crop length"""
    adversarial: bool = False
    """Add the least-squares GAN term to the STFT loss"""
    adversarial_weight: float = 4.0
    adversarial_start: int = 10
    """Epoch from which the adversarial term is active"""
    discriminator_lr: float = 5e-5
    holdout_fraction: float = 0.1

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", replace(self.features, mean_norm=False))

        if min(self.channels, self.layers, self.dilation_cycle) < 1:
            raise ValueError("channels, layers and dilation_cycle must be positive")

        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0 or self.discriminator_lr <= 0:
            raise ValueError("epochs and batch_size must be >= 1, learning rates positive")

        if self.segment_samples < self.features.window_length:
            raise ValueError("segment_samples must cover at least one analysis window")

        if self.adversarial_weight < 0 or self.adversarial_start < 0:
            raise ValueError("adversarial_weight and adversarial_start must be non-negative")

        if not 0 < self.holdout_fraction < 1:
            raise ValueError("holdout_fraction must lie in (0, 1)")


class _GatedBlock(nn.Module):
    def __init__(self, channels: int, cond_channels: int, dilation: int) -> None:
        super().__init__()
        self.dilated = nn.Conv1d(channels, 2 * channels, 3, dilation=dilation, padding=dilation)
        self.condition = nn.Conv1d(cond_channels, 2 * channels, 1, bias=False)
        self.residual = nn.Conv1d(channels, channels, 1)
        self.skip = nn.Conv1d(channels, channels, 1)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        a, b = (self.dilated(x) + self.condition(cond)).chunk(2, dim=1)
        h = torch.tanh(a) * torch.sigmoid(b)
        return (x + self.residual(h)) * math.sqrt(0.5), self.skip(h)


class VocoderModel(nn.Module):
    """
    Non-autoregressive gated dilated-convolution vocoder.

    Maps a standard normal latent of waveform length plus the log-Mel spectrogram of the
    waveform back to audio. The conditioning frames are repeated `hop` times and aligned
    to the centers of their analysis windows, so the output has the input's length.
    """

    def __init__(self, config: VocoderConfig | None = None) -> None:
        super().__init__()
        self.config = config or VocoderConfig()
        cfg = self.config
        self.extractor = LogMelExtractor(cfg.features)
        self.input = nn.Conv1d(1, cfg.channels, 1)
        self.blocks = nn.ModuleList(
            _GatedBlock(cfg.channels, cfg.features.n_mels, 2 ** (i % cfg.dilation_cycle)) for i in range(cfg.layers)
        )
        self.output = nn.Sequential(
            nn.ReLU(),
            nn.Conv1d(cfg.channels, cfg.channels, 1),
            nn.ReLU(),
            nn.Conv1d(cfg.channels, 1, 1),
            nn.Tanh(),
        )

    def upsample(self, mel: torch.Tensor, length: int) -> torch.Tensor:
        """
        Stretch `(B, frames, n_mels)` conditioning to `(B, n_mels, length)` samples.
        """
        feats = self.config.features
        cond = mel.transpose(-1, -2).repeat_interleave(feats.hop, dim=-1)
        # frame i is centered on sample i * hop + window / 2
        lead = (feats.window_length - feats.hop) // 2
        trail = length - cond.shape[-1] - lead
        if trail >= 0:
            return F.pad(cond, (lead, trail), mode="replicate")
        return F.pad(cond, (lead, 0), mode="replicate")[..., :length]

    def forward(self, x: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        """
        Args:
            x: `(B, T)` waveforms to condition on
            z: `(B, T)` latent noise

        Returns:
            `(B, T)` reconstructed waveforms
        """
        # fixed rescaling keeps raw log energies near unit range
        cond = self.upsample(self.extractor(x) * 0.1, x.shape[-1])
        h = self.input(z.unsqueeze(1))
        skips = torch.zeros_like(h)
        for block in self.blocks:
            h, skip = block(h, cond)
            skips = skips + skip
        return self.output(skips * math.sqrt(1.0 / len(self.blocks))).squeeze(1)


class VocoderDiscriminator(nn.Module):
    """Sample-level waveform discriminator with dilated convolutions."""

    def __init__(self, channels: int = 32, layers: int = 6) -> None:
        super().__init__()
        modules: list[nn.Module] = [nn.Conv1d(1, channels, 3, padding=1), nn.LeakyReLU(0.2)]
        for i in range(1, layers - 1):
            modules += [nn.Conv1d(channels, channels, 3, dilation=2**i, padding=2**i), nn.LeakyReLU(0.2)]
        modules.append(nn.Conv1d(channels, 1, 3, padding=1))
        self.body = nn.Sequential(*modules)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x.unsqueeze(1)).squeeze(1)


def _crops(x: torch.Tensor, length: int, stream: torch.Generator) -> torch.Tensor:
    if x.shape[-1] <= length:
        return x
    starts = torch.randint(0, x.shape[-1] - length + 1, (x.shape[0],), generator=stream)
    return torch.stack([row[s : s + length] for row, s in zip(x, starts.tolist())])


@torch.no_grad()
def _held_out_loss(model: VocoderModel, x: torch.Tensor, stream_seed: int, batch_size: int) -> float:
    stream = seeded_rng(stream_seed)
    total = 0.0
    for start in range(0, x.shape[0], batch_size):
        xb = x[start : start + batch_size]
        z = torch.randn(xb.shape, generator=stream, dtype=xb.dtype)
        total += float(multi_res_stft_loss(model(xb, z), xb, DEFAULT_RESOLUTIONS)) * xb.shape[0]
    return total / x.shape[0]


def train_vocoder(
    waveforms: torch.Tensor,
    config: VocoderConfig | None = None,
    *,
    seed: int = 0,
    trace: list[float] | None = None,
) -> VocoderModel:
    """
    Train the vocoder on benign waveforms.

    The loss is the multi-resolution STFT loss between reconstruction and target, plus a
    least-squares adversarial term when `config.adversarial` is set. A seeded fraction
    of the utterances is held out and scored after every epoch.

    Args:
        waveforms: `(N, T)` benign audio, N >= 2
        config: Architecture and optimization settings
        seed: Initialization, split, crop and latent seed
        trace: Receives the held-out STFT loss, before training first and then per epoch

    Raises:
        DivergenceError: On a non-finite loss

    Returns:
        The trained vocoder in eval mode
    """
    config = config or VocoderConfig()
    if waveforms.ndim != 2 or waveforms.shape[0] < 2:
        raise ValueError("expected at least two (N, T) training waveforms")

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(seed, "vocoder-init"))
        model = VocoderModel(config)
        critic = VocoderDiscriminator(config.channels)

    order = torch.randperm(waveforms.shape[0], generator=seeded_rng(derive_seed(seed, "vocoder-split")))
    n_held = max(1, round(waveforms.shape[0] * config.holdout_fraction))
    held, train = waveforms[order[:n_held]], waveforms[order[n_held:]]
    stream = seeded_rng(derive_seed(seed, "vocoder-train"))
    held_seed = derive_seed(seed, "vocoder-holdout")

    g_opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    d_opt = torch.optim.Adam(critic.parameters(), lr=config.discriminator_lr)
    losses: list[float] = [] if trace is None else trace
    losses.append(_held_out_loss(model.eval(), held, held_seed, config.batch_size))

    for epoch in range(config.epochs):
        model.train()
        adversarial = config.adversarial and epoch >= config.adversarial_start
        perm = torch.randperm(train.shape[0], generator=stream)
        for start in range(0, train.shape[0], config.batch_size):
            target = _crops(train[perm[start : start + config.batch_size]], config.segment_samples, stream)
            z = torch.randn(target.shape, generator=stream, dtype=target.dtype)
            fake = model(target, z)
            loss = multi_res_stft_loss(fake, target, DEFAULT_RESOLUTIONS)

            if adversarial:
                d_fake = critic(fake.detach())
                d_loss = (critic(target) - 1).pow(2).mean() + d_fake.pow(2).mean()
                if not torch.isfinite(d_loss):
                    raise DivergenceError(f"vocoder discriminator loss became non-finite in epoch {epoch}", losses)
                d_opt.zero_grad()
                d_loss.backward()
                d_opt.step()
                loss = loss + config.adversarial_weight * (critic(fake) - 1).pow(2).mean()

            if not torch.isfinite(loss):
                raise DivergenceError(f"vocoder loss became non-finite in epoch {epoch}", losses)
            g_opt.zero_grad()
            loss.backward()
            g_opt.step()

        losses.append(_held_out_loss(model.eval(), held, held_seed, config.batch_size))
        log.info(f"Vocoder epoch {epoch + 1}/{config.epochs} held-out STFT loss {losses[-1]:.4f}")

    return model.eval()


def vocoder_reconstruct(
    vocoder: VocoderModel, x: Waveform | torch.Tensor, generator: torch.Generator | None = None
) -> Waveform | torch.Tensor:
    """
    Resynthesize audio from its own log-Mel spectrogram and a fresh latent draw.

    Differentiable w.r.t. `x` through the conditioning features.

    Args:
        vocoder: Trained vocoder
        x: Waveform, `(T,)` or `(B, T)` tensor
        generator: Stream for the latent

    Returns:
        Reconstruction of the same type and length as `x`
    """
    samples = x.samples if isinstance(x, Waveform) else x
    batch = samples.unsqueeze(0) if samples.ndim == 1 else samples
    z = torch.randn(batch.shape, generator=generator, dtype=batch.dtype, device=batch.device)
    out = vocoder(batch, z)
    if isinstance(x, Waveform):
        return Waveform(samples=out[0].detach().clamp(-1.0, 1.0), sample_rate=x.sample_rate)
    return out.squeeze(0) if samples.ndim == 1 else out


class VocoderStage(Stage):
    """Vocoder resynthesis as a waveform-domain chain stage."""

    name = "vocoder"
    domain = "waveform"
    differentiable = True
    bpda_identity = True
    stochastic = True

    def __init__(self, vocoder: VocoderModel) -> None:
        super().__init__()
        self.vocoder = vocoder.eval().requires_grad_(False)

    def forward(self, x: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
        out = vocoder_reconstruct(self.vocoder, x, generator)
        assert isinstance(out, torch.Tensor)
        return out
