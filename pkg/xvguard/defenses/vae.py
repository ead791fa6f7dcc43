from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn
from torch.utils.data import DataLoader, TensorDataset

from ..core import derive_seed, seeded_rng
from ..dsp import LogMelExtractor
from ..errors import DivergenceError
from ..logger import get_logger
from .chain import Stage

__all__ = "VaeConfig", "VaeModel", "VaeStage", "gaussian_kl", "train_vae", "vae_denoise"

log = get_logger("vae")

DOWNSAMPLE = 8


@dataclass(frozen=True)
class VaeConfig:
    """Denoising VAE architecture and training settings"""

    n_mels: int = 80
    hidden: int = 64
    latent: int = 10
    """Latent channels at T/8"""
    epochs: int = 20
    lr: float = 1e-3
    batch_size: int = 32
    noise_sigma: float = 0.1
    """Upper bound of the waveform noise the encoder sees during training"""

    def __post_init__(self) -> None:
        if min(self.n_mels, self.hidden, self.latent) < 1:
            raise ValueError("n_mels, hidden and latent must be positive")

        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs and batch_size must be >= 1 and lr positive")

        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


def gaussian_kl(
    mu_q: torch.Tensor,
    logvar_q: torch.Tensor,
    mu_p: torch.Tensor | float = 0.0,
    logvar_p: torch.Tensor | float = 0.0,
) -> torch.Tensor:
    """
    Elementwise `KL(N(mu_q, var_q) || N(mu_p, var_p))` for diagonal Gaussians.

    Zero when both distributions coincide, never negative.
    """
    mu_p = torch.as_tensor(mu_p, dtype=mu_q.dtype)
    logvar_p = torch.as_tensor(logvar_p, dtype=mu_q.dtype)
    return 0.5 * (logvar_p - logvar_q + (logvar_q.exp() + (mu_q - mu_p).pow(2)) / logvar_p.exp() - 1)


class VaeModel(nn.Module):
    """
    Convolutional VAE over log-Mel features.

    The encoder downsamples time by 8 and predicts the posterior mean, the decoder mirrors
    it and predicts the feature mean. Both variances are trainable constants (per latent
    channel and per Mel bin).
    """

    def __init__(self, config: VaeConfig | None = None) -> None:
        super().__init__()
        self.config = config or VaeConfig()
        c, h, z = self.config.n_mels, self.config.hidden, self.config.latent
        self.encoder = nn.Sequential(
            nn.Conv1d(c, h, 3, padding=1),
            nn.ReLU(),
            nn.Conv1d(h, h, 4, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv1d(h, h, 4, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv1d(h, h, 4, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv1d(h, z, 1),
        )
        self.decoder = nn.Sequential(
            nn.Conv1d(z, h, 1),
            nn.ReLU(),
            nn.ConvTranspose1d(h, h, 4, stride=2, padding=1),
            nn.ReLU(),
            nn.ConvTranspose1d(h, h, 4, stride=2, padding=1),
            nn.ReLU(),
            nn.ConvTranspose1d(h, h, 4, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv1d(h, c, 3, padding=1),
        )
        self.posterior_logvar = nn.Parameter(torch.full((z, 1), -2.0))
        self.output_logvar = nn.Parameter(torch.zeros(c, 1))

    def _pad(self, features: torch.Tensor) -> torch.Tensor:
        frames = features.shape[-2]
        extra = (-frames) % DOWNSAMPLE
        x = features.transpose(-1, -2)
        return F.pad(x, (0, extra), mode="replicate") if extra else x

    def encode(self, features: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """
        Posterior of `(B, frames, n_mels)` features.

        Returns:
            Mean `(B, latent, ceil(frames / 8))` and the matching log-variance
        """
        mu = self.encoder(self._pad(features))
        return mu, self.posterior_logvar.expand_as(mu)

    def decode(self, z: torch.Tensor, frames: int) -> torch.Tensor:
        """Predicted feature mean `(B, frames, n_mels)` for latents `z`."""
        return self.decoder(z)[..., :frames].transpose(-1, -2)

    def sample(self, mu: torch.Tensor, logvar: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
        """Reparameterized posterior draw."""
        noise = torch.randn(mu.shape, generator=generator, dtype=mu.dtype, device=mu.device)
        return mu + (0.5 * logvar).exp() * noise

    def elbo(
        self, noisy: torch.Tensor, clean: torch.Tensor, generator: torch.Generator | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """
        Denoising ELBO per utterance, averaged over feature elements.

        The posterior comes from `noisy`, the likelihood scores `clean`.

        Returns:
            `(elbo, kl)` with shape `(B,)`
        """
        mu, logvar = self.encode(noisy)
        recon = self.decode(self.sample(mu, logvar, generator), clean.shape[-2])
        out_logvar = self.output_logvar.squeeze(-1)
        log_likelihood = -0.5 * ((clean - recon).pow(2) / out_logvar.exp() + out_logvar + math.log(2 * math.pi))
        kl = gaussian_kl(mu, logvar).sum(dim=(-2, -1))
        elements = clean.shape[-2] * clean.shape[-1]
        return (log_likelihood.sum(dim=(-2, -1)) - kl) / elements, kl

    def forward(self, features: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
        mu, logvar = self.encode(features)
        return self.decode(self.sample(mu, logvar, generator), features.shape[-2])


def train_vae(
    waveforms: torch.Tensor,
    config: VaeConfig | None = None,
    *,
    extractor: LogMelExtractor | None = None,
    seed: int = 0,
    trace: list[float] | None = None,
) -> VaeModel:
    """
    Train a denoising VAE on benign waveforms.

    Each batch is corrupted in the waveform domain with Gaussian noise of a per-utterance
    sigma drawn from `U(0, noise_sigma)`. The encoder sees features of the noisy audio,
    the decoder is scored against the clean features.

    Args:
        waveforms: `(N, T)` benign training audio
        config: Architecture and optimization settings
        extractor: Feature front end, the classifier's by default settings
        seed: Initialization, shuffling and noise seed
        trace: Receives the mean ELBO per epoch

    Raises:
        DivergenceError: On a non-finite ELBO or a negative KL term

    Returns:
        The trained model in eval mode
    """
    config = config or VaeConfig()
    extractor = extractor or LogMelExtractor()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(seed, "vae-init"))
        model = VaeModel(config)

    with torch.no_grad():
        clean = extractor(waveforms)
    noise_stream = seeded_rng(derive_seed(seed, "vae-noise"))
    latent_stream = seeded_rng(derive_seed(seed, "vae-latent"))
    loader = DataLoader(
        TensorDataset(waveforms, clean), batch_size=config.batch_size, shuffle=True,
        generator=seeded_rng(derive_seed(seed, "vae-shuffle")),
    )
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    elbos: list[float] = [] if trace is None else trace

    model.train()
    for epoch in range(config.epochs):
        total, count = 0.0, 0
        for xb, target in loader:
            sigma = config.noise_sigma * torch.rand(xb.shape[0], 1, generator=noise_stream, dtype=xb.dtype)
            with torch.no_grad():
                noisy = extractor(xb + sigma * torch.randn(xb.shape, generator=noise_stream, dtype=xb.dtype))
            elbo, kl = model.elbo(noisy, target, latent_stream)
            if not torch.isfinite(elbo).all():
                raise DivergenceError(f"VAE ELBO became non-finite in epoch {epoch}", elbos)
            if bool((kl < 0).any()):
                raise DivergenceError(f"VAE KL term went negative in epoch {epoch}", elbos)
            loss = -elbo.mean()
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(elbo.sum())
            count += xb.shape[0]
        elbos.append(total / count)
        log.info(f"VAE epoch {epoch + 1}/{config.epochs} ELBO {elbos[-1]:.4f}")

    return model.eval()


def vae_denoise(vae: VaeModel, features: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
    """
    Denoise features: draw `z ~ q(z|x)` and return the decoder mean.

    Differentiable end to end.

    Args:
        vae: Trained model
        features: `(B, frames, n_mels)` or `(frames, n_mels)`
        generator: Stream for the latent draw

    Returns:
        Features of the input's shape
    """
    single = features.ndim == 2
    x = features.unsqueeze(0) if single else features
    out = vae(x, generator)
    return out.squeeze(0) if single else out


class VaeStage(Stage):
    """VAE reconstruction as a spectrogram-domain chain stage, legal under E2ED and BPDA."""

    name = "vae"
    domain = "spectrogram"
    differentiable = True
    bpda_identity = True
    stochastic = True

    def __init__(self, vae: VaeModel) -> None:
        super().__init__()
        self.vae = vae.eval().requires_grad_(False)

    def forward(self, x: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
        return vae_denoise(self.vae, x, generator)
