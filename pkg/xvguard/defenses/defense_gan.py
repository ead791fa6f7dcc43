from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from ..core import derive_seed, seeded_rng
from ..errors import DivergenceError
from ..logger import get_logger
from .chain import Stage

__all__ = (
    "PATCH_FRAMES",
    "DefenseGanConfig",
    "DefenseGanStage",
    "GanConfig",
    "GanCritic",
    "GanGenerator",
    "defense_gan_project",
    "extract_patches",
    "gradient_penalty",
    "train_wgan",
)

PATCH_FRAMES = 80
"""Frames per spectrogram patch, also the projection block length"""

log = get_logger("defense_gan")


@dataclass(frozen=True)
class GanConfig:
    """WGAN-GP architecture and training settings"""

    latent_dim: int = 100
    width: int = 32
    n_mels: int = 80
    steps: int = 2000
    """Generator updates"""
    n_critic: int = 5
    gp_weight: float = 10.0
    lr: float = 1e-4
    betas: tuple[float, float] = (0.5, 0.9)
    batch_size: int = 32

    def __post_init__(self) -> None:
        if self.latent_dim < 1 or self.width < 1:
            raise ValueError("latent_dim and width must be positive")

        if self.n_mels != PATCH_FRAMES:
            raise ValueError(f"patches are {PATCH_FRAMES}x{PATCH_FRAMES}, n_mels must be {PATCH_FRAMES}")

        if self.steps < 1 or self.n_critic < 1 or self.batch_size < 1:
            raise ValueError("steps, n_critic and batch_size must be >= 1")

        if self.gp_weight < 0 or self.lr <= 0:
            raise ValueError("gp_weight must be non-negative and lr positive")


@dataclass(frozen=True)
class DefenseGanConfig:
    """Latent projection settings"""

    restarts: int = 10
    iterations: int = 300
    lr: float = 0.025
    alpha: float = 0.5
    """Blend weight of the reconstruction, `alpha * G(z*) + (1 - alpha) * x`"""

    def __post_init__(self) -> None:
        if self.restarts < 1 or self.iterations < 1:
            raise ValueError("restarts and iterations must be >= 1")

        if self.lr <= 0:
            raise ValueError("lr must be positive")

        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")


class GanGenerator(nn.Module):
    """Latent vector to a `1 x 80 x 80` (frames x Mel bins) patch."""

    def __init__(self, config: GanConfig | None = None) -> None:
        super().__init__()
        self.config = config or GanConfig()
        w = self.config.width
        self.project = nn.Sequential(nn.Linear(self.config.latent_dim, 8 * w * 5 * 5), nn.BatchNorm1d(8 * w * 5 * 5), nn.ReLU())
        self.body = nn.Sequential(
            nn.ConvTranspose2d(8 * w, 4 * w, 4, stride=2, padding=1),
            nn.BatchNorm2d(4 * w),
            nn.ReLU(),
            nn.ConvTranspose2d(4 * w, 2 * w, 4, stride=2, padding=1),
            nn.BatchNorm2d(2 * w),
            nn.ReLU(),
            nn.ConvTranspose2d(2 * w, w, 4, stride=2, padding=1),
            nn.BatchNorm2d(w),
            nn.ReLU(),
            nn.ConvTranspose2d(w, 1, 4, stride=2, padding=1),
        )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        h = self.project(z).view(z.shape[0], 8 * self.config.width, 5, 5)
        return self.body(h)


class GanCritic(nn.Module):
    """Patch to a scalar Wasserstein critic score, no normalization layers."""

    def __init__(self, config: GanConfig | None = None) -> None:
        super().__init__()
        self.config = config or GanConfig()
        w = self.config.width
        self.body = nn.Sequential(
            nn.Conv2d(1, w, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(w, 2 * w, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(2 * w, 4 * w, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(4 * w, 8 * w, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
        )
        self.head = nn.Linear(8 * w * 5 * 5, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.body(x).flatten(1)).squeeze(-1)


def gradient_penalty(critic: nn.Module, points: torch.Tensor) -> torch.Tensor:
    """
    Per-sample `(||grad_x D(x)|| - 1)^2` at the given points.

    Args:
        critic: Critic
        points: `(B, 1, 80, 80)` interpolates

    Returns:
        `(B,)` penalties, differentiable w.r.t. the critic parameters
    """
    with torch.enable_grad():
        points = points.detach().requires_grad_(True)
        (grad,) = torch.autograd.grad(critic(points).sum(), points, create_graph=True)
    return (grad.flatten(1).norm(dim=-1) - 1).pow(2)


def extract_patches(features: torch.Tensor) -> torch.Tensor:
    """
    Non-overlapping 80-frame patches of `(N, frames, 80)` features.

    Returns:
        `(M, 1, 80, 80)` patches, trailing partial blocks dropped
    """
    blocks = features.shape[-2] // PATCH_FRAMES
    if blocks == 0:
        raise ValueError(f"utterances need at least {PATCH_FRAMES} frames to cut patches")
    trimmed = features[..., : blocks * PATCH_FRAMES, :]
    return trimmed.reshape(-1, 1, PATCH_FRAMES, features.shape[-1])


def train_wgan(
    patches: torch.Tensor,
    config: GanConfig | None = None,
    *,
    seed: int = 0,
    trace: list[float] | None = None,
) -> tuple[GanGenerator, GanCritic]:
    """
    Train a WGAN with gradient penalty on benign spectrogram patches.

    Each generator update follows `n_critic` critic updates on
    `D(fake) - D(real) + gp_weight * penalty(interpolates)`.

    Args:
        patches: `(M, 1, 80, 80)` benign patches
        config: Architecture and optimization settings
        seed: Initialization, sampling and interpolation seed
        trace: Receives the Wasserstein estimate `mean D(real) - mean D(fake)` per step

    Raises:
        DivergenceError: On a non-finite loss

    Returns:
        The trained generator and critic, both in eval mode
    """
    config = config or GanConfig()
    if patches.ndim != 4 or patches.shape[1:] != (1, PATCH_FRAMES, PATCH_FRAMES):
        raise ValueError(f"patches must have shape (M, 1, {PATCH_FRAMES}, {PATCH_FRAMES})")

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(seed, "gan-init"))
        generator, critic = GanGenerator(config), GanCritic(config)

    stream = seeded_rng(derive_seed(seed, "gan-train"))
    g_opt = torch.optim.Adam(generator.parameters(), lr=config.lr, betas=config.betas)
    c_opt = torch.optim.Adam(critic.parameters(), lr=config.lr, betas=config.betas)
    distances: list[float] = [] if trace is None else trace
    generator.train()
    critic.train()

    for step in range(config.steps):
        for _ in range(config.n_critic):
            index = torch.randint(0, patches.shape[0], (config.batch_size,), generator=stream)
            real = patches[index]
            with torch.no_grad():
                fake = generator(torch.randn(config.batch_size, config.latent_dim, generator=stream))
            eps = torch.rand(config.batch_size, 1, 1, 1, generator=stream)
            penalty = gradient_penalty(critic, eps * real + (1 - eps) * fake).mean()
            distance = critic(real).mean() - critic(fake).mean()
            loss = -distance + config.gp_weight * penalty
            if not torch.isfinite(loss):
                raise DivergenceError(f"WGAN critic loss became non-finite at step {step}", distances)
            c_opt.zero_grad()
            loss.backward()
            c_opt.step()

        fake = generator(torch.randn(config.batch_size, config.latent_dim, generator=stream))
        g_loss = -critic(fake).mean()
        if not torch.isfinite(g_loss):
            raise DivergenceError(f"WGAN generator loss became non-finite at step {step}", distances)
        g_opt.zero_grad()
        g_loss.backward()
        g_opt.step()

        distances.append(float(distance))
        if (step + 1) % max(1, config.steps // 10) == 0:
            log.info(f"WGAN step {step + 1}/{config.steps} W-distance {distances[-1]:.4f} penalty {float(penalty):.4f}")

    return generator.eval(), critic.eval()


def defense_gan_project(
    generator: GanGenerator,
    features: torch.Tensor,
    config: DefenseGanConfig | None = None,
    *,
    stream: torch.Generator | None = None,
) -> torch.Tensor:
    """
    Project features onto the generator's range block by block and blend.

    The features are cut into 80-frame blocks (the last one zero-padded). For every block
    `restarts` latent codes are optimized with Adam for `iterations` forward/backward
    passes on `||G(z) - x||^2`. The code with the lowest error at its last pass gives the
    reconstruction, which is cropped back and blended with the input.

    Args:
        generator: Trained generator
        features: `(B, frames, 80)` or `(frames, 80)` features
        config: Restarts, iterations, step size and blend weight
        stream: Stream for the latent initializations

    Returns:
        `alpha * reconstruction + (1 - alpha) * features`, detached
    """
    config = config or DefenseGanConfig()
    if config.alpha == 0:
        return features.detach().clone()

    single = features.ndim == 2
    x = (features.unsqueeze(0) if single else features).detach()
    batch, frames, bins = x.shape
    blocks = math.ceil(frames / PATCH_FRAMES)
    padded = F.pad(x, (0, 0, 0, blocks * PATCH_FRAMES - frames))
    targets = padded.reshape(batch * blocks, 1, PATCH_FRAMES, bins).to(next(generator.parameters()).dtype)

    n = targets.shape[0]
    restarts = config.restarts
    stream = stream if stream is not None else seeded_rng(0)
    z = torch.randn(restarts * n, generator.config.latent_dim, generator=stream, dtype=targets.dtype)
    z.requires_grad_(True)
    optimizer = torch.optim.Adam([z], lr=config.lr)
    expanded = targets.repeat(restarts, 1, 1, 1)

    generator.eval()
    with torch.enable_grad():
        for step in range(config.iterations):
            recon = generator(z)
            errors = (recon - expanded).pow(2).flatten(1).sum(dim=-1)
            (grad,) = torch.autograd.grad(errors.sum(), z)
            if step == config.iterations - 1:
                break
            z.grad = grad
            optimizer.step()

    errors = errors.detach().view(restarts, n)
    best = errors.argmin(dim=0)
    recon = recon.detach().view(restarts, n, 1, PATCH_FRAMES, bins)[best, torch.arange(n)]
    recon = recon.reshape(batch, blocks * PATCH_FRAMES, bins)[:, :frames].to(x.dtype)

    out = recon if config.alpha == 1 else config.alpha * recon + (1 - config.alpha) * x
    return out.squeeze(0) if single else out


class DefenseGanStage(Stage):
    """DefenseGAN projection as a spectrogram-domain chain stage, BPDA only."""

    name = "defense_gan"
    domain = "spectrogram"
    differentiable = False
    bpda_identity = True
    stochastic = True

    def __init__(self, generator: GanGenerator, config: DefenseGanConfig | None = None) -> None:
        super().__init__()
        self.generator = generator.eval().requires_grad_(False)
        self.config = config or DefenseGanConfig()

    def forward(self, x: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
        return defense_gan_project(self.generator, x, self.config, stream=generator)
