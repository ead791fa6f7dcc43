from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import soundfile as sf
import torch
import torch.nn.functional as F
import torchaudio
from torch import nn

from .errors import FeatureError, IngestionError
from .types import SAMPLE_RATE, Waveform

__all__ = (
    "DEFAULT_RESOLUTIONS",
    "FeatureConfig",
    "LogMelExtractor",
    "StftResolution",
    "load_waveform",
    "log_mel",
    "multi_res_stft_loss",
    "save_waveform",
    "stft_loss_terms",
)

_PCM16_SCALE = 32767.0


# -----Waveform I/O-----


def load_waveform(path: str | Path) -> Waveform:
    """
    Read a 16 kHz mono WAV file.

    PCM-16 samples are scaled by 1/32767 and clamped so full-scale codes map to exactly
    -1 and 1. Float WAVs (used for persisted attack artifacts) are read as-is.

    Args:
        path: WAV file path

    Raises:
        IngestionError: If the file is unreadable, not 16 kHz or not mono

    Returns:
        The waveform
    """
    path = Path(path)
    try:
        info = sf.info(str(path))
    except (RuntimeError, sf.LibsndfileError) as exc:
        raise IngestionError(f"Cannot read audio file {path}: {exc}") from exc

    if info.samplerate != SAMPLE_RATE:
        raise IngestionError(f"{path}: sample rate {info.samplerate} Hz, expected {SAMPLE_RATE} Hz")

    if info.channels != 1:
        raise IngestionError(f"{path}: {info.channels} channels, expected mono")

    if info.frames < 1:
        raise IngestionError(f"{path}: file holds no samples")

    if info.subtype == "PCM_16":
        codes, _ = sf.read(str(path), dtype="int16")
        samples = np.clip(codes.astype(np.float32) / _PCM16_SCALE, -1.0, 1.0)
    else:
        data, _ = sf.read(str(path), dtype="float32")
        samples = np.clip(data, -1.0, 1.0)

    return Waveform(samples=torch.from_numpy(np.ascontiguousarray(samples, dtype=np.float32)))


def save_waveform(path: str | Path, waveform: Waveform, *, subtype: str = "PCM_16") -> Path:
    """
    Write a waveform as a mono 16 kHz WAV.

    Args:
        path: Destination
        waveform: Audio to write
        subtype: `PCM_16` (default) or `FLOAT` for lossless perturbation storage

    Returns:
        The written path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    samples = waveform.samples.detach().cpu().numpy()
    if subtype == "PCM_16":
        data = np.round(samples * _PCM16_SCALE).astype(np.int16)
    elif subtype == "FLOAT":
        data = samples.astype(np.float32)
    else:
        raise ValueError("subtype must be 'PCM_16' or 'FLOAT'")

    sf.write(str(path), data, waveform.sample_rate, subtype=subtype, format="WAV")
    return path


# -----Log-Mel Features-----


@dataclass(frozen=True)
class FeatureConfig:
    """Log-Mel filter bank configuration"""

    sample_rate: int = SAMPLE_RATE
    window_length: int = 400
    """25 ms analysis window in samples"""
    hop: int = 160
    """10 ms frame shift in samples"""
    n_fft: int = 512
    n_mels: int = 80
    f_min: float = 20.0
    f_max: float = 8000.0
    floor: float = 1e-10
    """Mel energy floor applied before the log"""
    mean_norm: bool = True
    norm_window: int | None = None
    """Frames in the sliding mean-normalization window, whole utterance when None"""

    def __post_init__(self) -> None:
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"sample_rate must be {SAMPLE_RATE}")

        if not 0 < self.hop <= self.window_length <= self.n_fft:
            raise ValueError("expected 0 < hop <= window_length <= n_fft")

        if self.n_mels < 1:
            raise ValueError("n_mels must be positive")

        if not 0 <= self.f_min < self.f_max <= self.sample_rate / 2:
            raise ValueError("expected 0 <= f_min < f_max <= sample_rate / 2")

        if self.floor <= 0:
            raise ValueError("floor must be positive")

        if self.norm_window is not None and (self.norm_window < 1 or self.norm_window % 2 == 0):
            raise ValueError("norm_window must be a positive odd number of frames")

    @property
    def frame_shift(self) -> float:
        """Frame shift in seconds"""
        return self.hop / self.sample_rate

    def num_frames(self, length: int) -> int:
        """
        Number of frames produced for `length` samples.

        Raises:
            FeatureError: If the input is shorter than one window
        """
        if length < self.window_length:
            raise FeatureError(f"input of {length} samples is shorter than one {self.window_length}-sample window")
        return (length - self.window_length) // self.hop + 1


class LogMelExtractor(nn.Module):
    """
    Differentiable log-Mel filter bank front end.

    Maps `(B, T)` waveforms to `(B, frames, n_mels)` natural-log Mel energies with
    optional short-time mean normalization. Every step is a torch op so gradients reach
    the samples.
    """

    window: torch.Tensor
    filters: torch.Tensor

    def __init__(self, config: FeatureConfig | None = None) -> None:
        super().__init__()
        self.config = config or FeatureConfig()
        cfg = self.config
        self.register_buffer("window", torch.hann_window(cfg.window_length), persistent=False)
        self.register_buffer(
            "filters",
            torchaudio.functional.melscale_fbanks(
                n_freqs=cfg.n_fft // 2 + 1,
                f_min=cfg.f_min,
                f_max=cfg.f_max,
                n_mels=cfg.n_mels,
                sample_rate=cfg.sample_rate,
                norm=None,
                mel_scale="htk",
            ),
            persistent=False,
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.ndim == 1
        if squeeze:
            x = x.unsqueeze(0)

        cfg = self.config
        cfg.num_frames(x.shape[-1])
        frames = x.unfold(-1, cfg.window_length, cfg.hop) * self.window
        power = torch.fft.rfft(frames, n=cfg.n_fft).abs().pow(2)
        mel = torch.log(torch.clamp(power @ self.filters, min=cfg.floor))
        if cfg.mean_norm:
            mel = self._normalize(mel)
        return mel.squeeze(0) if squeeze else mel

    def _normalize(self, mel: torch.Tensor) -> torch.Tensor:
        window = self.config.norm_window
        if window is None or window >= mel.shape[-2]:
            return mel - mel.mean(dim=-2, keepdim=True)

        # moving average over frames, edges average only real frames
        local = F.avg_pool1d(
            mel.transpose(-1, -2), kernel_size=window, stride=1, padding=window // 2, count_include_pad=False
        )
        return mel - local.transpose(-1, -2)


def log_mel(x: Waveform | torch.Tensor, config: FeatureConfig | None = None) -> torch.Tensor:
    """
    Log-Mel spectrogram of a waveform.

    Args:
        x: Waveform or `(B, T)` / `(T,)` tensor
        config: Feature configuration, defaults to 80 Mel bins at 25/10 ms

    Raises:
        FeatureError: If the input is shorter than one window

    Returns:
        `(frames, n_mels)` for a single waveform, `(B, frames, n_mels)` for a batch
    """
    samples = x.samples if isinstance(x, Waveform) else x
    extractor = LogMelExtractor(config).to(dtype=samples.dtype, device=samples.device)
    return extractor(samples)


# -----STFT Utilities-----


@dataclass(frozen=True)
class StftResolution:
    """One spectral analysis setting of the multi-resolution STFT loss"""

    fft_length: int
    window_length: int
    hop: int

    def __post_init__(self) -> None:
        if not 0 < self.hop <= self.window_length <= self.fft_length:
            raise ValueError("expected 0 < hop <= window_length <= fft_length")


DEFAULT_RESOLUTIONS = (
    StftResolution(fft_length=512, window_length=240, hop=50),
    StftResolution(fft_length=1024, window_length=600, hop=120),
    StftResolution(fft_length=2048, window_length=1200, hop=240),
)


def _magnitude(x: torch.Tensor, resolution: StftResolution) -> torch.Tensor:
    spec = torchaudio.transforms.Spectrogram(
        n_fft=resolution.fft_length,
        win_length=resolution.window_length,
        hop_length=resolution.hop,
        power=2.0,
        center=True,
    ).to(dtype=x.dtype, device=x.device)
    return torch.sqrt(torch.clamp(spec(x), min=1e-7))


def stft_loss_terms(x: torch.Tensor, y: torch.Tensor, resolution: StftResolution) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Spectral convergence and log-magnitude L1 distance at one resolution.

    Convergence is `||X - Y||_F / ||X + Y||_F` per utterance, so both terms are symmetric
    in `x` and `y`. Batched inputs are averaged over the batch.

    Args:
        x: `(B, T)` or `(T,)` waveform tensor
        y: Tensor of the same shape
        resolution: Analysis setting

    Returns:
        `(convergence, log_magnitude)` scalars
    """
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")

    mag_x, mag_y = _magnitude(x, resolution), _magnitude(y, resolution)
    dims = (-2, -1)
    convergence = torch.linalg.norm(mag_x - mag_y, dim=dims) / torch.linalg.norm(mag_x + mag_y, dim=dims)
    log_magnitude = (mag_x.log() - mag_y.log()).abs().mean(dim=dims)
    return convergence.mean(), log_magnitude.mean()


def multi_res_stft_loss(
    x: Waveform | torch.Tensor,
    y: Waveform | torch.Tensor,
    resolutions: tuple[StftResolution, ...] | list[StftResolution] = DEFAULT_RESOLUTIONS,
) -> torch.Tensor:
    """
    Sum over resolutions of spectral convergence plus log-magnitude L1.

    Args:
        x: Waveform or tensor
        y: Waveform or tensor with the same length
        resolutions: Analysis settings, defaults to the standard three-resolution triple

    Raises:
        ValueError: If the resolution list is empty or lengths differ

    Returns:
        Non-negative scalar loss, 0 when `x == y`
    """
    if not resolutions:
        raise ValueError("at least one STFT resolution is required")

    xs = x.samples if isinstance(x, Waveform) else x
    ys = y.samples if isinstance(y, Waveform) else y
    total = xs.new_zeros(())
    for resolution in resolutions:
        convergence, log_magnitude = stft_loss_terms(xs, ys, resolution)
        total = total + convergence + log_magnitude
    return total
