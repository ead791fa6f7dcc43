"""Dataset manifests and the synthetic toy-speaker corpus."""

from __future__ import annotations

import csv
from collections.abc import Iterator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import torch

from .core import derive_seed
from .dsp import load_waveform, save_waveform
from .errors import ManifestError
from .logger import get_logger
from .types import SAMPLE_RATE, Waveform
from .workers import WorkerPool

__all__ = (
    "LabeledAudio",
    "Manifest",
    "ManifestEntry",
    "Split",
    "generate_toy_dataset",
    "load_manifest",
    "load_split",
    "synthesize_utterance",
    "write_manifest",
)

Split = Literal["train", "enroll", "test"]

SPLITS: tuple[Split, ...] = ("train", "enroll", "test")
MANIFEST_HEADER = ("utt_id", "path", "speaker", "split")
MANIFEST_NAME = "manifest.csv"

F0_RANGE = (90.0, 260.0)
"""Log-spaced speaker fundamental frequencies in Hz"""
MAX_HARMONIC_HZ = 4000.0
PEAK_AMPLITUDE = 0.5

log = get_logger("data")


# -----Manifest-----


@dataclass(frozen=True)
class ManifestEntry:
    """One utterance of a corpus"""

    utt_id: str
    path: Path
    speaker: str
    split: Split

    def __post_init__(self) -> None:
        if not self.utt_id or not self.speaker:
            raise ValueError("utt_id and speaker must be non-empty")

        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {', '.join(SPLITS)}")


@dataclass(frozen=True)
class Manifest:
    """
    Validated list of utterances.

    Speaker labels are assigned by sorting the speaker ids of the train split, which gives
    a stable bijection between ids and class indices.
    """

    entries: tuple[ManifestEntry, ...]
    _by_id: dict[str, ManifestEntry] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        if not self.entries:
            raise ManifestError("manifest has no entries")

        by_id: dict[str, ManifestEntry] = {}
        for entry in self.entries:
            if entry.utt_id in by_id:
                raise ManifestError(f"duplicate utt_id {entry.utt_id!r}")
            by_id[entry.utt_id] = entry
        object.__setattr__(self, "_by_id", by_id)

        train_speakers = {e.speaker for e in self.entries if e.split == "train"}
        if train_speakers:
            unknown = sorted({e.speaker for e in self.entries} - train_speakers)
            if unknown:
                raise ManifestError(f"speakers missing from the train split: {', '.join(unknown)}")

    def __iter__(self) -> Iterator[ManifestEntry]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, utt_id: str) -> ManifestEntry:
        try:
            return self._by_id[utt_id]
        except KeyError:
            raise ManifestError(f"unknown utt_id {utt_id!r}") from None

    def __contains__(self, utt_id: object) -> bool:
        return utt_id in self._by_id

    @property
    def speakers(self) -> tuple[str, ...]:
        """Sorted speaker ids, index = class label"""
        return tuple(sorted({e.speaker for e in self.entries}))

    def label_of(self, speaker: str) -> int:
        """Class index of a speaker id."""
        try:
            return self.speakers.index(speaker)
        except ValueError:
            raise ManifestError(f"unknown speaker {speaker!r}") from None

    def split(self, name: Split) -> tuple[ManifestEntry, ...]:
        """Entries of one split, in manifest order."""
        return tuple(e for e in self.entries if e.split == name)


def write_manifest(manifest: Manifest, path: str | Path) -> Path:
    """
    Write a manifest CSV, paths stored relative to the manifest's directory when possible.

    Args:
        manifest: Manifest to write
        path: Destination CSV
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    root = path.parent.resolve()
    with path.open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for entry in manifest:
            audio = entry.path.resolve()
            stored = audio.relative_to(root) if audio.is_relative_to(root) else audio
            writer.writerow((entry.utt_id, stored.as_posix(), entry.speaker, entry.split))
    return path


def load_manifest(path: str | Path, *, check_files: bool = True) -> Manifest:
    """
    Load and validate a manifest CSV with header `utt_id,path,speaker,split`.

    Args:
        path: CSV file
        check_files: Verify every referenced WAV exists

    Raises:
        ManifestError: On a missing header, malformed rows (with line numbers), duplicate
            ids, an empty manifest or missing audio files (with their paths)

    Returns:
        The validated manifest
    """
    path = Path(path)
    root = path.parent
    with path.open(newline="") as f:
        rows = list(csv.reader(f))

    if not rows or all(not row for row in rows):
        raise ManifestError(f"{path}: manifest has no entries")

    header = tuple(cell.strip() for cell in rows[0])
    if header != MANIFEST_HEADER:
        raise ManifestError(f"{path}: line 1: expected header {','.join(MANIFEST_HEADER)}, got {','.join(header)}")

    entries: list[ManifestEntry] = []
    problems: list[str] = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(MANIFEST_HEADER):
            problems.append(f"line {lineno}: expected 4 fields, got {len(row)}")
            continue
        utt_id, audio, speaker, split = (cell.strip() for cell in row)
        audio_path = Path(audio) if Path(audio).is_absolute() else root / audio
        try:
            entries.append(ManifestEntry(utt_id=utt_id, path=audio_path, speaker=speaker, split=split))  # type: ignore[arg-type]
        except ValueError as exc:
            problems.append(f"line {lineno}: {exc}")

    if problems:
        raise ManifestError(f"{path}: malformed rows\n  " + "\n  ".join(problems))

    manifest = Manifest(entries=tuple(entries))
    if check_files:
        missing = [str(e.path) for e in manifest if not e.path.is_file()]
        if missing:
            raise ManifestError(f"{path}: {len(missing)} audio file(s) missing\n  " + "\n  ".join(missing))
    return manifest


# -----Loading Audio-----


@dataclass(frozen=True, eq=False)
class LabeledAudio:
    """Waveforms of one split with their class labels"""

    utt_ids: tuple[str, ...]
    waveforms: tuple[Waveform, ...]
    labels: torch.Tensor

    def __post_init__(self) -> None:
        if not len(self.utt_ids) == len(self.waveforms) == len(self.labels):
            raise ValueError("utt_ids, waveforms and labels must have equal length")

    def __len__(self) -> int:
        return len(self.utt_ids)

    def batch(self) -> torch.Tensor:
        """`(N, T)` tensor, utterances cropped to the shortest length."""
        length = min(len(w) for w in self.waveforms)
        return torch.stack([w.samples[:length] for w in self.waveforms])

    def subset(self, count: int) -> LabeledAudio:
        """First `count` utterances."""
        return LabeledAudio(self.utt_ids[:count], self.waveforms[:count], self.labels[:count])

    def sorted_by_id(self) -> LabeledAudio:
        """Same utterances ordered by utterance id."""
        order = sorted(range(len(self)), key=self.utt_ids.__getitem__)
        return LabeledAudio(
            tuple(self.utt_ids[i] for i in order),
            tuple(self.waveforms[i] for i in order),
            self.labels[torch.tensor(order, dtype=torch.long)],
        )


def load_split(manifest: Manifest, split: Split, *, max_seconds: float | None = None) -> LabeledAudio:
    """
    Read the audio of one split.

    Args:
        manifest: Validated manifest
        split: Which split
        max_seconds: Crop utterances to this duration

    Returns:
        Utterance ids, waveforms and labels
    """
    entries = manifest.split(split)
    if not entries:
        raise ManifestError(f"split {split!r} has no entries")

    waveforms = []
    for entry in entries:
        wav = load_waveform(entry.path)
        if max_seconds is not None and wav.duration > max_seconds:
            wav = Waveform(samples=wav.samples[: int(max_seconds * SAMPLE_RATE)])
        waveforms.append(wav)

    labels = torch.tensor([manifest.label_of(e.speaker) for e in entries], dtype=torch.long)
    return LabeledAudio(tuple(e.utt_id for e in entries), tuple(waveforms), labels)


# -----Toy Speakers-----


@dataclass(frozen=True)
class ToyVoice:
    """Fixed spectral identity of a synthetic speaker"""

    f0: float
    formants: tuple[float, ...]
    bandwidths: tuple[float, ...]
    tilt: float


def toy_voice(speaker: int, n_speakers: int, seed: int) -> ToyVoice:
    """
    Voice of speaker number `speaker`.

    f0 values are log-spaced over 90-260 Hz so adjacent speakers never overlap once jitter
    is added. Formant centers and bandwidths come from a per-speaker stream.
    """
    rng = np.random.default_rng(derive_seed(seed, "voice", speaker))
    low, high = F0_RANGE
    f0 = low * (high / low) ** (speaker / max(n_speakers - 1, 1))
    formants = (rng.uniform(300, 900), rng.uniform(900, 2200), rng.uniform(2200, 3600))
    bandwidths = tuple(float(b) for b in rng.uniform(80, 250, size=3))
    return ToyVoice(f0=float(f0), formants=tuple(float(f) for f in formants), bandwidths=bandwidths, tilt=float(rng.uniform(0.6, 1.2)))


def synthesize_utterance(voice: ToyVoice, duration_s: float, seed: int) -> np.ndarray:
    """
    Render one utterance of a toy voice.

    Harmonic stack of f0 up to 4 kHz shaped by formant bumps, with per-utterance f0
    jitter, slow vibrato, a syllable-rate amplitude envelope and additive noise. Peak
    amplitude is normalized to 0.5.

    Args:
        voice: Speaker identity
        duration_s: Length in seconds
        seed: Per-utterance seed

    Returns:
        float32 samples
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE

    f0 = voice.f0 * (1 + rng.uniform(-0.03, 0.03))
    vibrato = 0.01 * np.sin(2 * np.pi * rng.uniform(4, 6) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(f0 * (1 + vibrato)) / SAMPLE_RATE

    signal = np.zeros(n)
    for k in range(1, int(MAX_HARMONIC_HZ // f0) + 1):
        freq = k * f0
        gain = sum(np.exp(-0.5 * ((freq - c) / b) ** 2) for c, b in zip(voice.formants, voice.bandwidths))
        gain = (0.15 + gain) / k**voice.tilt
        signal += gain * np.sin(k * phase + rng.uniform(0, 2 * np.pi))

    rate = rng.uniform(3, 6)
    envelope = 0.6 + 0.4 * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)) ** 2
    signal = signal * envelope + rng.normal(0, 0.02 * np.abs(signal).max(), n)
    return (PEAK_AMPLITUDE * signal / np.abs(signal).max()).astype(np.float32)


def _split_of(index: int, utts_per_speaker: int) -> Split:
    n_test = max(1, utts_per_speaker // 2)
    n_enroll = max(1, utts_per_speaker // 10)
    if index < utts_per_speaker - n_test - n_enroll:
        return "train"
    if index < utts_per_speaker - n_test:
        return "enroll"
    return "test"


def _render_task(voice: ToyVoice, duration_s: float, seed: int, path: str) -> str:
    samples = synthesize_utterance(voice, duration_s, seed)
    save_waveform(path, Waveform(samples=torch.from_numpy(samples)))
    return path


def generate_toy_dataset(
    out_dir: str | Path,
    *,
    n_speakers: int = 40,
    utts_per_speaker: int = 60,
    duration_s: float = 3.0,
    seed: int = 0,
    jobs: int = 1,
) -> Manifest:
    """
    Synthesize a toy speaker corpus and write its WAVs and manifest.

    Each speaker gets half of its utterances in the test split, a tenth (at least one)
    in enroll and the rest in train. Output is byte-identical for equal arguments.

    Args:
        out_dir: Directory receiving `wav/` and `manifest.csv`
        n_speakers: Number of speakers (>= 2)
        utts_per_speaker: Utterances per speaker (>= 3)
        duration_s: Utterance duration in seconds
        seed: Corpus seed
        jobs: Worker processes for rendering

    Returns:
        The written manifest
    """
    if n_speakers < 2:
        raise ValueError("n_speakers must be >= 2")

    if utts_per_speaker < 3:
        raise ValueError("utts_per_speaker must be >= 3")

    if duration_s <= 0.025:
        raise ValueError("duration_s must exceed one 25 ms analysis window")

    out_dir = Path(out_dir)
    width = len(str(n_speakers - 1))
    entries: list[ManifestEntry] = []
    tasks: list[tuple[ToyVoice, float, int, str]] = []
    for s in range(n_speakers):
        voice = toy_voice(s, n_speakers, seed)
        speaker = f"spk{s:0{width}d}"
        for u in range(utts_per_speaker):
            utt_id = f"{speaker}_utt{u:03d}"
            path = out_dir / "wav" / speaker / f"{utt_id}.wav"
            entries.append(ManifestEntry(utt_id=utt_id, path=path, speaker=speaker, split=_split_of(u, utts_per_speaker)))
            tasks.append((voice, duration_s, derive_seed(seed, "utterance", s, u), str(path)))

    WorkerPool(jobs).map(_render_task, tasks)
    manifest = Manifest(entries=tuple(entries))
    manifest_path = write_manifest(manifest, out_dir / MANIFEST_NAME)
    log.info(f"Wrote {len(entries)} utterances of {n_speakers} speakers to {manifest_path}")
    return manifest
