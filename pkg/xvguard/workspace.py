"""Artifact layout of a run directory and the loaders the CLI commands share."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal

import torch

from . import __version__
from .config import DefenseEntry, RunConfig
from .core import derive_seed
from .data import MANIFEST_NAME, LabeledAudio, Manifest, Split, load_manifest, load_split
from .defenses import (
    DefenseChain,
    DefenseModels,
    GanConfig,
    GanGenerator,
    VaeConfig,
    VaeModel,
    VocoderConfig,
    VocoderModel,
    build_chain,
)
from .dsp import load_waveform, save_waveform
from .errors import ConfigError, MissingArtifactError
from .logger import Logger
from .model import XVectorClassifier, XVectorConfig, load_checkpoint, save_checkpoint
from .schema import from_mapping, to_mapping
from .types import Waveform

__all__ = ("Workspace",)

ClassifierKind = Literal["base", "gaussian", "adversarial", "surrogate"]


class Workspace(Logger):
    """
    Paths and cached artifacts of one run directory.

    Layout under `config.output.dir`:

    - `data/` toy corpus and `manifest.csv`
    - `checkpoints/` classifiers and defense models
    - `attacks/<defense>/<attack id>/` adversarial WAVs with JSON sidecars
    - `reports/` evaluation report and rendered tables and figures
    """

    def __init__(self, config: RunConfig) -> None:
        self.config = config
        self.root = Path(config.output.dir)
        self._cache: dict[str, Any] = {}

    # -----Paths-----

    @property
    def manifest_path(self) -> Path:
        return self.config.data.manifest or self.root / "data" / MANIFEST_NAME

    @property
    def checkpoints(self) -> Path:
        return self.root / "checkpoints"

    @property
    def reports(self) -> Path:
        return self.root / "reports"

    def attack_dir(self, defense: str, attack_id: str) -> Path:
        return self.root / "attacks" / defense / attack_id

    def provenance(self) -> dict[str, Any]:
        """Hashes and seed every artifact embeds."""
        return {
            "config_hash": self.config.hash,
            "model_hash": self.config.model_hash,
            "seed": self.config.seed,
            "version": __version__,
        }

    # -----Data-----

    def manifest(self) -> Manifest:
        if "manifest" not in self._cache:
            if not self.manifest_path.is_file():
                raise MissingArtifactError(f"manifest {self.manifest_path} not found, run `xvguard generate` first")
            self._cache["manifest"] = loaded = load_manifest(self.manifest_path)
            self.logger.info(f"Loaded manifest {self.manifest_path} ({len(loaded)} utterances)")
        manifest: Manifest = self._cache["manifest"]
        return manifest

    def split(self, split: Split) -> LabeledAudio:
        key = f"split-{split}"
        if key not in self._cache:
            audio = load_split(self.manifest(), split)
            limit = self.config.data.max_eval_utterances
            if split == "test" and limit is not None:
                audio = audio.subset(limit)
            self._cache[key] = audio
        data: LabeledAudio = self._cache[key]
        return data

    def audio(self, utt_ids: list[str]) -> dict[str, torch.Tensor]:
        """Samples of the given utterances."""
        manifest = self.manifest()
        return {utt_id: load_waveform(manifest[utt_id].path).samples for utt_id in utt_ids}

    # -----Checkpoints-----

    def checkpoint_path(self, name: str) -> Path:
        return self.checkpoints / f"{name}.pt"

    def save_classifier(self, kind: ClassifierKind, model: XVectorClassifier) -> Path:
        return save_checkpoint(
            self.checkpoint_path(f"classifier-{kind}"),
            model,
            kind="classifier",
            config=to_mapping(model.config),
            model_hash=self.config.model_hash,
        )

    def classifier(self, kind: ClassifierKind = "base") -> XVectorClassifier:
        key = f"classifier-{kind}"
        if key not in self._cache:
            payload = load_checkpoint(self.checkpoint_path(key), kind="classifier", model_hash=self.config.model_hash)
            model = XVectorClassifier(from_mapping(XVectorConfig, payload["config"]))
            model.load_state_dict(payload["state_dict"])
            self._cache[key] = model.eval()
            self.logger.info(f"Loaded {key} from {self.checkpoints}")
        model_: XVectorClassifier = self._cache[key]
        return model_

    def save_defense(self, kind: Literal["gan", "vae", "vocoder"], module: torch.nn.Module) -> Path:
        return save_checkpoint(
            self.checkpoint_path(kind),
            module,
            kind=kind,
            config=to_mapping(module.config),
            model_hash=self.config.model_hash,
        )

    def _defense(self, kind: str) -> Any:
        if kind not in self._cache:
            payload = load_checkpoint(self.checkpoint_path(kind), kind=kind, model_hash=self.config.model_hash)
            match kind:
                case "gan":
                    module: torch.nn.Module = GanGenerator(from_mapping(GanConfig, payload["config"]))
                case "vae":
                    module = VaeModel(from_mapping(VaeConfig, payload["config"]))
                case _:
                    module = VocoderModel(from_mapping(VocoderConfig, payload["config"]))
            module.load_state_dict(payload["state_dict"])
            self._cache[kind] = module.eval()
            self.logger.info(f"Loaded {kind} from {self.checkpoints}")
        return self._cache[kind]

    def chain(self, entry: DefenseEntry) -> DefenseChain:
        """Build the chain a defense entry describes from the trained artifacts."""
        models = DefenseModels(
            vae=self._defense("vae") if "vae" in entry.stages else None,
            gan=self._defense("gan") if "defense_gan" in entry.stages else None,
            vocoder=self._defense("vocoder") if "vocoder" in entry.stages else None,
        )
        return build_chain(
            entry.stages,
            self.classifier(entry.model),
            models,
            smoothing=entry.smoothing,
            defense_gan=entry.defense_gan,
            mode=entry.mode,
        )

    def surrogate(self) -> XVectorClassifier | None:
        """Classifier universal perturbations are searched on, None to use each chain's own."""
        if self.config.grid.surrogate == "self":
            return None
        return self.classifier("surrogate")

    # -----Attack Artifacts-----

    def save_attack(
        self, defense: str, chain: DefenseChain, attack_id: str, utt_id: str, adversarial: torch.Tensor, info: dict[str, Any]
    ) -> Path:
        """Write one adversarial utterance as a float WAV plus its JSON sidecar."""
        directory = self.attack_dir(defense, attack_id)
        wav = save_waveform(directory / f"{utt_id}.wav", Waveform(samples=adversarial.detach()), subtype="FLOAT")
        sidecar = {
            "utt_id": utt_id,
            "defense": defense,
            "chain_id": chain.id,
            "mode": chain.mode.value,
            "attack": attack_id,
            **info,
            **self.provenance(),
        }
        wav.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
        return wav

    def load_attacks(self, defense: str, chain_id: str, attack_id: str, utt_ids: tuple[str, ...]) -> torch.Tensor:
        """
        Persisted adversarial batch of a defense, checked against the chain it was made for.

        Raises:
            MissingArtifactError: If an utterance was not attacked
            ConfigError: If the artifacts were produced against another chain
        """
        directory = self.attack_dir(defense, attack_id)
        rows = []
        for utt_id in utt_ids:
            wav, sidecar = directory / f"{utt_id}.wav", directory / f"{utt_id}.json"
            if not wav.is_file() or not sidecar.is_file():
                raise MissingArtifactError(f"adversarial audio {wav} not found, run `xvguard attack` first")
            tag = json.loads(sidecar.read_text()).get("chain_id")
            if tag != chain_id:
                raise ConfigError(f"{wav} was crafted against chain {tag!r}, expected {chain_id!r}")
            rows.append(load_waveform(wav).samples)
        return torch.stack(rows)

    def seed_for(self, *parts: object) -> int:
        return derive_seed(self.config.seed, *parts)
