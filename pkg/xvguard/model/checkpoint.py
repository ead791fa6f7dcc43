from __future__ import annotations

from pathlib import Path
from typing import Any

import torch
from torch import nn

from .. import __version__
from ..errors import CheckpointError, MissingArtifactError
from ..logger import get_logger

__all__ = "load_checkpoint", "save_checkpoint"

log = get_logger("checkpoint")

_REQUIRED = ("kind", "state_dict", "config", "model_hash")


def save_checkpoint(path: str | Path, module: nn.Module, *, kind: str, config: dict[str, Any], model_hash: str) -> Path:
    """
    Serialize parameters together with the config that built them.

    Args:
        path: Destination `.pt` file
        module: Trained module
        kind: What the module is (`classifier`, `vae`, `gan`, `vocoder`)
        config: Plain mapping of the module's architecture config
        model_hash: Hash of the run configuration that produced it
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "kind": kind,
        "state_dict": {k: v.detach().cpu() for k, v in module.state_dict().items()},
        "config": config,
        "model_hash": model_hash,
        "version": __version__,
    }
    torch.save(payload, path)
    log.info(f"Saved {kind} checkpoint to {path}")
    return path


def load_checkpoint(path: str | Path, *, kind: str, model_hash: str | None = None) -> dict[str, Any]:
    """
    Read a checkpoint and verify its provenance.

    Args:
        path: Checkpoint file
        kind: Expected module kind
        model_hash: Expected model hash, not checked when None

    Raises:
        MissingArtifactError: If the file does not exist
        CheckpointError: If the file is corrupted, of another kind, or was trained under
            another configuration

    Returns:
        The payload with `state_dict` and `config`
    """
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"{kind} checkpoint {path} not found, run `xvguard train` first")

    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc

    if not isinstance(payload, dict) or any(key not in payload for key in _REQUIRED):
        raise CheckpointError(f"{path}: not an xvguard checkpoint")

    if payload["kind"] != kind:
        raise CheckpointError(f"{path}: holds a {payload['kind']} checkpoint, expected {kind}")

    if model_hash is not None and payload["model_hash"] != model_hash:
        raise CheckpointError(
            f"{path}: trained under model hash {payload['model_hash'][:12]}, current config has {model_hash[:12]}"
        )
    return payload
