import json

import pytest
import torch

from xvguard.config import OutputConfig, RunConfig
from xvguard.defenses import build_chain
from xvguard.errors import ConfigError, MissingArtifactError
from xvguard.workspace import Workspace


@pytest.fixture
def workspace(tmp_path):
    return Workspace(RunConfig(seed=7, output=OutputConfig(dir=tmp_path)))


def test_layout(workspace, tmp_path):
    """Test where a run keeps its artifacts"""
    assert workspace.manifest_path == tmp_path / "data" / "manifest.csv"
    assert workspace.checkpoint_path("vocoder") == tmp_path / "checkpoints" / "vocoder.pt"
    assert workspace.attack_dir("none", "fgsm-linf-0.01") == tmp_path / "attacks" / "none" / "fgsm-linf-0.01"


def test_provenance(workspace):
    """Test the hashes and seed stamped on artifacts"""
    provenance = workspace.provenance()
    assert provenance["seed"] == 7
    assert provenance["model_hash"] == workspace.config.model_hash
    assert len(provenance["config_hash"]) == 64


def test_attack_round_trip(workspace, tiny_model):
    """Test persisted adversarial audio loads back losslessly with its sidecar"""
    chain = build_chain([], tiny_model)
    samples = 0.2 * torch.rand(2, 4000) - 0.1
    for utt_id, row in zip(("u1", "u2"), samples):
        workspace.save_attack("none", chain, "fgsm-linf-0.01", utt_id, row, {"success": True, "failed": False})

    loaded = workspace.load_attacks("none", "none", "fgsm-linf-0.01", ("u1", "u2"))
    sidecar = json.loads((workspace.attack_dir("none", "fgsm-linf-0.01") / "u1.json").read_text())

    torch.testing.assert_close(loaded, samples)
    assert sidecar["chain_id"] == "none"
    assert sidecar["seed"] == 7


def test_attack_reuse_checks(workspace, tiny_model):
    """Test reuse of missing or foreign attacks is refused"""
    chain = build_chain([], tiny_model)
    workspace.save_attack("none", chain, "fgsm-linf-0.01", "u1", torch.zeros(4000), {})

    with pytest.raises(ConfigError, match="crafted against"):
        workspace.load_attacks("none", "smoothing", "fgsm-linf-0.01", ("u1",))

    with pytest.raises(MissingArtifactError, match="xvguard attack"):
        workspace.load_attacks("none", "none", "fgsm-linf-0.01", ("u1", "u2"))


def test_missing_manifest(workspace):
    """Test data access before generation names the command to run"""
    with pytest.raises(MissingArtifactError, match="xvguard generate"):
        workspace.split("test")
