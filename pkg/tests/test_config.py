import math
from pathlib import Path

import pytest

from xvguard.config import RunConfig, load_config
from xvguard.errors import ConfigError, MissingArtifactError
from xvguard.schema import canonical_json, from_mapping, stable_hash
from xvguard.types import SmoothingConfig

CONFIGS = Path(__file__).parent.parent / "configs"


def test_unknown_keys_name_their_path():
    """Test that strict loading reports the dotted key"""
    with pytest.raises(ConfigError, match="unknown key model.depth"):
        RunConfig.from_dict({"model": {"depth": 3}})
    with pytest.raises(ConfigError, match="unknown key defenses\\[0\\].smoothing.samples"):
        RunConfig.from_dict({"defenses": [{"name": "s", "smoothing": {"samples": 2}}]})


def test_validation_errors_become_config_errors():
    """Test that dataclass validation surfaces as ConfigError"""
    with pytest.raises(ConfigError, match="BIM iterations"):
        RunConfig.from_dict({"attacks": [{"algorithm": "bim", "iterations": 8}]})
    with pytest.raises(ConfigError, match="spectrogram"):
        RunConfig.from_dict({"defenses": [{"name": "bad", "stages": ["vae", "vocoder"]}]})
    with pytest.raises(ConfigError, match="unknown defense"):
        RunConfig.from_dict({"defenses": [{"name": "t", "attack_source": "ghost"}]})


def test_attack_entries_expand_per_epsilon():
    """Test epsilon expansion, default grid and CW collapsing to one setting"""
    config = RunConfig.from_dict(
        {"attacks": [{"algorithm": "fgsm"}, {"algorithm": "pgd", "p": 2, "epsilons": [0.5]}, {"algorithm": "cw_l2"}]}
    )
    ids = [a.id for a in config.attack_configs()]
    assert ids[:5] == ["fgsm-linf-0.0001", "fgsm-linf-0.001", "fgsm-linf-0.01", "fgsm-linf-0.1", "fgsm-linf-0.2"]
    assert ids[5:] == ["pgd-l2-0.5-it7", "cw_l2-k0-o5"]
    assert config.attack_configs()[0].p == math.inf


def test_hashes_track_the_right_sections():
    """Test that model_hash ignores attack and grid changes while hash does not"""
    a = RunConfig.from_dict({"seed": 1})
    b = RunConfig.from_dict({"seed": 1, "attacks": [{"algorithm": "fgsm"}], "grid": {"jobs": 4}})
    assert a.model_hash == b.model_hash
    assert a.hash != b.hash
    assert RunConfig.from_dict({"seed": 2}).model_hash != a.model_hash


def test_overrides(tmp_path):
    """Test command line overrides of seed, output and jobs"""
    config = RunConfig().with_overrides(seed=5, out=tmp_path, jobs=3)
    assert (config.seed, config.output.dir, config.grid.jobs) == (5, tmp_path, 3)


def test_load_config_from_toml(tmp_path):
    """Test reading TOML, syntax errors and missing files"""
    path = tmp_path / "run.toml"
    path.write_text('seed = 4\n[[attacks]]\nalgorithm = "bim"\nepsilons = [0.01]\n')
    assert [a.id for a in load_config(path).attack_configs()] == ["bim-linf-0.01-it7"]

    path.write_text("seed = [")
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(MissingArtifactError):
        load_config(tmp_path / "absent.toml")


def test_shipped_configs_load():
    """Test that the configs under configs/ validate"""
    for name in ("default", "smoke"):
        config = load_config(CONFIGS / f"{name}.toml")
        assert config.defenses[0].name == "none"


def test_canonical_json_is_order_free():
    """Test that hashing ignores key order"""
    assert canonical_json({"b": 1, "a": 2}) == canonical_json({"a": 2, "b": 1})
    assert stable_hash(SmoothingConfig()) == stable_hash(from_mapping(SmoothingConfig, {}))
