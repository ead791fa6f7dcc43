import hashlib

import pytest

from xvguard.data import (
    Manifest,
    ManifestEntry,
    generate_toy_dataset,
    load_manifest,
    load_split,
    write_manifest,
)
from xvguard.errors import ManifestError


def _digest(root):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(root.rglob("*.wav"))}


def test_toy_corpus_splits(toy_corpus):
    """Test the split sizes and speaker coverage of the toy corpus"""
    _, manifest = toy_corpus
    assert len(manifest) == 40
    assert len(manifest.speakers) == 4
    assert len(manifest.split("train")) == 16
    assert len(manifest.split("enroll")) == 4
    assert len(manifest.split("test")) == 20


def test_toy_corpus_is_byte_identical(tmp_path):
    """Test that equal seeds write identical audio and different seeds do not"""
    generate_toy_dataset(tmp_path / "a", n_speakers=2, utts_per_speaker=3, duration_s=0.2, seed=1)
    generate_toy_dataset(tmp_path / "b", n_speakers=2, utts_per_speaker=3, duration_s=0.2, seed=1)
    generate_toy_dataset(tmp_path / "c", n_speakers=2, utts_per_speaker=3, duration_s=0.2, seed=2)
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    assert _digest(tmp_path / "a") != _digest(tmp_path / "c")


def test_manifest_round_trip(toy_corpus, tmp_path):
    """Test that a written manifest loads back with stable labels"""
    _, manifest = toy_corpus
    copy = load_manifest(write_manifest(manifest, tmp_path / "manifest.csv"))
    assert [e.utt_id for e in copy] == [e.utt_id for e in manifest]
    assert copy.label_of(manifest.speakers[2]) == 2


def test_malformed_rows_name_their_lines(tmp_path):
    """Test that bad rows are reported with line numbers"""
    path = tmp_path / "manifest.csv"
    path.write_text("utt_id,path,speaker,split\na,a.wav,s1,train\nb,b.wav,s1\nc,c.wav,s1,dev\n")
    with pytest.raises(ManifestError, match="line 3") as info:
        load_manifest(path, check_files=False)
    assert "line 4" in str(info.value)


def test_missing_audio_is_listed(tmp_path):
    """Test that missing files are reported with their paths"""
    path = tmp_path / "manifest.csv"
    path.write_text("utt_id,path,speaker,split\na,missing.wav,s1,train\n")
    with pytest.raises(ManifestError, match="missing.wav"):
        load_manifest(path)


def test_duplicate_ids_and_empty_manifests():
    """Test manifest-level validation"""
    entry = ManifestEntry(utt_id="a", path="a.wav", speaker="s1", split="train")
    with pytest.raises(ManifestError, match="duplicate"):
        Manifest(entries=(entry, entry))
    with pytest.raises(ManifestError, match="no entries"):
        Manifest(entries=())


def test_load_split_crops_and_labels(toy_corpus):
    """Test labels and duration capping of a loaded split"""
    _, manifest = toy_corpus
    audio = load_split(manifest, "test", max_seconds=0.25)
    assert len(audio) == 20
    assert all(len(w) == 4000 for w in audio.waveforms)
    assert audio.batch().shape == (20, 4000)
    assert sorted(set(audio.labels.tolist())) == [0, 1, 2, 3]
