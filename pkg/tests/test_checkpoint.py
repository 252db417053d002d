"""Checkpoint round trips and blob validation."""

import numpy as np
import pytest
import torch

from landsyn.checkpoint import (
    FORMAT_VERSION,
    CheckpointError,
    load_landmark,
    load_tts,
    save_landmark,
    save_tts,
)
from landsyn.infer import infer_text
from landsyn.types import SpectralFrames


def test_tts_roundtrip_preserves_behaviour(small_chain, small_decoder, tmp_path):
    path = tmp_path / "tts.pt"
    save_tts(path, small_chain.model, extra={"spec_fps": 80.0})
    loaded, extra = load_tts(path)
    assert extra["spec_fps"] == 80.0
    assert loaded.config == small_chain.config

    ph = np.array([0, 4, 7, 0])
    bundle_a = small_chain.bundle(1)
    bundle_b = loaded.bundle(1)
    a = infer_text(small_chain, small_decoder, ph, bundle_a, 0.25, seed=5)
    b = infer_text(loaded, small_decoder, ph, bundle_b, 0.25, seed=5)
    assert np.array_equal(a.landmarks.y, b.landmarks.y)
    assert np.array_equal(a.spectral.values, b.spectral.values)

    x = SpectralFrames(values=np.random.default_rng(0).standard_normal((12, 16)))
    assert np.array_equal(
        small_chain.utterance_encode(x).mean, loaded.utterance_encode(x).mean
    )


def test_landmark_roundtrip(small_decoder, tmp_path):
    path = tmp_path / "landmark_mixed.pt"
    save_landmark(path, small_decoder, mode="mixed", extra={"land_fps": 20.0})
    loaded, mode, extra = load_landmark(path)
    assert mode == "mixed"
    assert extra["land_fps"] == 20.0
    assert loaded.fps == small_decoder.fps
    assert loaded.lip_indices == small_decoder.lip_indices

    vals = np.random.default_rng(1).standard_normal((9, small_decoder.config.in_dim))
    gvec = np.random.default_rng(2).standard_normal(small_decoder.config.global_dim)
    assert np.array_equal(
        small_decoder.decode_array(vals, gvec), loaded.decode_array(vals, gvec)
    )


def test_kind_mismatch_rejected(small_chain, small_decoder, tmp_path):
    tts_path = tmp_path / "tts.pt"
    save_tts(tts_path, small_chain.model)
    with pytest.raises(CheckpointError, match="expected 'landmark'"):
        load_landmark(tts_path)
    lm_path = tmp_path / "lm.pt"
    save_landmark(lm_path, small_decoder, mode="ttl")
    with pytest.raises(CheckpointError, match="expected 'tts'"):
        load_tts(lm_path)


def test_version_mismatch_rejected(small_chain, tmp_path):
    path = tmp_path / "old.pt"
    save_tts(path, small_chain.model)
    blob = torch.load(path, weights_only=True)
    blob["format_version"] = FORMAT_VERSION + 1
    torch.save(blob, path)
    with pytest.raises(CheckpointError, match="format version"):
        load_tts(path)


def test_garbage_rejected(tmp_path):
    path = tmp_path / "junk.pt"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(CheckpointError):
        load_tts(path)
    torch.save({"something": 1}, tmp_path / "odd.pt")
    with pytest.raises(CheckpointError, match="not a model checkpoint"):
        load_tts(tmp_path / "odd.pt")


def test_missing_file_raises_file_not_found(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_tts(tmp_path / "absent.pt")
