"""Synthetic corpus: oracle geometry, determinism, manifest round trips."""

import numpy as np
import pytest

from landsyn.corpus import (
    LIP_RY_SCALE,
    SPLIT_EVAL,
    SPLIT_TRAIN,
    SPLIT_UNSEEN,
    CorpusConfig,
    CorpusConfigError,
    MouthShape,
    PhonemeInventory,
    build_face_layout,
    crossfade_track,
    default_inventory,
    gen_corpus,
    head_motion,
    lip_openness_trace,
    load_manifest,
    oracle_articulate,
    oracle_openness,
)


def small_config(**overrides):
    base = dict(
        num_speakers=3,
        num_paired_speakers=2,
        num_unseen_speakers=1,
        num_emotions=2,
        num_utterances=18,
        noise_spec=0.02,
        noise_land=0.002,
    )
    base.update(overrides)
    return CorpusConfig(**base)


# --- inventory and layout -------------------------------------------------


def test_mouth_shape_range_checked():
    with pytest.raises(ValueError):
        MouthShape(openness=1.2, width=0.5)
    with pytest.raises(ValueError):
        MouthShape(openness=0.5, width=-0.1)


def test_default_inventory_contract():
    inv = default_inventory()
    assert inv.num_phonemes == 10
    assert inv.targets[inv.silence_id].openness == 0.0
    assert all(d >= 1 for d in inv.base_durations)


def test_inventory_validation():
    shapes = tuple(MouthShape(0.1 * i, 0.5) for i in range(8))
    with pytest.raises(ValueError, match="equal length"):
        PhonemeInventory(base_durations=(5,) * 7, targets=shapes)
    with pytest.raises(ValueError, match="at least 8"):
        PhonemeInventory(base_durations=(5,) * 4, targets=shapes[:4])
    with pytest.raises(ValueError, match="openness 0"):
        PhonemeInventory(base_durations=(5,) * 8, targets=shapes, silence_id=3)


def test_inventory_rejects_unknown_ids():
    inv = default_inventory()
    with pytest.raises(ValueError, match="unknown phoneme"):
        inv.check_ids(np.array([0, 3, 10]))


def test_face_layout_lip_loop_is_suffix():
    layout = build_face_layout(num_keypoints=20, num_lip=8)
    assert layout.num_points == 20
    assert layout.lip_indices == tuple(range(12, 20))
    with pytest.raises(CorpusConfigError):
        build_face_layout(num_keypoints=20, num_lip=7)
    with pytest.raises(CorpusConfigError):
        build_face_layout(num_keypoints=9, num_lip=8)


# --- articulation oracle --------------------------------------------------


def test_crossfade_frozen_oracle():
    """Two-frame fade at a segment start blends at fractions 1/3 and 2/3."""
    out = crossfade_track(np.array([0.0, 1.0]), np.array([3, 3]))
    assert np.allclose(out, [0.0, 0.0, 0.0, 1 / 3, 2 / 3, 1.0])


def test_crossfade_short_segment_truncates_fade():
    out = crossfade_track(np.array([0.0, 1.0]), np.array([2, 1]))
    assert np.allclose(out, [0.0, 0.0, 1 / 3])


def test_crossfade_vector_values():
    vals = np.array([[0.0, 1.0], [1.0, 0.0]])
    out = crossfade_track(vals, np.array([1, 3]))
    assert out.shape == (4, 2)
    assert np.allclose(out[1], [1 / 3, 2 / 3])
    assert np.allclose(out[3], [1.0, 0.0])


def test_openness_is_pure_function_of_content():
    inv = default_inventory()
    ph = np.array([0, 3, 5, 0])
    d = np.array([2, 4, 3, 2])
    a = oracle_openness(inv, ph, d)
    b = oracle_openness(inv, ph, d)
    assert np.array_equal(a, b)
    assert a[0] == 0.0  # silence holds the mouth closed
    assert a.shape == (11,)


def test_lip_trace_tracks_openness_exactly():
    """On clean renders the vertical lip extent is 2 * RY_SCALE * openness."""
    inv = default_inventory()
    layout = build_face_layout(20, 8)
    ph = np.array([0, 1, 4, 0])
    d = np.array([3, 5, 4, 3])
    seq = oracle_articulate(inv, ph, d, layout, fps=20.0)
    trace = lip_openness_trace(seq)
    expected = 2.0 * LIP_RY_SCALE * oracle_openness(inv, ph, d)
    assert np.allclose(trace, expected, atol=1e-12)
    assert seq.y.shape == (15, 20, 2)


def test_non_lip_points_move_rigidly():
    inv = default_inventory()
    layout = build_face_layout(20, 8)
    seq = oracle_articulate(inv, np.array([0, 2, 0]), np.array([4, 4, 4]), layout, fps=20.0)
    non_lip = [i for i in range(20) if i not in layout.lip_indices]
    rel = seq.y[:, non_lip, :] - layout.base_points[non_lip]
    # every non-lip point carries the same per-frame drift vector
    assert np.allclose(rel, rel[:, :1, :], atol=1e-12)


def test_head_motion_separates_speaker_emotion_pairs():
    tracks = {
        (s, e): head_motion(40, 20.0, s, e) for s in range(3) for e in range(2)
    }
    keys = list(tracks)
    for i, a in enumerate(keys):
        for b in keys[i + 1 :]:
            assert not np.allclose(tracks[a], tracks[b])


# --- generation and manifest ----------------------------------------------


def test_generation_is_byte_identical(tmp_path):
    config = small_config()
    m1 = gen_corpus(config, seed=5, out_dir=tmp_path / "a")
    gen_corpus(small_config(), seed=5, out_dir=tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files, "corpus produced no files"
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel
    assert len(m1.records) == config.num_utterances


def test_different_seed_changes_content(tmp_path):
    gen_corpus(small_config(), seed=1, out_dir=tmp_path / "a")
    gen_corpus(small_config(), seed=2, out_dir=tmp_path / "b")
    a = (tmp_path / "a" / "manifest.jsonl").read_text()
    b = (tmp_path / "b" / "manifest.jsonl").read_text()
    assert a != b


def test_split_and_pairing_policy(tmp_path):
    config = small_config()
    manifest = gen_corpus(config, seed=3, out_dir=tmp_path)
    by_split = {s: manifest.select(split=s) for s in (SPLIT_TRAIN, SPLIT_EVAL, SPLIT_UNSEEN)}
    assert all(by_split.values()), "every split should be populated"
    unseen_ids = set(config.unseen_speakers())
    for r in by_split[SPLIT_UNSEEN]:
        assert r.speaker_id in unseen_ids
    for s in (SPLIT_TRAIN, SPLIT_EVAL):
        for r in by_split[s]:
            assert r.speaker_id not in unseen_ids
    paired = manifest.select(paired_only=True)
    assert paired and all(r.speaker_id < config.num_paired_speakers for r in paired)
    # unpaired records must refuse to load landmarks
    unpaired = [r for r in manifest.records if r.landmark_path is None]
    assert unpaired
    with pytest.raises(ValueError, match="unpaired"):
        manifest.landmarks(unpaired[0])


def test_landmark_frame_count_matches_spec_length(tmp_path):
    manifest = gen_corpus(small_config(), seed=4, out_dir=tmp_path)
    manifest.validate_files()
    for r in manifest.select(paired_only=True):
        t_spec = sum(r.durations_spec)
        t_land = manifest.landmarks(r).num_frames
        assert abs(t_land - round(manifest.ratio * t_spec)) <= 1


def test_manifest_roundtrip(tmp_path):
    manifest = gen_corpus(small_config(), seed=6, out_dir=tmp_path)
    loaded = load_manifest(tmp_path)
    assert loaded.records == manifest.records
    assert loaded.inventory == manifest.inventory
    assert loaded.lip_indices == manifest.lip_indices
    assert (loaded.spec_fps, loaded.land_fps) == (manifest.spec_fps, manifest.land_fps)
    r = loaded.select(paired_only=True)[0]
    assert loaded.spectral(r).num_frames == sum(r.durations_spec)


def test_config_validation():
    with pytest.raises(CorpusConfigError):
        CorpusConfig(num_utterances=0)
    with pytest.raises(CorpusConfigError):
        CorpusConfig(land_fps=90.0, spec_fps=80.0)
    with pytest.raises(CorpusConfigError):
        CorpusConfig(num_speakers=2, num_paired_speakers=3)
    with pytest.raises(CorpusConfigError):
        CorpusConfig(num_speakers=3, num_paired_speakers=2, num_unseen_speakers=2)
    with pytest.raises(CorpusConfigError):
        CorpusConfig(eval_fraction=0.9)


def test_constant_duration_mode():
    config = CorpusConfig(constant_duration=6, duration_jitter=0)
    assert set(config.inventory.base_durations) == {6}
