"""Deterministic synthetic corpus: phoneme sequences, spectral features, landmarks.

The corpus replaces recorded speech/video with a fully known generative
process: every phoneme owns a mouth-shape target and a base duration, spectral
frames are seeded embeddings of (phoneme, speaker, emotion), and landmarks are
rendered by an articulation oracle whose lip trace is a pure function of the
phonetic content. Identical (config, seed) pairs reproduce byte-identical
files, including under per-utterance parallel generation, because every random
draw derives from (seed, utterance index).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensorio import load_tensor, save_tensor
from .timing import durations_to_land, pad_durations_for_grid
from .types import LandmarkSequence, SpectralFrames

MANIFEST_SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.jsonl"

# cross-fade length at the start of each phoneme segment, in landmark frames
TRANSITION_FRAMES = 2

# lip ellipse geometry in the normalized face frame
LIP_CENTER = (0.0, -0.45)
LIP_RX_BASE = 0.28
LIP_RY_SCALE = 0.18

SPLIT_TRAIN = "train"
SPLIT_EVAL = "eval"
SPLIT_UNSEEN = "unseen"


class CorpusConfigError(ValueError):
    """Raised for corpus configurations that cannot be generated."""


@dataclass(frozen=True)
class MouthShape:
    """Articulation target: vertical openness and horizontal width, both in [0, 1]."""

    openness: float
    width: float

    def __post_init__(self) -> None:
        for name, v in (("openness", self.openness), ("width", self.width)):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class PhonemeInventory:
    """Phoneme symbol set with per-phoneme base durations and articulation targets."""

    base_durations: tuple[int, ...]
    targets: tuple[MouthShape, ...]
    silence_id: int = 0

    def __post_init__(self) -> None:
        if len(self.base_durations) != len(self.targets):
            raise ValueError("base durations and targets must have equal length")
        if self.num_phonemes < 8:
            raise ValueError(f"inventory needs at least 8 phonemes, got {self.num_phonemes}")
        if any(d < 1 for d in self.base_durations):
            raise ValueError("base durations must be >= 1 frame")
        if not 0 <= self.silence_id < self.num_phonemes:
            raise ValueError("silence id outside inventory")
        if self.targets[self.silence_id].openness != 0.0:
            raise ValueError("silence must map to openness 0")

    @property
    def num_phonemes(self) -> int:
        return len(self.base_durations)

    def check_ids(self, phonemes: np.ndarray) -> None:
        bad = [int(p) for p in np.unique(phonemes) if not 0 <= p < self.num_phonemes]
        if bad:
            raise ValueError(f"unknown phoneme ids {bad} (inventory has {self.num_phonemes})")


def default_inventory(constant_duration: int | None = None) -> PhonemeInventory:
    """Ten phonemes: silence plus nine voiced shapes spanning the openness range."""
    openness = (0.0, 1.0, 0.2, 0.8, 0.4, 0.95, 0.1, 0.6, 0.9, 0.3)
    width = (0.5, 0.4, 0.9, 0.6, 0.2, 0.8, 0.7, 0.3, 0.55, 0.75)
    durations = (6, 5, 7, 4, 8, 6, 9, 5, 10, 7)
    if constant_duration is not None:
        durations = (constant_duration,) * len(durations)
    targets = tuple(MouthShape(o, w) for o, w in zip(openness, width))
    return PhonemeInventory(base_durations=durations, targets=targets)


@dataclass(frozen=True)
class FaceLayout:
    """Static keypoint layout; the last ``num_lip`` indices form the ordered lip loop."""

    base_points: np.ndarray
    lip_indices: tuple[int, ...]

    @property
    def num_points(self) -> int:
        return self.base_points.shape[0]


def build_face_layout(num_keypoints: int, num_lip: int) -> FaceLayout:
    if num_lip < 4 or num_lip % 2 != 0:
        raise CorpusConfigError(f"lip loop needs an even count >= 4, got {num_lip}")
    if num_keypoints < num_lip + 4:
        raise CorpusConfigError(
            f"need at least {num_lip + 4} keypoints for {num_lip} lip points"
        )
    n_other = num_keypoints - num_lip
    points = np.zeros((num_keypoints, 2))
    # eyes, nose tip, chin anchor, then an outline ring for the remainder
    fixed = np.array([[-0.3, 0.35], [0.3, 0.35], [0.0, 0.0], [0.0, -0.85]])
    points[: min(4, n_other)] = fixed[: min(4, n_other)]
    n_ring = n_other - 4
    if n_ring > 0:
        angles = 2.0 * np.pi * np.arange(n_ring) / n_ring + np.pi / 2.0
        points[4:n_other, 0] = 0.78 * np.cos(angles)
        points[4:n_other, 1] = 0.92 * np.sin(angles)
    lip = tuple(range(n_other, num_keypoints))
    return FaceLayout(base_points=points, lip_indices=lip)


@dataclass
class CorpusConfig:
    num_speakers: int = 4
    num_paired_speakers: int = 1
    num_unseen_speakers: int = 0
    num_emotions: int = 3
    num_utterances: int = 120
    feat_dim: int = 16
    spec_fps: float = 80.0
    land_fps: float = 20.0
    num_keypoints: int = 20
    num_lip_points: int = 8
    noise_spec: float = 0.05
    noise_land: float = 0.004
    channel_gain: float = 0.1
    duration_jitter: int = 1
    min_phrase_len: int = 4
    max_phrase_len: int = 9
    eval_fraction: float = 0.2
    constant_duration: int | None = None
    inventory: PhonemeInventory = field(default_factory=default_inventory)

    def __post_init__(self) -> None:
        if self.constant_duration is not None:
            self.inventory = default_inventory(self.constant_duration)
        if self.num_utterances <= 0:
            raise CorpusConfigError("corpus needs at least one utterance")
        if not 0 < self.land_fps < self.spec_fps:
            raise CorpusConfigError(
                f"need spec_fps > land_fps > 0, got {self.spec_fps}/{self.land_fps}"
            )
        if not 1 <= self.num_paired_speakers <= self.num_speakers:
            raise CorpusConfigError("paired speaker count outside [1, num_speakers]")
        if self.num_unseen_speakers < 0 or (
            self.num_paired_speakers + self.num_unseen_speakers > self.num_speakers
        ):
            raise CorpusConfigError("paired + unseen speakers exceed the speaker count")
        if self.num_emotions < 1:
            raise CorpusConfigError("need at least one emotion")
        if self.channel_gain < 0:
            raise CorpusConfigError("channel gain cannot be negative")
        if not 2 <= self.min_phrase_len <= self.max_phrase_len:
            raise CorpusConfigError("bad phrase length range")
        if not 0.0 < self.eval_fraction < 0.5:
            raise CorpusConfigError("eval fraction must lie in (0, 0.5)")

    @property
    def ratio(self) -> float:
        return self.land_fps / self.spec_fps

    def paired_speakers(self) -> range:
        return range(self.num_paired_speakers)

    def unseen_speakers(self) -> range:
        return range(self.num_speakers - self.num_unseen_speakers, self.num_speakers)


# --- spectral synthesis ---------------------------------------------------


@dataclass(frozen=True)
class SpectralModel:
    """Embedding tables mapping (phoneme, speaker, emotion) to feature space.

    A frame of phoneme p for speaker s with emotion e is
    ``phoneme[p] + 0.8 * speaker[s] + 0.6 * emotion[e]`` plus seeded white noise.
    """

    phoneme_table: np.ndarray
    speaker_table: np.ndarray
    emotion_table: np.ndarray

    SPEAKER_GAIN = 0.8
    EMOTION_GAIN = 0.6

    @classmethod
    def from_seed(
        cls, seed: int, num_phonemes: int, num_speakers: int, num_emotions: int, feat_dim: int
    ) -> "SpectralModel":
        rng = np.random.default_rng([seed, 0x5E_EC])
        scale = 1.0 / math.sqrt(feat_dim)
        return cls(
            phoneme_table=rng.standard_normal((num_phonemes, feat_dim)) * scale,
            speaker_table=rng.standard_normal((num_speakers, feat_dim)) * scale,
            emotion_table=rng.standard_normal((num_emotions, feat_dim)) * scale,
        )

    def clean_frame(self, phoneme: int, speaker: int, emotion: int) -> np.ndarray:
        return (
            self.phoneme_table[phoneme]
            + self.SPEAKER_GAIN * self.speaker_table[speaker]
            + self.EMOTION_GAIN * self.emotion_table[emotion]
        )


def render_spectral(
    model: SpectralModel,
    phonemes: np.ndarray,
    durations_spec: np.ndarray,
    speaker_id: int,
    emotion_id: int,
    seed: int,
    noise: float = 0.0,
) -> SpectralFrames:
    """Render frame-level features for one utterance; length is sum(durations_spec)."""
    phonemes = np.asarray(phonemes, dtype=np.int64)
    durations_spec = np.asarray(durations_spec, dtype=np.int64)
    if np.any(durations_spec <= 0):
        raise ValueError("durations must be positive")
    if not 0 <= speaker_id < model.speaker_table.shape[0]:
        raise ValueError(f"unknown speaker id {speaker_id}")
    if not 0 <= emotion_id < model.emotion_table.shape[0]:
        raise ValueError(f"unknown emotion id {emotion_id}")
    if np.any(phonemes < 0) or np.any(phonemes >= model.phoneme_table.shape[0]):
        raise ValueError("unknown phoneme id in sequence")

    frame_phonemes = np.repeat(phonemes, durations_spec)
    frames = (
        model.phoneme_table[frame_phonemes]
        + model.SPEAKER_GAIN * model.speaker_table[speaker_id]
        + model.EMOTION_GAIN * model.emotion_table[emotion_id]
    )
    if noise > 0.0:
        rng = np.random.default_rng([seed, 0x0F_AC])
        frames = frames + noise * rng.standard_normal(frames.shape)
    return SpectralFrames(values=frames)


# --- articulation oracle --------------------------------------------------


def crossfade_track(values: np.ndarray, durations: np.ndarray) -> np.ndarray:
    """Expand per-token values to frames with a linear fade at segment starts.

    Each segment after the first begins with up to ``TRANSITION_FRAMES`` frames
    interpolating from the previous token's value toward its own: with a 2-frame
    transition the blend fractions are 1/3 and 2/3 before the hold value.
    """
    values = np.asarray(values, dtype=np.float64)
    durations = np.asarray(durations, dtype=np.int64)
    if np.any(durations <= 0):
        raise ValueError("durations must be positive")
    out = np.repeat(values, durations, axis=0).astype(np.float64)
    starts = np.concatenate(([0], np.cumsum(durations)))[:-1]
    for i in range(1, len(values)):
        prev_v, next_v = values[i - 1], values[i]
        for k in range(min(TRANSITION_FRAMES, int(durations[i]))):
            frac = (k + 1) / (TRANSITION_FRAMES + 1)
            out[starts[i] + k] = (1.0 - frac) * prev_v + frac * next_v
    return out


def oracle_openness(
    inventory: PhonemeInventory, phonemes: np.ndarray, durations: np.ndarray
) -> np.ndarray:
    """Frame-level mouth openness implied by the phonetic content alone."""
    phonemes = np.asarray(phonemes, dtype=np.int64)
    inventory.check_ids(phonemes)
    targets = np.array([inventory.targets[p].openness for p in phonemes])
    return crossfade_track(targets, durations)


def head_motion(
    num_frames: int, fps: float, speaker_id: int, emotion_id: int
) -> np.ndarray:
    """Rigid (dx, dy) drift per frame; parameters are arithmetic in the ids."""
    t = np.arange(num_frames, dtype=np.float64) / fps
    amp_x = 0.015 + 0.004 * ((speaker_id * 3 + emotion_id) % 4)
    amp_y = 0.012 + 0.004 * ((speaker_id + 2 * emotion_id) % 3)
    freq_x = 0.30 + 0.05 * (emotion_id % 3)
    freq_y = 0.22 + 0.04 * (speaker_id % 4)
    phase_x = 2.399963 * speaker_id
    phase_y = 1.7 * emotion_id + 0.9
    dx = amp_x * np.sin(2.0 * np.pi * freq_x * t + phase_x)
    dy = amp_y * np.sin(2.0 * np.pi * freq_y * t + phase_y)
    return np.stack([dx, dy], axis=1)


def oracle_articulate(
    inventory: PhonemeInventory,
    phonemes: np.ndarray,
    durations_land: np.ndarray,
    layout: FaceLayout,
    fps: float,
    speaker_id: int = 0,
    emotion_id: int = 0,
) -> LandmarkSequence:
    """Render ground-truth landmarks for one utterance at the landmark rate.

    Lip points trace an ellipse whose radii follow the cross-faded mouth-shape
    targets; all other points ride a smooth per-(speaker, emotion) head drift.
    """
    phonemes = np.asarray(phonemes, dtype=np.int64)
    durations_land = np.asarray(durations_land, dtype=np.int64)
    if np.any(durations_land <= 0):
        raise ValueError("durations must be positive integers")
    inventory.check_ids(phonemes)

    shape_targets = np.array(
        [(inventory.targets[p].openness, inventory.targets[p].width) for p in phonemes]
    )
    shapes = crossfade_track(shape_targets, durations_land)  # (T, 2): openness, width
    num_frames = int(durations_land.sum())

    y = np.broadcast_to(layout.base_points, (num_frames,) + layout.base_points.shape).copy()

    lip = np.array(layout.lip_indices)
    k = np.arange(len(lip))
    theta = 2.0 * np.pi * k / len(lip)
    rx = LIP_RX_BASE * (0.5 + 0.5 * shapes[:, 1])[:, None]
    ry = LIP_RY_SCALE * shapes[:, 0][:, None]
    y[:, lip, 0] = LIP_CENTER[0] + rx * np.cos(theta)[None, :]
    y[:, lip, 1] = LIP_CENTER[1] + ry * np.sin(theta)[None, :]

    drift = head_motion(num_frames, fps, speaker_id, emotion_id)
    non_lip = np.setdiff1d(np.arange(layout.num_points), lip)
    y[:, non_lip, :] += drift[:, None, :]

    return LandmarkSequence(y=y, fps=fps, lip_indices=tuple(int(i) for i in lip))


def lip_openness_trace(seq: LandmarkSequence) -> np.ndarray:
    """Per-frame vertical lip extent; proportional to oracle openness on clean data."""
    lip_y = seq.y[:, list(seq.lip_indices), 1]
    return lip_y.max(axis=1) - lip_y.min(axis=1)


# --- manifest -------------------------------------------------------------


@dataclass
class UtteranceRecord:
    utt_id: str
    speaker_id: int
    emotion_id: int
    split: str
    phonemes: list[int]
    durations_spec: list[int]
    spectral_path: str
    landmark_path: str | None


@dataclass
class CorpusManifest:
    root: Path
    seed: int
    spec_fps: float
    land_fps: float
    feat_dim: int
    num_keypoints: int
    lip_indices: tuple[int, ...]
    num_speakers: int
    num_paired_speakers: int
    num_unseen_speakers: int
    num_emotions: int
    inventory: PhonemeInventory
    records: list[UtteranceRecord]

    @property
    def ratio(self) -> float:
        return self.land_fps / self.spec_fps

    def select(
        self, split: str | None = None, speaker_id: int | None = None, paired_only: bool = False
    ) -> list[UtteranceRecord]:
        out = []
        for r in self.records:
            if split is not None and r.split != split:
                continue
            if speaker_id is not None and r.speaker_id != speaker_id:
                continue
            if paired_only and r.landmark_path is None:
                continue
            out.append(r)
        return out

    def spectral(self, record: UtteranceRecord) -> SpectralFrames:
        return SpectralFrames(values=load_tensor(self.root / record.spectral_path))

    def landmarks(self, record: UtteranceRecord) -> LandmarkSequence:
        if record.landmark_path is None:
            raise ValueError(f"{record.utt_id}: no landmark file (unpaired speaker)")
        return LandmarkSequence(
            y=load_tensor(self.root / record.landmark_path),
            fps=self.land_fps,
            lip_indices=self.lip_indices,
        )

    def validate_files(self) -> None:
        """Check that every referenced file exists and matches the declared shapes."""
        for r in self.records:
            x = self.spectral(r)
            expected = int(np.sum(r.durations_spec))
            if x.num_frames != expected or x.feat_dim != self.feat_dim:
                raise ValueError(
                    f"{r.utt_id}: spectral shape {x.values.shape} does not match "
                    f"declared ({expected}, {self.feat_dim})"
                )
            if r.landmark_path is not None:
                y = self.landmarks(r)
                t_land = int(np.rint(self.ratio * expected))
                if abs(y.num_frames - t_land) > 1 or y.num_points != self.num_keypoints:
                    raise ValueError(
                        f"{r.utt_id}: landmark shape {y.y.shape} does not match "
                        f"declared (~{t_land}, {self.num_keypoints}, 2)"
                    )

    def save(self, path: Path | None = None) -> Path:
        path = path or (self.root / MANIFEST_NAME)
        header = {
            "kind": "header",
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "seed": self.seed,
            "spec_fps": self.spec_fps,
            "land_fps": self.land_fps,
            "feat_dim": self.feat_dim,
            "num_keypoints": self.num_keypoints,
            "lip_indices": list(self.lip_indices),
            "num_speakers": self.num_speakers,
            "num_paired_speakers": self.num_paired_speakers,
            "num_unseen_speakers": self.num_unseen_speakers,
            "num_emotions": self.num_emotions,
            "inventory": {
                "base_durations": list(self.inventory.base_durations),
                "openness": [t.openness for t in self.inventory.targets],
                "width": [t.width for t in self.inventory.targets],
                "silence_id": self.inventory.silence_id,
            },
        }
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for r in self.records:
                row = {"kind": "utterance", **dataclasses.asdict(r)}
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        return path


def load_manifest(path: str | Path) -> CorpusManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    records: list[UtteranceRecord] = []
    header = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            if row["kind"] == "header":
                header = row
            elif row["kind"] == "utterance":
                row.pop("kind")
                records.append(UtteranceRecord(**row))
            else:
                raise ValueError(f"unknown manifest row kind {row['kind']!r}")
    if header is None:
        raise ValueError(f"{path}: manifest has no header row")
    if header["schema_version"] != MANIFEST_SCHEMA_VERSION:
        raise ValueError(f"unsupported manifest schema {header['schema_version']}")
    inv = header["inventory"]
    inventory = PhonemeInventory(
        base_durations=tuple(inv["base_durations"]),
        targets=tuple(MouthShape(o, w) for o, w in zip(inv["openness"], inv["width"])),
        silence_id=inv["silence_id"],
    )
    return CorpusManifest(
        root=path.parent,
        seed=header["seed"],
        spec_fps=header["spec_fps"],
        land_fps=header["land_fps"],
        feat_dim=header["feat_dim"],
        num_keypoints=header["num_keypoints"],
        lip_indices=tuple(header["lip_indices"]),
        num_speakers=header["num_speakers"],
        num_paired_speakers=header["num_paired_speakers"],
        num_unseen_speakers=header["num_unseen_speakers"],
        num_emotions=header["num_emotions"],
        inventory=inventory,
        records=records,
    )


# --- generation -----------------------------------------------------------


def _sample_phrase(config: CorpusConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    inv = config.inventory
    voiced = [p for p in range(inv.num_phonemes) if p != inv.silence_id]
    length = int(rng.integers(config.min_phrase_len, config.max_phrase_len + 1))
    interior = rng.choice(voiced, size=length, replace=True)
    phonemes = np.concatenate(([inv.silence_id], interior, [inv.silence_id]))
    base = np.array([inv.base_durations[p] for p in phonemes], dtype=np.int64)
    if config.duration_jitter > 0:
        jitter = rng.integers(-config.duration_jitter, config.duration_jitter + 1, len(base))
        durations = np.maximum(base + jitter, 2)
    else:
        durations = base
    # guards the rare all-short phrase whose rounded landmark total would
    # fall below the token count
    return phonemes, pad_durations_for_grid(durations, config.ratio)


def gen_corpus(config: CorpusConfig, seed: int, out_dir: str | Path) -> CorpusManifest:
    """Generate the corpus under ``out_dir`` and return its manifest.

    Speakers 0..num_paired-1 are paired (landmarks present); the last
    num_unseen speakers are generated but tagged as held-out-unseen so that no
    training stage may touch them.
    """
    out_dir = Path(out_dir)
    (out_dir / "spectral").mkdir(parents=True, exist_ok=True)
    (out_dir / "landmarks").mkdir(parents=True, exist_ok=True)

    model = SpectralModel.from_seed(
        seed, config.inventory.num_phonemes, config.num_speakers, config.num_emotions, config.feat_dim
    )
    layout = build_face_layout(config.num_keypoints, config.num_lip_points)
    eval_every = max(2, round(1.0 / config.eval_fraction))
    unseen = set(config.unseen_speakers())
    paired = set(config.paired_speakers())

    records: list[UtteranceRecord] = []
    for idx in range(config.num_utterances):
        speaker = idx % config.num_speakers
        emotion = (idx // config.num_speakers) % config.num_emotions
        rng = np.random.default_rng([seed, idx])
        phonemes, d_spec = _sample_phrase(config, rng)

        x = render_spectral(
            model, phonemes, d_spec, speaker, emotion, seed=0, noise=0.0
        ).values
        # recording artifacts: a per-utterance channel offset (constant
        # across frames, like a session/microphone effect) plus white noise
        if config.channel_gain > 0:
            x = x + config.channel_gain * rng.standard_normal(x.shape[1])
        if config.noise_spec > 0:
            x = x + config.noise_spec * rng.standard_normal(x.shape)

        utt_id = f"utt_{idx:05d}"
        spectral_rel = f"spectral/{utt_id}.t1"
        save_tensor(out_dir / spectral_rel, x)

        landmark_rel = None
        if speaker in paired:
            d_land = durations_to_land(d_spec, config.ratio)
            lm = oracle_articulate(
                config.inventory,
                phonemes,
                d_land,
                layout,
                config.land_fps,
                speaker_id=speaker,
                emotion_id=emotion,
            ).y
            if config.noise_land > 0:
                lm = lm + config.noise_land * rng.standard_normal(lm.shape)
            landmark_rel = f"landmarks/{utt_id}.t1"
            save_tensor(out_dir / landmark_rel, lm)

        # the eval pick keys on the per-speaker sequence number, not the raw
        # index: speakers cycle with idx, so "every k-th utterance" would
        # alias against the speaker cycle whenever k divides the speaker count
        if speaker in unseen:
            split = SPLIT_UNSEEN
        elif (idx // config.num_speakers) % eval_every == eval_every - 1:
            split = SPLIT_EVAL
        else:
            split = SPLIT_TRAIN
        records.append(
            UtteranceRecord(
                utt_id=utt_id,
                speaker_id=speaker,
                emotion_id=emotion,
                split=split,
                phonemes=[int(p) for p in phonemes],
                durations_spec=[int(d) for d in d_spec],
                spectral_path=spectral_rel,
                landmark_path=landmark_rel,
            )
        )

    manifest = CorpusManifest(
        root=out_dir,
        seed=seed,
        spec_fps=config.spec_fps,
        land_fps=config.land_fps,
        feat_dim=config.feat_dim,
        num_keypoints=config.num_keypoints,
        lip_indices=layout.lip_indices,
        num_speakers=config.num_speakers,
        num_paired_speakers=config.num_paired_speakers,
        num_unseen_speakers=config.num_unseen_speakers,
        num_emotions=config.num_emotions,
        inventory=config.inventory,
        records=records,
    )
    manifest.save()
    manifest.validate_files()
    return manifest
