"""Inference paths over a trained latent chain and landmark decoder.

Four entry points:

- :func:`infer_text`: phonemes in, landmarks and spectral features out. The
  two branches share the text encoding and predicted durations, then split;
  the landmark branch samples the expanded prior at landmark rate and never
  touches the flow or the feature decoder, and each branch draws noise from
  its own child generator, so the landmark output is bitwise independent of
  the acoustic branch.
- :func:`infer_speech`: spectral frames in, landmarks out, via posterior,
  flow, and rate resampling.
- :func:`infer_pipelined`: text in, landmarks out the long way round; first
  synthesize features, then feed them to the speech path. Kept as a baseline
  for timing and quality comparisons.
- :func:`infer_as`: speech from any speaker in, landmarks out, for models
  trained in arbitrary-speaker mode; the utterance encoder supplies the
  speaker latent and the one-hot label picks the emotion.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .landmark import LandmarkSystem
from .timing import (
    durations_to_land,
    pad_durations_for_grid,
    resample_array_linear,
    resample_linear,
)
from .types import (
    MODE_AS,
    ConditioningBundle,
    LandmarkSequence,
    LatentSequence,
    SpectralFrames,
    FLOW_SPACE,
    LAND_RATE,
    SPEC_RATE,
)
from .tts import TtsSystem, expand, integer_durations, sample_prior_frames


@dataclass
class TextInferenceResult:
    landmarks: LandmarkSequence
    spectral: SpectralFrames | None
    durations_spec: np.ndarray
    durations_land: np.ndarray


def infer_text(
    tts: TtsSystem,
    decoder: LandmarkSystem,
    phonemes: np.ndarray,
    bundle: ConditioningBundle,
    ratio: float,
    seed: int = 0,
    temperature: float = 0.667,
    with_spectral: bool = True,
) -> TextInferenceResult:
    rng_land = np.random.default_rng([seed, 0])
    rng_spec = np.random.default_rng([seed, 1])

    encoding = tts.text_encode(np.asarray(phonemes), bundle)
    d_spec = pad_durations_for_grid(
        integer_durations(tts.duration_predict(encoding.h, bundle)), ratio
    )
    d_land = durations_to_land(d_spec, ratio)

    mu_land, sigma_land = expand(encoding.prior, d_land)
    f_land = LatentSequence(
        values=sample_prior_frames(mu_land, sigma_land, temperature, rng_land),
        rate_tag=LAND_RATE,
        space_tag=FLOW_SPACE,
    )
    landmarks = decoder.decode_landmarks(f_land, bundle)

    spectral = None
    if with_spectral:
        mu_spec, sigma_spec = expand(encoding.prior, d_spec)
        fz = LatentSequence(
            values=sample_prior_frames(mu_spec, sigma_spec, temperature, rng_spec),
            rate_tag=SPEC_RATE,
            space_tag=FLOW_SPACE,
        )
        z, _ = tts.flow_inverse(fz, bundle)
        spectral = tts.feature_decode(z, bundle)

    return TextInferenceResult(
        landmarks=landmarks,
        spectral=spectral,
        durations_spec=d_spec,
        durations_land=d_land,
    )


def land_frame_count(num_spec_frames: int, ratio: float) -> int:
    """Landmark frame count for a spectral frame count, min one frame."""
    return max(1, int(np.rint(ratio * num_spec_frames)))


def infer_speech(
    tts: TtsSystem,
    decoder: LandmarkSystem,
    x: SpectralFrames,
    bundle: ConditioningBundle,
    ratio: float,
    noise_scale: float = 0.0,
    seed: int = 0,
) -> LandmarkSequence:
    rng = np.random.default_rng([seed, 2]) if noise_scale > 0 else None
    z, _, _ = tts.posterior_encode(x, bundle, noise_scale=noise_scale, rng=rng)
    fz, _ = tts.flow_forward(z, bundle)
    f_land = resample_linear(fz, land_frame_count(x.num_frames, ratio))
    return decoder.decode_landmarks(f_land, bundle)


def infer_direct(
    decoder: LandmarkSystem,
    x: SpectralFrames,
    bundle: ConditioningBundle,
    ratio: float,
) -> LandmarkSequence:
    """Speech-driven inference for decoders trained on raw resampled features.

    Bypasses the latent chain entirely, matching how direct-input decoders are
    trained: spectral frames are linearly resampled to landmark rate and fed
    straight in.
    """
    values = resample_array_linear(x.values, land_frame_count(x.num_frames, ratio))
    y = decoder.decode_array(values, bundle.global_vector())
    return LandmarkSequence(y=y, fps=decoder.fps, lip_indices=decoder.lip_indices)


def infer_pipelined(
    tts: TtsSystem,
    decoder: LandmarkSystem,
    phonemes: np.ndarray,
    bundle: ConditioningBundle,
    ratio: float,
    seed: int = 0,
    temperature: float = 0.667,
) -> TextInferenceResult:
    """Synthesize features from text, then run the speech path on them.

    The bundle (and its utterance latent) is reused for the second stage, so
    both stages agree on the conditioning.
    """
    first = infer_text(
        tts, decoder, phonemes, bundle, ratio, seed=seed, temperature=temperature,
        with_spectral=True,
    )
    landmarks = infer_speech(tts, decoder, first.spectral, bundle, ratio)
    return TextInferenceResult(
        landmarks=landmarks,
        spectral=first.spectral,
        durations_spec=first.durations_spec,
        durations_land=first.durations_land,
    )


def infer_as(
    tts: TtsSystem,
    decoder: LandmarkSystem,
    x: SpectralFrames,
    emotion_label: int,
    ratio: float,
    noise_scale: float = 0.0,
    seed: int = 0,
) -> LandmarkSequence:
    """Speech-driven generation for a speaker the system never trained on.

    Requires a chain trained in arbitrary-speaker mode: the one-hot label
    selects the emotion and the utterance encoder extracts a speaker latent
    from the input itself, so no speaker id is ever needed.
    """
    if tts.config.mode != MODE_AS:
        raise ValueError("infer_as requires a chain trained in arbitrary-speaker mode")
    z_u = tts.utterance_encode(x).mean
    bundle = tts.bundle(emotion_label, z_u=z_u)
    return infer_speech(tts, decoder, x, bundle, ratio, noise_scale=noise_scale, seed=seed)


# --- real-time-factor measurement ----------------------------------------


@dataclass
class RtfReport:
    """Wall-clock over content-seconds for one inference path."""

    path: str
    rtf_runs: list[float] = field(default_factory=list)
    wall_runs: list[float] = field(default_factory=list)
    content_seconds: float = 0.0

    @property
    def median_rtf(self) -> float:
        return statistics.median(self.rtf_runs)

    def as_dict(self) -> dict:
        return {
            "path": self.path,
            "median_rtf": self.median_rtf,
            "rtf_runs": self.rtf_runs,
            "wall_runs": self.wall_runs,
            "content_seconds": self.content_seconds,
        }


def measure_rtf(path: str, fn, runs: int = 5, warmup: int = 1) -> RtfReport:
    """Time ``fn`` (which returns content seconds) and report wall / content.

    Runs single-threaded so scheduling noise does not scramble comparisons
    between paths; the thread count is restored afterwards.
    """
    if runs < 1:
        raise ValueError("need at least one timed run")
    report = RtfReport(path=path)
    saved_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        for _ in range(warmup):
            fn()
        for _ in range(runs):
            start = time.perf_counter()
            content = fn()
            wall = time.perf_counter() - start
            if content <= 0:
                raise ValueError("inference produced no content to time against")
            report.wall_runs.append(wall)
            report.rtf_runs.append(wall / content)
            report.content_seconds = content
    finally:
        torch.set_num_threads(saved_threads)
    return report


def bench_paths(
    tts: TtsSystem,
    decoder: LandmarkSystem,
    phonemes: np.ndarray,
    x: SpectralFrames,
    bundle: ConditioningBundle,
    ratio: float,
    spec_fps: float,
    runs: int = 5,
    seed: int = 0,
) -> dict[str, RtfReport]:
    """Median RTF for the speech, text, and pipelined paths on shared inputs."""

    def run_text() -> float:
        result = infer_text(tts, decoder, phonemes, bundle, ratio, seed=seed)
        return float(np.sum(result.durations_spec)) / spec_fps

    def run_speech() -> float:
        infer_speech(tts, decoder, x, bundle, ratio)
        return x.num_frames / spec_fps

    def run_pipelined() -> float:
        result = infer_pipelined(tts, decoder, phonemes, bundle, ratio, seed=seed)
        return float(np.sum(result.durations_spec)) / spec_fps

    return {
        "speech": measure_rtf("speech", run_speech, runs=runs),
        "text": measure_rtf("text", run_text, runs=runs),
        "pipelined": measure_rtf("pipelined", run_pipelined, runs=runs),
    }
