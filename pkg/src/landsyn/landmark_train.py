"""Training for the landmark decoder on top of a frozen latent chain.

Four training modes share one loop:

- ``mixed``: alternate deterministically between text-derived and
  speech-derived latents (text on even step indices, speech on odd).
- ``ttl``: text-derived latents only.
- ``stl``: speech-derived latents only.
- ``stl-d``: speech features resampled to landmark rate, fed directly to the
  decoder, bypassing the latent chain entirely.

Text-derived latents are sampled from the text prior expanded by alignment
durations converted to landmark rate. Speech-derived latents are posterior
samples pushed through the flow and resampled. The frozen chain's per-
utterance quantities (posterior stats, expanded prior, targets, conditioning)
are precomputed once, so each step only draws noise, runs the flow where
needed, and updates the decoder on a masked MSE over padded batches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .align import get_aligner, loglik_lattice
from .landmark import DecoderConfig, LandmarkDecoder, LandmarkSystem, build_decoder_model
from .timing import durations_to_land, resample_array_linear, resample_linear
from .types import (
    FLOW_SPACE,
    LAND_RATE,
    MODE_AS,
    SPEC_RATE,
    Z_SPACE,
    Z_U_DIM,
    ConditioningBundle,
    LatentSequence,
    TrainingDivergedError,
)
from .tts import TtsSystem, expand

TEXT = "text"
SPEECH = "speech"
MODE_MIXED = "mixed"
MODE_TTL = "ttl"
MODE_STL = "stl"
MODE_STL_D = "stl-d"
TRAIN_MODES = (MODE_MIXED, MODE_TTL, MODE_STL, MODE_STL_D)


def modality_for_step(step_index: int, mode: str) -> str:
    """Which latent source feeds the decoder at a given step."""
    if mode == MODE_MIXED:
        return TEXT if step_index % 2 == 0 else SPEECH
    if mode == MODE_TTL:
        return TEXT
    if mode in (MODE_STL, MODE_STL_D):
        return SPEECH
    raise ValueError(f"unknown training mode {mode!r}")


@dataclass
class LandmarkTrainConfig:
    steps: int = 400
    batch_size: int = 48
    learning_rate: float = 2e-4
    adam_betas: tuple[float, float] = (0.8, 0.99)
    weight_decay: float = 0.01
    lr_decay_per_epoch: float = 0.999875
    grad_clip: float = 5.0
    mode: str = MODE_MIXED
    text_temperature: float = 1.0
    seed: int = 0
    align_backend: str = "auto"

    def __post_init__(self) -> None:
        if self.mode not in TRAIN_MODES:
            raise ValueError(f"unknown training mode {self.mode!r}, expected one of {TRAIN_MODES}")


@dataclass
class DecoderExample:
    """Frozen-chain quantities for one paired utterance."""

    utt_id: str
    target: np.ndarray  # [T_land, N, 2]
    num_land_frames: int
    gvec: np.ndarray  # decoder global conditioning
    bundle: ConditioningBundle  # latent-chain conditioning (flow needs it)
    mu_land: np.ndarray  # [T_land, D] expanded prior mean at landmark rate
    sigma_land: np.ndarray
    mu_q: np.ndarray  # [T_spec, D] posterior stats
    sigma_q: np.ndarray
    spec_land: np.ndarray  # [T_land, F] resampled features for direct mode


def build_decoder_examples(
    manifest, tts: TtsSystem, align_backend: str = "auto"
) -> list[DecoderExample]:
    """Precompute per-utterance inputs for every paired train utterance.

    Conditioning labels come from the chain's own mode: speaker in standard
    mode, emotion in AS mode. The utterance latent is the posterior mean.
    Alignment runs once per utterance on noise-free latents; its durations,
    converted to landmark rate, decide how the text prior is expanded.
    """
    aligner = get_aligner(align_backend)
    ratio = manifest.ratio
    examples = []
    for record in manifest.select(split="train", paired_only=True):
        x = manifest.spectral(record)
        target = manifest.landmarks(record)
        label = record.speaker_id if tts.config.mode != MODE_AS else record.emotion_id
        z_u = tts.utterance_encode(x).mean
        bundle = tts.bundle(label, z_u=z_u)

        z_mean, mu_q, sigma_q = tts.posterior_encode(x, bundle, noise_scale=0.0)
        fz_mean, _ = tts.flow_forward(z_mean, bundle)
        encoding = tts.text_encode(np.asarray(record.phonemes), bundle)
        d_spec = aligner(loglik_lattice(fz_mean, encoding.prior)).durations
        d_land = durations_to_land(d_spec, ratio)
        mu_land, sigma_land = expand(encoding.prior, d_land)

        num_land = int(np.sum(d_land))
        if num_land != target.num_frames:
            raise ValueError(
                f"{record.utt_id}: landmark target has {target.num_frames} frames "
                f"but duration conversion gives {num_land}"
            )
        examples.append(
            DecoderExample(
                utt_id=record.utt_id,
                target=target.y,
                num_land_frames=num_land,
                gvec=bundle.global_vector(),
                bundle=bundle,
                mu_land=mu_land,
                sigma_land=sigma_land,
                mu_q=mu_q,
                sigma_q=sigma_q,
                spec_land=resample_array_linear(x.values, num_land),
            )
        )
    if not examples:
        raise ValueError("no paired utterances in the train split")
    return examples


def make_training_latents(
    tts: TtsSystem,
    modality: str,
    phonemes: np.ndarray,
    x,
    bundle: ConditioningBundle,
    ratio: float,
    rng: np.random.Generator | None = None,
    text_temperature: float = 1.0,
    align_backend: str = "auto",
) -> LatentSequence:
    """Landmark-rate flow-space latents for one utterance, by either path.

    Text path: align the noise-free posterior latents to the text prior,
    convert the durations to landmark rate, expand the prior, and sample
    (posterior-mean deterministic when ``rng`` is None). Speech path: sample
    the posterior (mean when ``rng`` is None), push through the flow, and
    resample. Both paths land on exactly round(ratio * T_spec) frames.
    """
    if modality not in (TEXT, SPEECH):
        raise ValueError(f"modality must be {TEXT!r} or {SPEECH!r}, got {modality!r}")
    if modality == SPEECH:
        noise = 1.0 if rng is not None else 0.0
        z, _, _ = tts.posterior_encode(x, bundle, noise_scale=noise, rng=rng)
        fz, _ = tts.flow_forward(z, bundle)
        target = max(1, int(np.rint(ratio * x.num_frames)))
        return resample_linear(fz, target)

    z_mean, _, _ = tts.posterior_encode(x, bundle, noise_scale=0.0)
    fz_mean, _ = tts.flow_forward(z_mean, bundle)
    encoding = tts.text_encode(np.asarray(phonemes), bundle)
    aligner = get_aligner(align_backend)
    d_spec = aligner(loglik_lattice(fz_mean, encoding.prior)).durations
    d_land = durations_to_land(d_spec, ratio)
    mu_land, sigma_land = expand(encoding.prior, d_land)
    if rng is None:
        values = mu_land
    else:
        values = mu_land + sigma_land * (text_temperature * rng.standard_normal(mu_land.shape))
    return LatentSequence(values=values, rate_tag=LAND_RATE, space_tag=FLOW_SPACE)


class LandmarkTrainer:
    def __init__(
        self,
        model: LandmarkDecoder,
        examples: list[DecoderExample],
        tts: TtsSystem,
        config: LandmarkTrainConfig,
    ):
        self.model = model
        self.examples = examples
        self.tts = tts
        self.config = config
        self.model.train()
        self.optimizer = torch.optim.AdamW(
            model.parameters(),
            lr=config.learning_rate,
            betas=config.adam_betas,
            weight_decay=config.weight_decay,
        )
        self.scheduler = torch.optim.lr_scheduler.ExponentialLR(
            self.optimizer, gamma=config.lr_decay_per_epoch
        )
        self.rng = np.random.default_rng([config.seed, 0x1A9D])
        self.step_index = 0
        self.steps_per_epoch = max(1, math.ceil(len(examples) / config.batch_size))

    def _example_input(self, ex: DecoderExample, modality: str) -> np.ndarray:
        if modality == TEXT:
            eps = self.rng.standard_normal(ex.mu_land.shape)
            return ex.mu_land + ex.sigma_land * (self.config.text_temperature * eps)
        if self.config.mode == MODE_STL_D:
            return ex.spec_land
        eps = self.rng.standard_normal(ex.mu_q.shape)
        z = LatentSequence(
            values=ex.mu_q + ex.sigma_q * eps, rate_tag=SPEC_RATE, space_tag=Z_SPACE
        )
        fz, _ = self.tts.flow_forward(z, ex.bundle)
        return resample_array_linear(fz.values, ex.num_land_frames)

    def step(self) -> float:
        modality = modality_for_step(self.step_index, self.config.mode)
        size = min(self.config.batch_size, len(self.examples))
        picks = self.rng.choice(len(self.examples), size=size, replace=False)
        batch = [self.examples[i] for i in picks]

        dtype = next(self.model.parameters()).dtype
        in_dim = self.model.config.in_dim
        out_dim = 2 * self.model.config.num_points
        t_max = max(ex.num_land_frames for ex in batch)
        xs = torch.zeros(size, in_dim, t_max, dtype=dtype)
        ys = torch.zeros(size, out_dim, t_max, dtype=dtype)
        gs = torch.zeros(size, self.model.config.global_dim, dtype=dtype)
        mask = torch.zeros(size, 1, t_max, dtype=dtype)
        for i, ex in enumerate(batch):
            t = ex.num_land_frames
            arr = self._example_input(ex, modality)
            xs[i, :, :t] = torch.as_tensor(arr.T, dtype=dtype)
            ys[i, :, :t] = torch.as_tensor(ex.target.reshape(t, out_dim).T, dtype=dtype)
            gs[i] = torch.as_tensor(ex.gvec, dtype=dtype)
            mask[i, 0, :t] = 1.0

        pred = self.model(xs, gs)
        loss = (((pred - ys) ** 2) * mask).sum() / (mask.sum() * out_dim)
        if not torch.isfinite(loss):
            raise TrainingDivergedError(f"non-finite decoder loss at step {self.step_index}")
        self.optimizer.zero_grad()
        loss.backward()
        if self.config.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.config.grad_clip)
        self.optimizer.step()
        self.step_index += 1
        if self.step_index % self.steps_per_epoch == 0:
            self.scheduler.step()
        return float(loss.detach())


def landmark_train_step(trainer: LandmarkTrainer) -> float:
    return trainer.step()


@dataclass
class LandmarkTrainResult:
    system: LandmarkSystem
    history: list[float] = field(default_factory=list)
    mode: str = MODE_MIXED


def train_landmark_decoder(
    manifest,
    tts: TtsSystem,
    train_config: LandmarkTrainConfig,
    decoder_config: DecoderConfig | None = None,
    log_every: int = 0,
    progress=None,
) -> LandmarkTrainResult:
    """Train a decoder against a frozen chain; returns an inference-ready system."""
    if decoder_config is None:
        in_dim = (
            manifest.feat_dim if train_config.mode == MODE_STL_D else tts.config.latent_dim
        )
        global_dim = (
            tts.config.num_cond_labels if tts.config.mode == MODE_AS else Z_U_DIM
        )
        decoder_config = DecoderConfig(
            in_dim=in_dim, num_points=manifest.num_keypoints, global_dim=global_dim
        )
    expected_in = manifest.feat_dim if train_config.mode == MODE_STL_D else tts.config.latent_dim
    if decoder_config.in_dim != expected_in:
        raise ValueError(
            f"decoder in_dim {decoder_config.in_dim} does not match "
            f"{train_config.mode} inputs of dimension {expected_in}"
        )
    examples = build_decoder_examples(manifest, tts, train_config.align_backend)
    model = build_decoder_model(decoder_config, seed=train_config.seed)
    trainer = LandmarkTrainer(model, examples, tts, train_config)
    history = []
    for i in range(train_config.steps):
        history.append(trainer.step())
        if log_every and (i + 1) % log_every == 0 and progress is not None:
            progress(i + 1, history[-1])
    model.eval()
    system = LandmarkSystem(model, fps=manifest.land_fps, lip_indices=manifest.lip_indices)
    return LandmarkTrainResult(system=system, history=history, mode=train_config.mode)
