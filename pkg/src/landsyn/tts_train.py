"""Training loop for the latent chain.

One step samples a batch, runs each utterance through posterior, flow,
monotonic alignment, feature decoder, and duration predictor, and applies a
single AdamW update on the weighted sum of four terms: L1 reconstruction, the
frame-level KL between the flow-mapped posterior and the aligned text prior
(including the flow log-determinant), the analytic utterance-level KL against
a standard normal, and the log-domain duration regression. Alignment is
recomputed every step from detached latents, so no gradient flows through it.

All stochasticity (batch order, sampling noise) is drawn from one numpy
generator, which makes runs bit-reproducible for a given seed and keeps the
noise independent of torch's global RNG state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .align import get_aligner, loglik_lattice
from .types import (
    FLOW_SPACE,
    MODE_AS,
    MODE_STANDARD,
    SPEC_RATE,
    Z_U_DIM,
    LatentSequence,
    LossBreakdown,
    PriorStats,
    TrainingDivergedError,
    one_hot,
)
from .tts import TtsConfig, TtsModel, build_tts_model

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class TtsTrainConfig:
    steps: int = 1500
    batch_size: int = 8
    learning_rate: float = 2e-4
    adam_betas: tuple[float, float] = (0.8, 0.99)
    weight_decay: float = 0.01
    lr_decay_per_epoch: float = 0.999875
    grad_clip: float = 5.0
    recon_weight: float = 5.0
    frame_kl_weight: float = 1.0
    utterance_kl_weight: float = 0.2
    duration_weight: float = 1.0
    seed: int = 0
    align_backend: str = "auto"


@dataclass
class TtsExample:
    """One training utterance: phoneme ids, spectral frames, conditioning label."""

    phonemes: np.ndarray
    spectral: np.ndarray
    label: int


@dataclass
class PreparedExample:
    """Tensors plus frozen noise for one utterance.

    Freezing the noise (and optionally the alignment) here is what makes the
    loss a deterministic function of the parameters, which the finite
    difference gradient tests rely on.
    """

    phonemes: torch.Tensor  # [S] int64
    spectral: torch.Tensor  # [1, F, T]
    g: torch.Tensor  # [num_labels]
    eps_frame: torch.Tensor  # [1, D, T]
    eps_utt: torch.Tensor  # [1, Z_U_DIM]
    durations: np.ndarray | None = None  # frozen alignment when set


def prepare_example(
    example: TtsExample,
    model: TtsModel,
    rng: np.random.Generator,
    durations: np.ndarray | None = None,
) -> PreparedExample:
    config = model.config
    dtype = next(model.parameters()).dtype
    num_frames = example.spectral.shape[0]
    return PreparedExample(
        phonemes=torch.as_tensor(np.asarray(example.phonemes, dtype=np.int64)),
        spectral=torch.as_tensor(example.spectral.T, dtype=dtype).unsqueeze(0),
        g=torch.as_tensor(one_hot(example.label, config.num_cond_labels), dtype=dtype),
        eps_frame=torch.as_tensor(
            rng.standard_normal((1, config.latent_dim, num_frames)), dtype=dtype
        ),
        eps_utt=torch.as_tensor(rng.standard_normal((1, Z_U_DIM)), dtype=dtype),
        durations=durations,
    )


def example_losses(
    model: TtsModel, prep: PreparedExample, align_backend: str = "auto"
) -> tuple[dict[str, torch.Tensor], np.ndarray]:
    """Loss terms for one utterance; returns the alignment actually used."""
    x = prep.spectral
    num_frames = x.shape[2]

    mu_u, logs_u = model.utterance_encoder(x)
    z_u = mu_u + torch.exp(logs_u) * prep.eps_utt
    cond = model.cond_vector(prep.g, z_u)

    mu_q, logs_q = model.posterior(x, cond)
    z = mu_q + torch.exp(logs_q) * prep.eps_frame
    fz, logdet = model.flow(z, cond)
    h, mu_p, logs_p = model.text_encoder(prep.phonemes, cond)

    durations = prep.durations
    if durations is None:
        lattice_fz = LatentSequence(
            values=fz.detach().double().numpy()[0].T, rate_tag=SPEC_RATE, space_tag=FLOW_SPACE
        )
        prior = PriorStats(
            mu=mu_p.detach().double().numpy()[0].T,
            sigma=np.exp(logs_p.detach().double().numpy()[0].T),
        )
        aligner = get_aligner(align_backend)
        durations = aligner(loglik_lattice(lattice_fz, prior)).durations

    dur_t = torch.as_tensor(durations, dtype=torch.int64)
    mu_pe = torch.repeat_interleave(mu_p, dur_t, dim=2)
    logs_pe = torch.repeat_interleave(logs_p, dur_t, dim=2)

    denom = float(num_frames * model.config.latent_dim)
    kl_elem = (
        logs_pe - logs_q - 0.5 + 0.5 * (fz - mu_pe) ** 2 * torch.exp(-2.0 * logs_pe)
    )
    kl_frame = kl_elem.sum() / denom - logdet / denom

    sigma_u2 = torch.exp(2.0 * logs_u)
    kl_utt = 0.5 * (sigma_u2 + mu_u**2 - 1.0 - 2.0 * logs_u).mean()

    x_hat = model.feature_decoder(z, cond)
    recon = torch.abs(x_hat - x).mean()

    logw = model.duration_predictor(h.detach(), cond)
    target = torch.log(dur_t.to(logw.dtype)).unsqueeze(0)
    duration = ((logw - target) ** 2).mean()

    return (
        {"reconstruction": recon, "kl_frame": kl_frame, "kl_utterance": kl_utt, "duration": duration},
        np.asarray(durations),
    )


def batch_losses(
    model: TtsModel,
    preps: list[PreparedExample],
    config: TtsTrainConfig,
) -> tuple[torch.Tensor, LossBreakdown]:
    terms = {"reconstruction": 0.0, "kl_frame": 0.0, "kl_utterance": 0.0, "duration": 0.0}
    acc: dict[str, torch.Tensor] = {}
    for prep in preps:
        losses, _ = example_losses(model, prep, config.align_backend)
        for name, value in losses.items():
            acc[name] = acc.get(name, 0.0) + value
    scale = 1.0 / len(preps)
    total = (
        config.recon_weight * acc["reconstruction"]
        + config.frame_kl_weight * acc["kl_frame"]
        + config.utterance_kl_weight * acc["kl_utterance"]
        + config.duration_weight * acc["duration"]
    ) * scale
    for name in terms:
        terms[name] = float(acc[name].detach()) * scale
    breakdown = LossBreakdown(
        reconstruction=terms["reconstruction"],
        kl_frame=terms["kl_frame"],
        kl_utterance=terms["kl_utterance"],
        duration=terms["duration"],
        total=float(total.detach()),
    )
    return total, breakdown


class TtsTrainer:
    """Stateful trainer; ``step()`` runs one optimizer update and reports losses."""

    def __init__(self, model: TtsModel, examples: list[TtsExample], config: TtsTrainConfig):
        if not examples:
            raise ValueError("no training examples")
        self.model = model
        self.examples = examples
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
        self.rng = np.random.default_rng([config.seed, 0x7715])
        self.step_index = 0
        self._queue: list[int] = []

    def _next_batch(self) -> list[TtsExample]:
        size = min(self.config.batch_size, len(self.examples))
        batch = []
        epoch_ended = False
        for _ in range(size):
            if not self._queue:
                self._queue = list(self.rng.permutation(len(self.examples)))
                if self.step_index > 0:
                    epoch_ended = True
            batch.append(self.examples[self._queue.pop()])
        if epoch_ended:
            self.scheduler.step()
        return batch

    def step(self) -> LossBreakdown:
        batch = self._next_batch()
        preps = [prepare_example(ex, self.model, self.rng) for ex in batch]
        total, breakdown = batch_losses(self.model, preps, self.config)
        if not math.isfinite(breakdown.total):
            raise TrainingDivergedError(
                f"non-finite loss at step {self.step_index}: {breakdown.as_dict()}"
            )
        self.optimizer.zero_grad()
        total.backward()
        if self.config.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.config.grad_clip)
        self.optimizer.step()
        self.step_index += 1
        return breakdown


def tts_train_step(trainer: TtsTrainer) -> LossBreakdown:
    return trainer.step()


def manifest_examples(manifest, mode: str = MODE_STANDARD) -> tuple[list[TtsExample], int]:
    """Training examples from the corpus train split.

    Returns the examples and the number of distinct conditioning labels:
    seen speakers in standard mode, emotions in AS mode. Unseen-speaker
    records never appear in the train split, so they are excluded by
    construction.
    """
    records = manifest.select(split="train")
    num_labels = (
        manifest.num_speakers - manifest.num_unseen_speakers
        if mode == MODE_STANDARD
        else manifest.num_emotions
    )
    examples = []
    for record in records:
        label = record.speaker_id if mode == MODE_STANDARD else record.emotion_id
        examples.append(
            TtsExample(
                phonemes=np.asarray(record.phonemes, dtype=np.int64),
                spectral=manifest.spectral(record).values,
                label=label,
            )
        )
    return examples, num_labels


@dataclass
class TtsTrainResult:
    model: TtsModel
    history: list[LossBreakdown] = field(default_factory=list)


def train_tts(
    manifest,
    train_config: TtsTrainConfig,
    model_config: TtsConfig | None = None,
    mode: str = MODE_STANDARD,
    log_every: int = 0,
    progress=None,
) -> TtsTrainResult:
    """Train a fresh latent-chain model on the manifest's train split."""
    if mode not in (MODE_STANDARD, MODE_AS):
        raise ValueError(f"unknown training mode {mode!r}")
    examples, num_labels = manifest_examples(manifest, mode)
    if model_config is None:
        model_config = TtsConfig(
            num_phonemes=manifest.inventory.num_phonemes,
            num_cond_labels=num_labels,
            feat_dim=manifest.feat_dim,
            mode=mode,
        )
    if model_config.num_cond_labels != num_labels:
        raise ValueError(
            f"model expects {model_config.num_cond_labels} labels, corpus provides {num_labels}"
        )
    model = build_tts_model(model_config, seed=train_config.seed)
    trainer = TtsTrainer(model, examples, train_config)
    history = []
    for i in range(train_config.steps):
        breakdown = trainer.step()
        history.append(breakdown)
        if log_every and (i + 1) % log_every == 0 and progress is not None:
            progress(i + 1, breakdown)
    model.eval()
    return TtsTrainResult(model=model, history=history)
