"""Latent text/speech chain: text prior, posterior encoder, invertible flow,
utterance-level VAE, duration predictor, and a spectral feature decoder.

The torch modules live behind :class:`TtsSystem`, whose methods take and
return the numpy boundary types. Conditioning follows one rule everywhere:
the one-hot label g and the 16-dim utterance latent are fused into a single
conditioning vector that feeds the prior projection, posterior, flow, feature
decoder, and duration predictor; the text encoder body itself is
unconditioned so the token states h stay label-neutral.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .types import (
    FLOW_SPACE,
    MODE_AS,
    MODE_STANDARD,
    SPEC_RATE,
    Z_SPACE,
    Z_U_DIM,
    ConditioningBundle,
    LatentSequence,
    PriorStats,
    SpectralFrames,
    TextEncoding,
    UnseenSpeakerError,
    one_hot,
)

LOGS_CLAMP = 7.0  # keeps exp(logs) comfortably inside float range
FLOW_LOGS_CAP = 2.0  # coupling log-scales bounded to [-cap, cap] via tanh


@dataclass
class TtsConfig:
    num_phonemes: int
    num_cond_labels: int
    feat_dim: int = 16
    latent_dim: int = 8
    hidden_dim: int = 64
    cond_embed_dim: int = 16
    flow_steps: int = 4
    flow_hidden_dim: int = 48
    kernel_size: int = 5
    mode: str = MODE_STANDARD

    def __post_init__(self) -> None:
        if self.latent_dim % 2 != 0:
            raise ValueError("latent dimension must be even for the coupling split")
        if self.mode not in (MODE_STANDARD, MODE_AS):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def cond_dim(self) -> int:
        return self.cond_embed_dim + Z_U_DIM


class ConvStack(nn.Module):
    """Residual stack of same-padding Conv1d + ReLU blocks."""

    def __init__(self, channels: int, kernel_size: int, num_layers: int):
        super().__init__()
        pad = kernel_size // 2
        self.convs = nn.ModuleList(
            nn.Conv1d(channels, channels, kernel_size, padding=pad) for _ in range(num_layers)
        )

    def forward(self, x):
        for conv in self.convs:
            x = x + torch.relu(conv(x))
        return x


class TextEncoder(nn.Module):
    """Phoneme ids to per-token states h; the prior projection is conditioned."""

    def __init__(self, config: TtsConfig):
        super().__init__()
        h = config.hidden_dim
        self.embedding = nn.Embedding(config.num_phonemes, h)
        self.stack = ConvStack(h, config.kernel_size, 2)
        self.cond_proj = nn.Linear(config.cond_dim, h)
        self.prior_proj = nn.Conv1d(h, 2 * config.latent_dim, 1)

    def forward(self, phonemes, cond):
        x = self.embedding(phonemes).transpose(0, 1).unsqueeze(0)  # [1, H, S]
        h = self.stack(x)
        stats = self.prior_proj(h + self.cond_proj(cond).unsqueeze(-1))
        mu, logs = stats.chunk(2, dim=1)
        return h, mu, torch.clamp(logs, -LOGS_CLAMP, LOGS_CLAMP)


class FrameEncoder(nn.Module):
    """Shared shape for the posterior encoder and the feature decoder."""

    def __init__(self, in_dim: int, out_dim: int, config: TtsConfig, num_layers: int = 3):
        super().__init__()
        h = config.hidden_dim
        self.pre = nn.Conv1d(in_dim, h, 1)
        self.cond_proj = nn.Linear(config.cond_dim, h)
        self.stack = ConvStack(h, config.kernel_size, num_layers)
        self.out = nn.Conv1d(h, out_dim, 1)

    def forward(self, x, cond):
        h = self.pre(x) + self.cond_proj(cond).unsqueeze(-1)
        return self.out(self.stack(h))


class AffineCoupling(nn.Module):
    """Conditioned affine coupling; zero-initialized projection makes it identity."""

    def __init__(self, config: TtsConfig):
        super().__init__()
        self.half = config.latent_dim // 2
        h = config.flow_hidden_dim
        pad = config.kernel_size // 2
        self.pre = nn.Conv1d(self.half, h, 1)
        self.cond_proj = nn.Linear(config.cond_dim, h)
        self.mid = nn.Conv1d(h, h, config.kernel_size, padding=pad)
        self.out = nn.Conv1d(h, 2 * self.half, 1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def _params(self, x0, cond):
        h = torch.relu(self.pre(x0) + self.cond_proj(cond).unsqueeze(-1))
        h = torch.relu(self.mid(h))
        raw_logs, shift = self.out(h).chunk(2, dim=1)
        return FLOW_LOGS_CAP * torch.tanh(raw_logs / FLOW_LOGS_CAP), shift

    def forward(self, x, cond):
        x0, x1 = x[:, : self.half], x[:, self.half :]
        logs, shift = self._params(x0, cond)
        y1 = x1 * torch.exp(logs) + shift
        return torch.cat([x0, y1], dim=1), logs.sum()

    def inverse(self, y, cond):
        y0, y1 = y[:, : self.half], y[:, self.half :]
        logs, shift = self._params(y0, cond)
        x1 = (y1 - shift) * torch.exp(-logs)
        return torch.cat([y0, x1], dim=1), -logs.sum()


class Flow(nn.Module):
    """Stack of affine couplings with a feature reversal after every step."""

    def __init__(self, config: TtsConfig):
        super().__init__()
        self.steps = nn.ModuleList(AffineCoupling(config) for _ in range(config.flow_steps))

    def forward(self, z, cond, reverse: bool = False):
        logdet = z.new_zeros(())
        if not reverse:
            for step in self.steps:
                z, ld = step(z, cond)
                z = torch.flip(z, dims=[1])
                logdet = logdet + ld
        else:
            for step in reversed(self.steps):
                z = torch.flip(z, dims=[1])
                z, ld = step.inverse(z, cond)
                logdet = logdet + ld
        return z, logdet


class UtteranceEncoder(nn.Module):
    """Mean-pools frames before projecting to the utterance posterior."""

    def __init__(self, config: TtsConfig):
        super().__init__()
        h = config.hidden_dim
        pad = config.kernel_size // 2
        self.conv1 = nn.Conv1d(config.feat_dim, h, config.kernel_size, padding=pad)
        self.conv2 = nn.Conv1d(h, h, config.kernel_size, padding=pad)
        self.proj = nn.Linear(h, 2 * Z_U_DIM)

    def forward(self, x):
        h = torch.relu(self.conv1(x))
        h = torch.relu(self.conv2(h))
        pooled = h.mean(dim=2)
        mu, logs = self.proj(pooled).chunk(2, dim=1)
        return mu, torch.clamp(logs, -LOGS_CLAMP, LOGS_CLAMP)


class DurationPredictor(nn.Module):
    """Log-domain duration regressor over (detached) token states."""

    def __init__(self, config: TtsConfig):
        super().__init__()
        h = config.hidden_dim
        self.cond_proj = nn.Linear(config.cond_dim, h)
        self.conv1 = nn.Conv1d(h, h, 3, padding=1)
        self.conv2 = nn.Conv1d(h, h, 3, padding=1)
        self.out = nn.Conv1d(h, 1, 1)

    def forward(self, h_tokens, cond):
        h = h_tokens + self.cond_proj(cond).unsqueeze(-1)
        h = torch.relu(self.conv1(h))
        h = torch.relu(self.conv2(h))
        return self.out(h).squeeze(1)  # [1, S] log-durations


class TtsModel(nn.Module):
    def __init__(self, config: TtsConfig):
        super().__init__()
        self.config = config
        self.label_embedding = nn.Embedding(config.num_cond_labels, config.cond_embed_dim)
        self.text_encoder = TextEncoder(config)
        self.posterior_encoder = FrameEncoder(config.feat_dim, 2 * config.latent_dim, config)
        self.flow = Flow(config)
        self.utterance_encoder = UtteranceEncoder(config)
        self.feature_decoder = FrameEncoder(config.latent_dim, config.feat_dim, config)
        self.duration_predictor = DurationPredictor(config)

    def cond_vector(self, g, z_u):
        """Fuse one-hot label and utterance latent into the conditioning vector."""
        emb = g.unsqueeze(0) @ self.label_embedding.weight  # [1, E]
        if z_u.dim() == 1:
            z_u = z_u.unsqueeze(0)
        return torch.cat([emb, z_u], dim=1)

    def posterior(self, x, cond):
        stats = self.posterior_encoder(x, cond)
        mu, logs = stats.chunk(2, dim=1)
        return mu, torch.clamp(logs, -LOGS_CLAMP, LOGS_CLAMP)


def build_tts_model(config: TtsConfig, seed: int = 0) -> TtsModel:
    """Deterministic model construction: parameter init depends only on (config, seed)."""
    gen_state = torch.get_rng_state()
    torch.manual_seed(seed)
    try:
        model = TtsModel(config)
    finally:
        torch.set_rng_state(gen_state)
    return model


# --- numpy-boundary helpers ----------------------------------------------


def expand(prior: PriorStats, durations: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Repeat token-level stats into frame-level arrays; frame count is sum(durations)."""
    durations = np.asarray(durations, dtype=np.int64)
    if len(durations) != prior.num_tokens:
        raise ValueError(
            f"got {len(durations)} durations for {prior.num_tokens} tokens"
        )
    if np.any(durations <= 0):
        raise ValueError("durations must be positive")
    return np.repeat(prior.mu, durations, axis=0), np.repeat(prior.sigma, durations, axis=0)


def gaussian_kl_standard_normal(mu: np.ndarray, sigma: np.ndarray) -> float:
    """Analytic KL( N(mu, diag sigma^2) || N(0, I) ), summed over dimensions."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("scales must be positive")
    return float(0.5 * np.sum(sigma**2 + mu**2 - 1.0 - 2.0 * np.log(sigma)))


@dataclass
class UtterancePosterior:
    mean: np.ndarray
    scale: np.ndarray

    def sample(self, rng: np.random.Generator | None = None) -> np.ndarray:
        if rng is None:
            return self.mean.copy()
        return self.mean + self.scale * rng.standard_normal(self.mean.shape)

    def kl(self) -> float:
        return gaussian_kl_standard_normal(self.mean, self.scale)


class TtsSystem:
    """Frozen-parameter inference surface over :class:`TtsModel`.

    All methods are pure given the parameters and any RNG passed in, so
    concurrent calls are safe.
    """

    def __init__(self, model: TtsModel):
        self.model = model
        self.model.eval()
        self.config = model.config

    @property
    def _dtype(self) -> torch.dtype:
        return next(self.model.parameters()).dtype

    def _tensor(self, arr: np.ndarray) -> torch.Tensor:
        return torch.as_tensor(np.asarray(arr), dtype=self._dtype)

    def bundle(
        self,
        label: int,
        z_u: np.ndarray | None = None,
        z_u_mean: np.ndarray | None = None,
        z_u_scale: np.ndarray | None = None,
    ) -> ConditioningBundle:
        """Build a conditioning bundle, validating the label against the trained range."""
        if not 0 <= label < self.config.num_cond_labels:
            kind = "speaker" if self.config.mode == MODE_STANDARD else "emotion"
            hint = (
                " (for speakers outside the training set, use a model trained in "
                "arbitrary-speaker mode)"
                if self.config.mode == MODE_STANDARD
                else ""
            )
            raise UnseenSpeakerError(
                f"{kind} label {label} outside trained range "
                f"[0, {self.config.num_cond_labels}){hint}"
            )
        if z_u is None:
            z_u = np.zeros(Z_U_DIM)
        return ConditioningBundle(
            g=one_hot(label, self.config.num_cond_labels),
            z_u=z_u,
            mode=self.config.mode,
            z_u_mean=z_u_mean,
            z_u_scale=z_u_scale,
        )

    def _cond(self, bundle: ConditioningBundle) -> torch.Tensor:
        return self.model.cond_vector(self._tensor(bundle.g), self._tensor(bundle.z_u))

    def text_encode(self, phonemes: np.ndarray, bundle: ConditioningBundle) -> TextEncoding:
        phonemes = np.asarray(phonemes, dtype=np.int64)
        if phonemes.ndim != 1 or len(phonemes) == 0:
            raise ValueError("phoneme sequence must be non-empty and 1-D")
        if np.any(phonemes < 0) or np.any(phonemes >= self.config.num_phonemes):
            raise ValueError("phoneme id outside inventory")
        with torch.no_grad():
            h, mu, logs = self.model.text_encoder(torch.as_tensor(phonemes), self._cond(bundle))
        prior = PriorStats(
            mu=mu[0].T.double().numpy(), sigma=torch.exp(logs)[0].T.double().numpy()
        )
        return TextEncoding(h=h[0].T.double().numpy(), prior=prior)

    def posterior_encode(
        self,
        x: SpectralFrames,
        bundle: ConditioningBundle,
        noise_scale: float = 1.0,
        rng: np.random.Generator | None = None,
    ) -> tuple[LatentSequence, np.ndarray, np.ndarray]:
        """Sample frame latents; with noise_scale 0 the sample equals the posterior mean."""
        if x.num_frames < 1:
            raise ValueError("need at least one spectral frame")
        xt = self._tensor(x.values.T).unsqueeze(0)
        with torch.no_grad():
            mu, logs = self.model.posterior(xt, self._cond(bundle))
        mu_np = mu[0].T.double().numpy()
        sigma_np = torch.exp(logs)[0].T.double().numpy()
        if noise_scale == 0.0 or rng is None:
            eps = np.zeros_like(mu_np)
        else:
            eps = rng.standard_normal(mu_np.shape) * noise_scale
        z = mu_np + sigma_np * eps
        return (
            LatentSequence(values=z, rate_tag=SPEC_RATE, space_tag=Z_SPACE),
            mu_np,
            sigma_np,
        )

    def _flow(self, seq: LatentSequence, bundle: ConditioningBundle, reverse: bool):
        want = FLOW_SPACE if reverse else Z_SPACE
        if seq.space_tag != want:
            raise ValueError(
                f"flow {'inverse' if reverse else 'forward'} expects {want} input, "
                f"got {seq.space_tag}"
            )
        zt = self._tensor(seq.values.T).unsqueeze(0)
        with torch.no_grad():
            out, logdet = self.model.flow(zt, self._cond(bundle), reverse=reverse)
        return (
            LatentSequence(
                values=out[0].T.double().numpy(),
                rate_tag=seq.rate_tag,
                space_tag=Z_SPACE if reverse else FLOW_SPACE,
            ),
            float(logdet),
        )

    def flow_forward(self, z: LatentSequence, bundle: ConditioningBundle):
        return self._flow(z, bundle, reverse=False)

    def flow_inverse(self, fz: LatentSequence, bundle: ConditioningBundle):
        return self._flow(fz, bundle, reverse=True)

    def utterance_encode(self, x: SpectralFrames) -> UtterancePosterior:
        if x.num_frames < 1:
            raise ValueError("need at least one spectral frame")
        xt = self._tensor(x.values.T).unsqueeze(0)
        with torch.no_grad():
            mu, logs = self.model.utterance_encoder(xt)
        return UtterancePosterior(
            mean=mu[0].double().numpy(), scale=torch.exp(logs)[0].double().numpy()
        )

    def duration_predict(self, h: np.ndarray, bundle: ConditioningBundle) -> np.ndarray:
        """Positive per-token durations in spectral frames (continuous)."""
        ht = self._tensor(h.T).unsqueeze(0)
        with torch.no_grad():
            logw = self.model.duration_predictor(ht, self._cond(bundle))
        return np.exp(logw[0].double().numpy())

    def feature_decode(self, z: LatentSequence, bundle: ConditioningBundle) -> SpectralFrames:
        if z.rate_tag != SPEC_RATE or z.space_tag != Z_SPACE:
            raise ValueError(
                f"feature decoder expects spec-rate z-space latents, got "
                f"{z.rate_tag}/{z.space_tag}"
            )
        zt = self._tensor(z.values.T).unsqueeze(0)
        with torch.no_grad():
            out = self.model.feature_decoder(zt, self._cond(bundle))
        return SpectralFrames(values=out[0].T.double().numpy())


def integer_durations(durations: np.ndarray) -> np.ndarray:
    """Round predicted durations to integers with a floor of one frame."""
    return np.maximum(np.rint(np.asarray(durations)), 1).astype(np.int64)


def sample_prior_frames(
    mu: np.ndarray,
    sigma: np.ndarray,
    temperature: float,
    rng: np.random.Generator | None,
) -> np.ndarray:
    if rng is None or temperature == 0.0:
        return mu.copy()
    return mu + sigma * (temperature * rng.standard_normal(mu.shape))
