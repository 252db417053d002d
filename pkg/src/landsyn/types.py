"""Shared data types passed between the corpus, alignment, model, and metric layers.

All boundary types hold numpy arrays; torch tensors never cross module
boundaries. Latent sequences carry explicit rate/space tags so that
rate-sensitive consumers (resampling, decoders) can reject mismatched input
instead of silently mixing frame rates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPEC_RATE = "spec-rate"
LAND_RATE = "landmark-rate"
Z_SPACE = "z-space"
FLOW_SPACE = "flow-space"

Z_U_DIM = 16

MODE_STANDARD = "standard"
MODE_AS = "as"


@dataclass
class SpectralFrames:
    """Frame-level acoustic feature matrix, shape (T, F)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"spectral frames must be 2-D, got shape {self.values.shape}")

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def feat_dim(self) -> int:
        return self.values.shape[1]


@dataclass
class LatentSequence:
    """Frame-level latents, shape (T, D), tagged with frame rate and latent space."""

    values: np.ndarray
    rate_tag: str
    space_tag: str

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"latent sequence must be 2-D, got shape {self.values.shape}")
        if self.rate_tag not in (SPEC_RATE, LAND_RATE):
            raise ValueError(f"unknown rate tag {self.rate_tag!r}")
        if self.space_tag not in (Z_SPACE, FLOW_SPACE):
            raise ValueError(f"unknown space tag {self.space_tag!r}")

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass
class LandmarkSequence:
    """Keypoint trajectories, shape (T, N, 2), in the normalized [-1, 1] face frame."""

    y: np.ndarray
    fps: float
    lip_indices: tuple[int, ...]

    def __post_init__(self) -> None:
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.y.ndim != 3 or self.y.shape[2] != 2:
            raise ValueError(f"landmarks must have shape (T, N, 2), got {self.y.shape}")
        self.lip_indices = tuple(int(i) for i in self.lip_indices)
        n = self.y.shape[1]
        if any(not 0 <= i < n for i in self.lip_indices):
            raise ValueError(f"lip indices {self.lip_indices} outside [0, {n})")

    @property
    def num_frames(self) -> int:
        return self.y.shape[0]

    @property
    def num_points(self) -> int:
        return self.y.shape[1]


@dataclass
class PriorStats:
    """Token-level Gaussian prior parameters, shapes (S, D); scales strictly positive."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self) -> None:
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.mu.shape != self.sigma.shape or self.mu.ndim != 2:
            raise ValueError(
                f"prior mu/sigma must share a 2-D shape, got {self.mu.shape} / {self.sigma.shape}"
            )
        if not np.all(self.sigma > 0):
            raise ValueError("prior scales must be strictly positive")

    @property
    def num_tokens(self) -> int:
        return self.mu.shape[0]


@dataclass
class TextEncoding:
    """Per-token encoder states plus the projected Gaussian prior."""

    h: np.ndarray
    prior: PriorStats

    def __post_init__(self) -> None:
        self.h = np.asarray(self.h, dtype=np.float64)
        if self.h.shape[0] != self.prior.num_tokens:
            raise ValueError("encoder states and prior disagree on token count")

    @property
    def num_tokens(self) -> int:
        return self.h.shape[0]


@dataclass
class ConditioningBundle:
    """Global conditioning: one-hot label g plus the utterance-level latent.

    In standard mode g identifies the speaker and the utterance latent carries
    emotion; in AS (arbitrary-speaker) mode g identifies the emotion and the
    utterance latent carries speaker identity.
    """

    g: np.ndarray
    z_u: np.ndarray
    mode: str = MODE_STANDARD
    z_u_mean: np.ndarray | None = None
    z_u_scale: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.g = np.asarray(self.g, dtype=np.float64)
        self.z_u = np.asarray(self.z_u, dtype=np.float64)
        if self.g.ndim != 1:
            raise ValueError("g must be a 1-D one-hot vector")
        ones = np.flatnonzero(self.g == 1.0)
        if len(ones) != 1 or not np.all((self.g == 0.0) | (self.g == 1.0)):
            raise ValueError("g must contain exactly one entry equal to 1 and zeros elsewhere")
        if self.z_u.shape != (Z_U_DIM,):
            raise ValueError(f"utterance latent must have dimension {Z_U_DIM}, got {self.z_u.shape}")
        if self.mode not in (MODE_STANDARD, MODE_AS):
            raise ValueError(f"unknown conditioning mode {self.mode!r}")

    @property
    def label(self) -> int:
        return int(np.argmax(self.g))

    def global_vector(self) -> np.ndarray:
        """The vector fed to the landmark decoder as global conditioning."""
        return self.g if self.mode == MODE_AS else self.z_u


def one_hot(index: int, size: int) -> np.ndarray:
    if not 0 <= index < size:
        raise ValueError(f"label {index} outside [0, {size})")
    g = np.zeros(size, dtype=np.float64)
    g[index] = 1.0
    return g


@dataclass
class LossBreakdown:
    """Per-term training losses for one optimizer step."""

    reconstruction: float
    kl_frame: float
    kl_utterance: float
    duration: float
    total: float = field(default=0.0)

    def as_dict(self) -> dict[str, float]:
        return {
            "reconstruction": self.reconstruction,
            "kl_frame": self.kl_frame,
            "kl_utterance": self.kl_utterance,
            "duration": self.duration,
            "total": self.total,
        }


class TrainingDivergedError(RuntimeError):
    """Raised when a training step produces a non-finite loss."""


class UnseenSpeakerError(ValueError):
    """Raised when a conditioning label falls outside the trained label range."""
