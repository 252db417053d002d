"""Gated convolutional landmark decoder.

A stack of non-causal dilated convolutions with gated activations, residual
and skip connections, and a global conditioning vector added to every layer.
1x1 convolutions bracket the stack. The receptive field is finite and small,
so each output frame depends only on a bounded window of input frames; a test
perturbs single frames to pin that property down.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .types import (
    FLOW_SPACE,
    LAND_RATE,
    ConditioningBundle,
    LandmarkSequence,
    LatentSequence,
)


@dataclass
class DecoderConfig:
    """Defaults follow the published full-scale recipe; toy runs shrink them."""

    in_dim: int = 8
    num_points: int = 20
    global_dim: int = 16
    num_layers: int = 16
    channels: int = 192
    kernel_size: int = 5
    dilation: int = 1

    def __post_init__(self) -> None:
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel size must be odd for same-length output")
        for name in ("in_dim", "num_points", "global_dim", "num_layers", "channels", "dilation"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def receptive_half_width(self) -> int:
        """Frames on each side of t that can influence output frame t."""
        return self.num_layers * self.dilation * (self.kernel_size - 1) // 2


class GatedLayer(nn.Module):
    def __init__(self, config: DecoderConfig):
        super().__init__()
        c = config.channels
        pad = config.dilation * (config.kernel_size - 1) // 2
        self.conv = nn.Conv1d(c, 2 * c, config.kernel_size, padding=pad, dilation=config.dilation)
        self.cond = nn.Linear(config.global_dim, 2 * c)
        self.res = nn.Conv1d(c, c, 1)
        self.skip = nn.Conv1d(c, c, 1)

    def forward(self, x, gvec):
        a = self.conv(x) + self.cond(gvec).unsqueeze(-1)
        t, s = a.chunk(2, dim=1)
        u = torch.tanh(t) * torch.sigmoid(s)
        return x + self.res(u), self.skip(u)


class LandmarkDecoder(nn.Module):
    def __init__(self, config: DecoderConfig):
        super().__init__()
        self.config = config
        self.pre = nn.Conv1d(config.in_dim, config.channels, 1)
        self.layers = nn.ModuleList(GatedLayer(config) for _ in range(config.num_layers))
        self.post1 = nn.Conv1d(config.channels, config.channels, 1)
        self.post2 = nn.Conv1d(config.channels, 2 * config.num_points, 1)

    def forward(self, x, gvec):
        """x: [B, in_dim, T], gvec: [B, global_dim] -> [B, 2 * num_points, T]."""
        h = self.pre(x)
        skip_sum = torch.zeros_like(h)
        for layer in self.layers:
            h, s = layer(h, gvec)
            skip_sum = skip_sum + s
        return self.post2(torch.relu(self.post1(torch.relu(skip_sum))))


def build_decoder_model(config: DecoderConfig, seed: int = 0) -> LandmarkDecoder:
    gen_state = torch.get_rng_state()
    torch.manual_seed(seed)
    try:
        model = LandmarkDecoder(config)
    finally:
        torch.set_rng_state(gen_state)
    return model


class LandmarkSystem:
    """Inference wrapper pairing a trained decoder with its output geometry."""

    def __init__(self, model: LandmarkDecoder, fps: float, lip_indices: tuple[int, ...]):
        self.model = model
        self.model.eval()
        self.config = model.config
        self.fps = float(fps)
        self.lip_indices = tuple(int(i) for i in lip_indices)

    def _gvec_tensor(self, gvec: np.ndarray) -> torch.Tensor:
        gvec = np.asarray(gvec, dtype=np.float64)
        if gvec.shape != (self.config.global_dim,):
            raise ValueError(
                f"global conditioning must have dimension {self.config.global_dim}, "
                f"got {gvec.shape}"
            )
        dtype = next(self.model.parameters()).dtype
        return torch.as_tensor(gvec, dtype=dtype).unsqueeze(0)

    def decode_array(self, values: np.ndarray, gvec: np.ndarray) -> np.ndarray:
        """Low-level decode: [T, in_dim] array to [T, num_points, 2] keypoints."""
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != self.config.in_dim:
            raise ValueError(
                f"decoder expects [T, {self.config.in_dim}] input, got {values.shape}"
            )
        if values.shape[0] < 1:
            raise ValueError("need at least one input frame")
        dtype = next(self.model.parameters()).dtype
        xt = torch.as_tensor(values.T, dtype=dtype).unsqueeze(0)
        with torch.no_grad():
            out = self.model(xt, self._gvec_tensor(gvec))
        flat = out[0].T.double().numpy()  # [T, 2N]
        return flat.reshape(values.shape[0], self.config.num_points, 2)

    def decode_landmarks(
        self, latents: LatentSequence, bundle: ConditioningBundle
    ) -> LandmarkSequence:
        """Decode landmark-rate flow-space latents under the bundle's global vector."""
        if latents.rate_tag != LAND_RATE:
            raise ValueError(f"decoder input must be landmark-rate, got {latents.rate_tag}")
        if latents.space_tag != FLOW_SPACE:
            raise ValueError(f"decoder input must be flow-space, got {latents.space_tag}")
        y = self.decode_array(latents.values, bundle.global_vector())
        return LandmarkSequence(y=y, fps=self.fps, lip_indices=self.lip_indices)
