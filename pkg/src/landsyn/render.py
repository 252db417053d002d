"""Render landmark sequences to PNG frames for eyeballing results."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .types import LandmarkSequence


def render_frames(
    seq: LandmarkSequence,
    out_dir: str | Path,
    stride: int = 1,
    limit: int | None = None,
    prefix: str = "frame",
) -> list[Path]:
    """Write one PNG per (strided) frame; returns the written paths."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lips = list(seq.lip_indices)
    written = []
    indices = range(0, seq.num_frames, stride)
    for count, t in enumerate(indices):
        if limit is not None and count >= limit:
            break
        frame = seq.y[t]
        fig, ax = plt.subplots(figsize=(3, 3), dpi=100)
        ax.scatter(frame[:, 0], frame[:, 1], s=12, c="tab:blue")
        loop = frame[lips + lips[:1]]
        ax.plot(loop[:, 0], loop[:, 1], c="tab:red", lw=1.2)
        ax.set_xlim(-1.2, 1.2)
        ax.set_ylim(-1.2, 1.2)
        ax.set_aspect("equal")
        ax.axis("off")
        path = out_dir / f"{prefix}_{t:05d}.png"
        fig.savefig(path, bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    return written


def render_overview(seq: LandmarkSequence, out_path: str | Path, cols: int = 4) -> Path:
    """A single grid image sampling frames evenly across the sequence."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    num = min(cols * 2, seq.num_frames)
    picks = np.linspace(0, seq.num_frames - 1, num).round().astype(int)
    rows = int(np.ceil(num / cols))
    lips = list(seq.lip_indices)
    fig, axes = plt.subplots(rows, cols, figsize=(2.2 * cols, 2.2 * rows), dpi=100)
    axes = np.atleast_1d(axes).ravel()
    for ax in axes:
        ax.axis("off")
    for ax, t in zip(axes, picks):
        frame = seq.y[t]
        ax.scatter(frame[:, 0], frame[:, 1], s=8, c="tab:blue")
        loop = frame[lips + lips[:1]]
        ax.plot(loop[:, 0], loop[:, 1], c="tab:red", lw=1.0)
        ax.set_xlim(-1.2, 1.2)
        ax.set_ylim(-1.2, 1.2)
        ax.set_aspect("equal")
        ax.set_title(f"t={t}", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return out_path
