"""Monotonic alignment between flow-space latent frames and token-level priors.

``mas_align`` is the reference dynamic program; ``brute_force_align`` is the
exhaustive oracle used to validate it. Both resolve ties identically (prefer
"stay" during backtrack, which pushes tied frames into later tokens), so their
outputs are comparable bit for bit. An optional native kernel provides the
same contract behind :func:`get_aligner`.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .types import FLOW_SPACE, LatentSequence, PriorStats

# Sentinel standing in for -infinity so the lattice stays in plain floats.
# Valid accumulated scores are bounded by T * max|entry|, many orders of
# magnitude above this.
NEG_INF = -1.0e30

BRUTE_FORCE_MAX_T = 14
BRUTE_FORCE_MAX_S = 8

_LOG_2PI = math.log(2.0 * math.pi)

BACKEND_ENV = "LANDSYN_MAS_BACKEND"


@dataclass
class AlignmentResult:
    """Monotone surjective frame-to-token assignment with its total score."""

    durations: np.ndarray
    path: np.ndarray
    total_log_likelihood: float

    def __post_init__(self) -> None:
        self.durations = np.asarray(self.durations, dtype=np.int64)
        self.path = np.asarray(self.path, dtype=np.int64)
        if np.any(self.durations < 1):
            raise ValueError("every token must receive at least one frame")
        if int(self.durations.sum()) != len(self.path):
            raise ValueError("durations do not sum to the frame count")
        if np.any(np.diff(self.path) < 0) or np.any(np.diff(self.path) > 1):
            raise ValueError("path must be monotone, advancing at most one token per frame")
        if not np.array_equal(np.bincount(self.path, minlength=len(self.durations)), self.durations):
            raise ValueError("path inconsistent with durations")


def loglik_lattice(fz: LatentSequence, prior: PriorStats) -> np.ndarray:
    """Per-(token, frame) diagonal-Gaussian log density, summed over latent dims.

    Returns an (S, T) float64 matrix with entry
    ``sum_d log N(fz[t, d]; mu[s, d], sigma[s, d]^2)``.
    """
    if fz.space_tag != FLOW_SPACE:
        raise ValueError(f"alignment expects flow-space latents, got {fz.space_tag}")
    x = fz.values  # (T, D)
    mu, sigma = prior.mu, prior.sigma  # (S, D)
    if x.shape[1] != mu.shape[1]:
        raise ValueError("latent and prior dimensionality differ")
    _check_sizes(mu.shape[0], x.shape[0])
    diff = (x[None, :, :] - mu[:, None, :]) / sigma[:, None, :]
    const = -0.5 * _LOG_2PI * mu.shape[1] - np.log(sigma).sum(axis=1)
    return const[:, None] - 0.5 * np.sum(diff * diff, axis=2)


def _check_sizes(s: int, t: int) -> None:
    if s < 1:
        raise ValueError("need at least one token")
    if t < s:
        raise ValueError(
            f"{t} frames cannot cover {s} tokens: no surjective monotone alignment exists"
        )


def mas_align(lattice: np.ndarray) -> AlignmentResult:
    """Maximum-likelihood monotone surjective alignment via dynamic programming.

    Recurrence: ``Q[s, t] = max(Q[s, t-1], Q[s-1, t-1]) + L[s, t]``. During
    backtrack, ties prefer the "stay" predecessor ``Q[s, t-1]``.
    """
    lattice = np.asarray(lattice, dtype=np.float64)
    s_count, t_count = lattice.shape
    _check_sizes(s_count, t_count)

    q = np.full((s_count, t_count), NEG_INF)
    q[0, 0] = lattice[0, 0]
    for t in range(1, t_count):
        prev = q[:, t - 1]
        shifted = np.concatenate(([NEG_INF], prev[:-1]))
        q[:, t] = np.maximum(prev, shifted) + lattice[:, t]

    path = np.empty(t_count, dtype=np.int64)
    s = s_count - 1
    path[t_count - 1] = s
    for t in range(t_count - 1, 0, -1):
        if s > 0 and q[s - 1, t - 1] > q[s, t - 1]:
            s -= 1
        path[t - 1] = s
    durations = np.bincount(path, minlength=s_count)
    return AlignmentResult(
        durations=durations, path=path, total_log_likelihood=float(q[s_count - 1, t_count - 1])
    )


def brute_force_align(lattice: np.ndarray) -> AlignmentResult:
    """Exhaustive alignment oracle; guards against combinatorial blowup.

    Enumerates every monotone surjective alignment and keeps the best score,
    breaking exact ties the same way as :func:`mas_align` (the path that is
    lexicographically largest when read from the last frame backwards).
    """
    lattice = np.asarray(lattice, dtype=np.float64)
    s_count, t_count = lattice.shape
    _check_sizes(s_count, t_count)
    if t_count > BRUTE_FORCE_MAX_T or s_count > BRUTE_FORCE_MAX_S:
        raise ValueError(
            f"instance {s_count}x{t_count} too large for brute force "
            f"(limits S<={BRUTE_FORCE_MAX_S}, T<={BRUTE_FORCE_MAX_T})"
        )

    best_score = None
    best_path = None
    for cuts in combinations(range(1, t_count), s_count - 1):
        bounds = (0,) + cuts + (t_count,)
        path = np.empty(t_count, dtype=np.int64)
        for token in range(s_count):
            path[bounds[token] : bounds[token + 1]] = token
        score = 0.0
        for t in range(t_count):
            score += lattice[path[t], t]
        key = tuple(path[::-1])
        if best_score is None or score > best_score or (score == best_score and key > best_key):
            best_score, best_path, best_key = score, path, key
    durations = np.bincount(best_path, minlength=s_count)
    return AlignmentResult(
        durations=durations, path=best_path, total_log_likelihood=float(best_score)
    )


def align_latents(fz: LatentSequence, prior: PriorStats) -> AlignmentResult:
    """Convenience wrapper: lattice plus alignment through the selected backend."""
    return get_aligner()(loglik_lattice(fz, prior))


def get_aligner(backend: str | None = None):
    """Resolve the alignment backend: reference DP or the native kernel.

    ``backend`` (or the LANDSYN_MAS_BACKEND environment variable) may be
    "reference", "native", or "auto". "auto" uses the kernel when its shared
    library loads and silently falls back to the reference otherwise;
    "native" raises if the kernel is unavailable.
    """
    backend = backend or os.environ.get(BACKEND_ENV, "auto")
    if backend == "reference":
        return mas_align
    if backend in ("native", "auto"):
        from . import native

        kernel = native.load_kernel()
        if kernel is not None:
            return kernel.mas_align
        if backend == "native":
            raise RuntimeError(
                "native alignment kernel requested but its shared library was not found; "
                "build it or unset " + BACKEND_ENV
            )
        return mas_align
    raise ValueError(f"unknown alignment backend {backend!r}")
