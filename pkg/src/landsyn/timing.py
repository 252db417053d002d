"""Length algebra: duration rate conversion and linear latent resampling.

Both operations carry exact conservation contracts that the rest of the
system leans on: duration conversion preserves the rounded total length, and
resampling is endpoint-aligned so identity-length calls are exact copies.
"""

from __future__ import annotations

import numpy as np

from .types import LAND_RATE, LatentSequence


def durations_to_land(d_spec: np.ndarray, ratio: float) -> np.ndarray:
    """Convert per-token durations from the spectral grid to the landmark grid.

    Rounding happens on the cumulative boundary grid, not per token, so the
    total is exactly ``round(ratio * sum(d_spec))`` regardless of the ratio.
    Tokens that round to zero frames are floored to 1, compensated by taking a
    frame from their larger neighbor (falling back to the globally largest
    token when neither neighbor can spare one).

    Args:
        d_spec: positive integer durations at the spectral frame rate.
        ratio: land_fps / spec_fps, in (0, 1].

    Returns:
        Integer durations at the landmark frame rate, all >= 1.
    """
    d_spec = np.asarray(d_spec)
    if d_spec.ndim != 1 or len(d_spec) == 0:
        raise ValueError("d_spec must be a non-empty 1-D array")
    if np.any(d_spec <= 0):
        raise ValueError("durations must be positive")
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must lie in (0, 1], got {ratio}")

    boundaries = np.rint(ratio * np.cumsum(d_spec.astype(np.float64))).astype(np.int64)
    d_land = np.diff(boundaries, prepend=0)
    total = int(boundaries[-1])
    if total < len(d_spec):
        raise ValueError(
            f"target length {total} is shorter than the {len(d_spec)} tokens; "
            "cannot give every token a frame while conserving the total"
        )

    while True:
        zeros = np.flatnonzero(d_land == 0)
        if len(zeros) == 0:
            break
        i = int(zeros[0])
        neighbors = [j for j in (i - 1, i + 1) if 0 <= j < len(d_land) and d_land[j] > 1]
        if neighbors:
            # larger neighbor donates; tie prefers the left one
            donor = max(neighbors, key=lambda j: (d_land[j], -j))
        else:
            donatable = np.flatnonzero(d_land > 1)
            donor = int(donatable[np.argmax(d_land[donatable])])
        d_land[i] += 1
        d_land[donor] -= 1

    assert int(d_land.sum()) == total
    return d_land


def pad_durations_for_grid(d_spec: np.ndarray, ratio: float) -> np.ndarray:
    """Minimally lengthen durations until the landmark grid can hold every token.

    ``durations_to_land`` refuses inputs whose rounded total is below the
    token count. Predicted durations can be that short, so this walks the
    total up by adding one frame per token round-robin until the conversion
    is feasible. Already-feasible inputs come back unchanged.
    """
    d = np.asarray(d_spec, dtype=np.int64).copy()
    if d.ndim != 1 or len(d) == 0:
        raise ValueError("d_spec must be a non-empty 1-D array")
    if np.any(d <= 0):
        raise ValueError("durations must be positive")
    num_tokens = len(d)
    i = 0
    while int(np.rint(ratio * d.sum())) < num_tokens:
        d[i % num_tokens] += 1
        i += 1
    return d


def resample_array_linear(values: np.ndarray, target_len: int) -> np.ndarray:
    """Endpoint-aligned linear resampling along axis 0."""
    if target_len < 1:
        raise ValueError(f"target length must be >= 1, got {target_len}")
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    if n == 0:
        raise ValueError("cannot resample an empty sequence")
    if n == 1:
        return np.repeat(values, target_len, axis=0)
    if target_len == 1:
        return values[:1].copy()
    positions = np.arange(target_len, dtype=np.float64) * ((n - 1) / (target_len - 1))
    # (target_len - 1) * ((n - 1) / (target_len - 1)) can land just below
    # n - 1 in floating point; pin it so the last output frame is bitwise
    # equal to the last input frame
    positions[-1] = n - 1
    lo = np.floor(positions).astype(np.int64)
    lo = np.minimum(lo, n - 2)
    frac = positions - lo
    shape = (target_len,) + (1,) * (values.ndim - 1)
    frac = frac.reshape(shape)
    return (1.0 - frac) * values[lo] + frac * values[lo + 1]


def resample_linear(seq: LatentSequence, target_len: int) -> LatentSequence:
    """Resample a latent sequence to ``target_len`` frames; output is landmark-rate."""
    out = resample_array_linear(seq.values, target_len)
    return LatentSequence(values=out, rate_tag=LAND_RATE, space_tag=seq.space_tag)
