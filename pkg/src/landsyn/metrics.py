"""Landmark trajectory metrics.

All distance metrics are normalized by the reference face size so they are
invariant to uniform scaling and to shared translation. Face size is the mean
over reference frames of the diagonal of the bounding box around all
keypoints. Reported values are percentages: position and velocity errors
divide by the normalizer, the lip-area error divides by its square.

When prediction and reference have different frame counts they are first
aligned with dynamic time warping over steps (1,0), (0,1), (1,1) using the
mean keypoint distance as frame cost, and the metrics run on the aligned
expansions. Equal-length pairs are compared frame by frame, untouched.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .types import LandmarkSequence

REPORT_SCHEMA_VERSION = 1


def face_size_normalizer(ref: LandmarkSequence) -> float:
    """Mean bounding-box diagonal of the reference keypoints, over frames."""
    y = ref.y
    spans = y.max(axis=1) - y.min(axis=1)  # [T, 2]
    diag = np.hypot(spans[:, 0], spans[:, 1])
    norm = float(diag.mean())
    if norm <= 1e-12:
        raise ValueError("degenerate reference: zero-size face")
    return norm


def _select(y: np.ndarray, indices) -> np.ndarray:
    if indices is None:
        return y
    return y[:, list(indices), :]


def _mean_point_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Mean over frames and keypoints of the Euclidean distance."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.shape[0] == 0:
        return 0.0
    return float(np.linalg.norm(a - b, axis=2).mean())


def landmark_distance(
    pred: np.ndarray, ref: np.ndarray, norm: float, indices=None
) -> float:
    """Normalized mean keypoint distance, in percent."""
    return 100.0 * _mean_point_distance(_select(pred, indices), _select(ref, indices)) / norm


def velocity_difference(
    pred: np.ndarray, ref: np.ndarray, norm: float, indices=None
) -> float:
    """Normalized mean distance between frame-to-frame velocities, in percent.

    Sequences with fewer than two frames have no velocity and score zero.
    """
    p = np.diff(_select(pred, indices), axis=0)
    r = np.diff(_select(ref, indices), axis=0)
    return 100.0 * _mean_point_distance(p, r) / norm


def polygon_area(points: np.ndarray) -> np.ndarray:
    """Absolute shoelace area of closed polygons, shape [..., K, 2] -> [...]."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[-2] < 3:
        raise ValueError("polygon needs at least three vertices")
    x = points[..., 0]
    y = points[..., 1]
    x_next = np.roll(x, -1, axis=-1)
    y_next = np.roll(y, -1, axis=-1)
    return 0.5 * np.abs(np.sum(x * y_next - x_next * y, axis=-1))


def area_difference(
    pred: np.ndarray, ref: np.ndarray, norm: float, lip_indices
) -> float:
    """Normalized mean absolute difference of lip polygon areas, in percent."""
    area_p = polygon_area(_select(pred, lip_indices))
    area_r = polygon_area(_select(ref, lip_indices))
    return 100.0 * float(np.abs(area_p - area_r).mean()) / (norm**2)


@dataclass
class DtwResult:
    path_pred: np.ndarray
    path_ref: np.ndarray
    cost: float


def dtw_align(pred: np.ndarray, ref: np.ndarray) -> DtwResult:
    """Dynamic time warping between two keypoint sequences.

    Frame cost is the mean keypoint distance. Traceback prefers the diagonal
    step on cost ties, then advancing the prediction, so the path is
    deterministic.
    """
    num_p, num_r = pred.shape[0], ref.shape[0]
    if num_p < 1 or num_r < 1:
        raise ValueError("cannot align empty sequences")
    cost = np.empty((num_p, num_r))
    for i in range(num_p):
        cost[i] = np.linalg.norm(pred[i][None] - ref, axis=2).mean(axis=1)

    acc = np.full((num_p, num_r), np.inf)
    acc[0, 0] = cost[0, 0]
    for i in range(num_p):
        for j in range(num_r):
            if i == 0 and j == 0:
                continue
            best = np.inf
            if i > 0 and j > 0:
                best = acc[i - 1, j - 1]
            if i > 0:
                best = min(best, acc[i - 1, j])
            if j > 0:
                best = min(best, acc[i, j - 1])
            acc[i, j] = cost[i, j] + best

    path = [(num_p - 1, num_r - 1)]
    i, j = num_p - 1, num_r - 1
    while i > 0 or j > 0:
        candidates = []
        if i > 0 and j > 0:
            candidates.append((acc[i - 1, j - 1], 0, (i - 1, j - 1)))
        if i > 0:
            candidates.append((acc[i - 1, j], 1, (i - 1, j)))
        if j > 0:
            candidates.append((acc[i, j - 1], 2, (i, j - 1)))
        _, _, (i, j) = min(candidates)
        path.append((i, j))
    path.reverse()
    idx = np.asarray(path, dtype=np.int64)
    return DtwResult(path_pred=idx[:, 0], path_ref=idx[:, 1], cost=float(acc[-1, -1]))


@dataclass
class UtteranceScores:
    utt_id: str
    d_ll: float
    d_l: float
    d_vl: float
    d_v: float
    d_a: float
    frames_pred: int
    frames_ref: int
    dtw_applied: bool


def evaluate_pair(
    pred: LandmarkSequence, ref: LandmarkSequence, utt_id: str = ""
) -> UtteranceScores:
    """Score one prediction against its reference.

    The normalizer always comes from the original reference, before any
    warping, so alignment never changes the scale of the report.
    """
    if pred.y.shape[1:] != ref.y.shape[1:]:
        raise ValueError(
            f"keypoint layout mismatch: {pred.y.shape[1:]} vs {ref.y.shape[1:]}"
        )
    norm = face_size_normalizer(ref)
    lips = ref.lip_indices
    dtw_applied = pred.num_frames != ref.num_frames
    if dtw_applied:
        warp = dtw_align(pred.y, ref.y)
        yp = pred.y[warp.path_pred]
        yr = ref.y[warp.path_ref]
    else:
        yp, yr = pred.y, ref.y
    return UtteranceScores(
        utt_id=utt_id,
        d_ll=landmark_distance(yp, yr, norm, lips),
        d_l=landmark_distance(yp, yr, norm),
        d_vl=velocity_difference(yp, yr, norm, lips),
        d_v=velocity_difference(yp, yr, norm),
        d_a=area_difference(yp, yr, norm, lips),
        frames_pred=pred.num_frames,
        frames_ref=ref.num_frames,
        dtw_applied=dtw_applied,
    )


SCORE_FIELDS = ("d_ll", "d_l", "d_vl", "d_v", "d_a")


@dataclass
class EvalReport:
    split: str
    count: int
    means: dict[str, float]
    utterances: list[UtteranceScores] = field(default_factory=list)
    schema_version: int = REPORT_SCHEMA_VERSION
    normalization: str = "mean reference bounding-box diagonal"

    def as_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "normalization": self.normalization,
            "split": self.split,
            "count": self.count,
            "means": self.means,
            "utterances": [asdict(u) for u in self.utterances],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2) + "\n")


def evaluate_many(
    items, split: str = "eval"
) -> EvalReport:
    """Aggregate scores over (utt_id, prediction, reference) triples."""
    utterances = [evaluate_pair(pred, ref, utt_id) for utt_id, pred, ref in items]
    if not utterances:
        raise ValueError("nothing to evaluate")
    means = {
        name: float(np.mean([getattr(u, name) for u in utterances])) for name in SCORE_FIELDS
    }
    return EvalReport(split=split, count=len(utterances), means=means, utterances=utterances)


def load_report(path: str | Path) -> EvalReport:
    data = json.loads(Path(path).read_text())
    if data.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise ValueError(
            f"report schema {data.get('schema_version')} unsupported, "
            f"expected {REPORT_SCHEMA_VERSION}"
        )
    return EvalReport(
        split=data["split"],
        count=data["count"],
        means=data["means"],
        utterances=[UtteranceScores(**u) for u in data["utterances"]],
        schema_version=data["schema_version"],
        normalization=data["normalization"],
    )
