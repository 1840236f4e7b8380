"""Stochastic motion-prediction metrics (APD, ADE, FDE, MMADE, MMFDE).

Arrays: predictions are (K, frames, ...) and ground truth is (frames, ...);
trailing axes are flattened into one feature vector per frame.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import BoundsError, ShapeError

DEFAULT_SAMPLES = 50
DEFAULT_MULTIMODAL_THRESHOLD = 0.5


def _as_array(x) -> np.ndarray:
    if hasattr(x, "data") and not isinstance(x, np.ndarray):
        return np.asarray(x.data, dtype=np.float64)
    return np.asarray(x, dtype=np.float64)


def _stack(predictions) -> np.ndarray:
    if isinstance(predictions, np.ndarray):
        return predictions.astype(np.float64)
    return np.stack([_as_array(p) for p in predictions])


def _per_frame(a: np.ndarray) -> np.ndarray:
    return a.reshape(a.shape[0], a.shape[1], -1) if a.ndim > 2 else a[..., None]


def _check(gt: np.ndarray, preds: np.ndarray):
    if preds.shape[1:] != gt.shape:
        raise ShapeError(f"prediction shape {preds.shape[1:]} != ground truth shape {gt.shape}")


def apd(predictions) -> float:
    """Mean L2 distance over all unordered pairs of flattened predictions."""
    preds = _stack(predictions)
    if preds.shape[0] < 2:
        raise BoundsError(f"APD needs at least 2 predictions, got {preds.shape[0]}")
    return float(pdist(preds.reshape(preds.shape[0], -1)).mean())


def frame_errors(gt_future, predictions) -> np.ndarray:
    """(K, frames) per-frame L2 distance between each prediction and the ground truth."""
    gt = _as_array(gt_future)
    preds = _stack(predictions)
    _check(gt, preds)
    diff = _per_frame(preds) - _per_frame(gt[None])
    return np.linalg.norm(diff, axis=-1)


def ade(gt_future, predictions) -> float:
    return float(frame_errors(gt_future, predictions).mean(axis=1).min())


def fde(gt_future, predictions) -> float:
    return float(frame_errors(gt_future, predictions)[:, -1].min())


def multimodal_group(observations, threshold: float = DEFAULT_MULTIMODAL_THRESHOLD) -> list[np.ndarray]:
    """Index arrays: for instance i, every j whose condition lies within ``threshold``.

    ``observations`` holds one condition per instance (any shape, flattened).
    """
    if not threshold > 0:
        raise BoundsError(f"threshold must be > 0, got {threshold}")
    obs = np.stack([_as_array(o).reshape(-1) for o in observations])
    d = cdist(obs, obs)
    return [np.flatnonzero(row < threshold) for row in d]


def _mm(metric, group_futures, predictions) -> float:
    if len(group_futures) == 0:
        raise BoundsError("multimodal group is empty")
    return float(np.mean([metric(g, predictions) for g in group_futures]))


def mmade(group_futures: Sequence, predictions) -> float:
    return _mm(ade, group_futures, predictions)


def mmfde(group_futures: Sequence, predictions) -> float:
    return _mm(fde, group_futures, predictions)


@dataclass
class EvalInstance:
    observed: np.ndarray
    gt_future: np.ndarray
    predictions: np.ndarray  # (K, frames, ...)

    def __post_init__(self):
        self.observed = _as_array(self.observed)
        self.gt_future = _as_array(self.gt_future)
        self.predictions = _stack(self.predictions)
        _check(self.gt_future, self.predictions)


def condition_key(observed: np.ndarray, mode: str = "last_frame") -> np.ndarray:
    if mode == "last_frame":
        return observed[-1]
    if mode == "full":
        return observed
    raise BoundsError(f"unknown grouping condition {mode!r}")


def evaluate(instances: Sequence[EvalInstance], threshold: float = DEFAULT_MULTIMODAL_THRESHOLD,
             condition: str = "last_frame") -> dict:
    """Average every metric over the instances."""
    if not instances:
        raise BoundsError("no evaluation instances")
    groups = multimodal_group([condition_key(i.observed, condition) for i in instances], threshold)
    rows = []
    for inst, group in zip(instances, groups):
        futures = [instances[j].gt_future for j in group]
        rows.append((
            apd(inst.predictions) if len(inst.predictions) >= 2 else 0.0,
            ade(inst.gt_future, inst.predictions),
            fde(inst.gt_future, inst.predictions),
            mmade(futures, inst.predictions),
            mmfde(futures, inst.predictions),
        ))
    means = np.mean(rows, axis=0)
    return dict(zip(("APD", "ADE", "FDE", "MMADE", "MMFDE"), (float(v) for v in means)))


# ----------------------------------------------------------------------------
# seam continuity of completions


def frame_steps(seq) -> np.ndarray:
    """(frames-1,) largest per-joint displacement between consecutive frames."""
    a = _as_array(seq)
    return np.linalg.norm(np.diff(a, axis=0), axis=-1).max(axis=-1)


def median_frame_displacement(seq) -> float:
    """Median over frame transitions of the largest per-joint displacement."""
    return float(np.median(frame_steps(seq)))


def seam_jumps(seq, x: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-joint displacement across the entry seam (x-1 -> x) and exit seam (x+m-1 -> x+m)."""
    a = _as_array(seq)
    entry = np.linalg.norm(a[x] - a[x - 1], axis=-1)
    exit_ = np.linalg.norm(a[x + m] - a[x + m - 1], axis=-1)
    return entry, exit_


def seam_ok(seq, x: int, m: int, reference_step: float, factor: float = 3.0) -> bool:
    """True when no joint jumps more than ``factor * reference_step`` at either seam."""
    entry, exit_ = seam_jumps(seq, x, m)
    return bool(max(entry.max(), exit_.max()) <= factor * reference_step)
