"""Human3.6M ingestion, window extraction and a procedural motion generator.

Canonical dataset layout (written by ``mdc h36m-convert``)::

    root/
      S1/Walking.json
      S1/Greeting 1.json
      ...
      S11/Phoning.json

Each file is a canonical motion file (see :mod:`mdcnet.motion`).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, IngestionError
from .motion import (
    FrameRange,
    MotionSequence,
    Skeleton,
    center_on_root,
    h36m_skeleton,
    load_motion,
    save_motion,
    slice_motion,
)

log = logging.getLogger(__name__)

TRAIN_SUBJECTS = ("S1", "S5", "S6", "S7", "S8")
TEST_SUBJECTS = ("S9", "S11")

# Indices of the 17 kept joints in the 32-joint Human3.6M arrays, in
# mdcnet.motion.H36M17_NAMES order.
H36M32_TO_17 = (0, 1, 2, 3, 6, 7, 8, 12, 13, 14, 15, 17, 18, 19, 25, 26, 27)

JOINT_SELECTIONS = {
    "h36m17": tuple(range(17)),
    # drops the neck/nose joint; the head is re-parented to the thorax
    "h36m16": tuple(j for j in range(17) if j != 9),
}


def select_joints(seq: MotionSequence, selection: str | Sequence[str] = "h36m17") -> MotionSequence:
    """Down-select a 17- or 32-joint sequence to the configured joint set."""
    if seq.n_joints == 32:
        seq = MotionSequence(seq.data[:, list(H36M32_TO_17)], seq.fps, h36m_skeleton())
    if isinstance(selection, str):
        if selection not in JOINT_SELECTIONS:
            raise ConfigError(f"unknown joint selection {selection!r}")
        if seq.skeleton.n_joints != 17:
            raise IngestionError(f"preset {selection!r} needs 17- or 32-joint input, got {seq.n_joints}")
        keep = list(JOINT_SELECTIONS[selection])
    else:
        keep = [seq.skeleton.index(name) for name in selection]
    if keep == list(range(seq.n_joints)):
        return seq
    return MotionSequence(seq.data[:, keep], seq.fps, seq.skeleton.subset(keep))


def resample(seq: MotionSequence, fps: float) -> MotionSequence:
    """Linear-interpolation resampling to ``fps``."""
    if seq.fps == fps:
        return seq
    duration = (seq.n_frames - 1) / seq.fps
    n_out = int(np.floor(duration * fps + 1e-9)) + 1
    t_in = np.arange(seq.n_frames) / seq.fps
    t_out = np.arange(n_out) / fps
    flat = seq.flat()
    out = np.stack([np.interp(t_out, t_in, flat[:, c]) for c in range(flat.shape[1])], axis=1)
    return MotionSequence(out.reshape(n_out, seq.n_joints, 3), fps, seq.skeleton)


def window_ranges(n_frames: int, window: int, stride: int) -> list[FrameRange]:
    if window < 1 or stride < 1:
        raise ConfigError(f"window and stride must be >= 1, got {window}, {stride}")
    if n_frames < window:
        return []
    return [FrameRange(s, s + window) for s in range(0, n_frames - window + 1, stride)]


@dataclass(frozen=True)
class WindowRef:
    subject: str
    action: str
    frames: FrameRange


@dataclass
class DatasetSplit:
    clips: dict[tuple[str, str], MotionSequence]
    train_subjects: tuple[str, ...] = TRAIN_SUBJECTS
    test_subjects: tuple[str, ...] = TEST_SUBJECTS
    train_windows: list[WindowRef] = field(default_factory=list)
    test_windows: list[WindowRef] = field(default_factory=list)

    def __post_init__(self):
        if set(self.train_subjects) & set(self.test_subjects):
            raise ConfigError("train and test subjects overlap")

    def sequences(self, split: str = "train") -> list[MotionSequence]:
        refs = self.train_windows if split == "train" else self.test_windows
        return [slice_motion(self.clips[(r.subject, r.action)], r.frames) for r in refs]


def load_h36m(
    root_dir,
    joint_selection: str | Sequence[str] = "h36m17",
    window: int = 125,
    stride: int = 25,
    fps: float = 50.0,
    subjects: Sequence[str] | None = None,
    actions: Sequence[str] | None = None,
) -> DatasetSplit:
    """Load a canonical Human3.6M directory into root-centered windows.

    Absent subjects from the standard split only produce a warning; subjects or
    actions requested explicitly through ``subjects``/``actions`` must exist.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise IngestionError(f"dataset directory {root} does not exist")
    wanted = tuple(subjects) if subjects else TRAIN_SUBJECTS + TEST_SUBJECTS
    missing = []
    clips = {}
    for subj in wanted:
        sdir = root / subj
        if not sdir.is_dir():
            missing.append(subj)
            continue
        files = {p.stem: p for p in sorted(sdir.glob("*.json"))}
        names = list(actions) if actions else sorted(files)
        for act in names:
            if act not in files:
                missing.append(f"{subj}/{act}")
                continue
            seq = select_joints(load_motion(files[act]), joint_selection)
            seq = center_on_root(resample(seq, fps))[0]
            clips[(subj, act)] = seq
    explicit = bool(subjects) or bool(actions)
    if missing and (explicit or not clips):
        raise IngestionError(f"missing from {root}: {', '.join(missing)}")
    if missing:
        log.warning("dataset %s is missing: %s", root, ", ".join(missing))
    split = DatasetSplit(clips)
    for (subj, act), seq in clips.items():
        refs = [WindowRef(subj, act, r) for r in window_ranges(seq.n_frames, window, stride)]
        if subj in split.test_subjects:
            split.test_windows.extend(refs)
        elif subj in split.train_subjects or subjects:
            split.train_windows.extend(refs)
    if not split.test_windows:
        log.warning("test split is empty")
    return split


def convert_h36m(src, out_dir, fps: float = 50.0, selection: str = "h36m17") -> list[Path]:
    """Convert 32-joint Human3.6M positions to canonical per-clip motion files.

    ``src`` is either the community ``data_3d_h36m.npz`` (``positions_3d`` dict of
    subject -> action -> (frames, 32, 3) meters) or a directory of
    ``<subject>/<action>.npy`` arrays shaped (frames, 32, 3) or (frames, 96).
    """
    src = Path(src)
    out = Path(out_dir)
    written = []
    for subj, act, arr in _iter_raw(src):
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 2 and arr.shape[1] == 96:
            arr = arr.reshape(-1, 32, 3)
        if arr.ndim != 3 or arr.shape[1:] != (32, 3):
            raise IngestionError(f"{subj}/{act}: expected (frames, 32, 3) positions, got {arr.shape}")
        seq32 = MotionSequence(arr, fps, _chain(32))
        seq = select_joints(seq32, selection)
        path = out / subj / f"{act}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        save_motion(seq, path)
        written.append(path)
    if not written:
        raise IngestionError(f"no Human3.6M clips found in {src}")
    return written


def _chain(n: int) -> Skeleton:
    return Skeleton(tuple(f"j{i}" for i in range(n)), tuple(range(-1, n - 1)))


def _iter_raw(src: Path):
    if src.is_file():
        with np.load(src, allow_pickle=True) as npz:
            if "positions_3d" not in npz:
                raise IngestionError(f"{src}: no 'positions_3d' entry")
            data = npz["positions_3d"].item()
        for subj in sorted(data):
            for act in sorted(data[subj]):
                yield subj, act, data[subj][act]
        return
    if not src.is_dir():
        raise IngestionError(f"{src} does not exist")
    for path in sorted(src.glob("*/*.npy")):
        yield path.parent.name, path.stem, np.load(path)


# ----------------------------------------------------------------------------
# procedural motions

# child offsets from parent in the rest pose (meters, z up, facing +y)
_REST_OFFSETS = np.array([
    [0.0, 0.0, 0.0],      # hip (root)
    [-0.13, 0.0, 0.0],    # right_hip
    [0.0, 0.0, -0.45],    # right_knee
    [0.0, 0.0, -0.44],    # right_foot
    [0.13, 0.0, 0.0],     # left_hip
    [0.0, 0.0, -0.45],    # left_knee
    [0.0, 0.0, -0.44],    # left_foot
    [0.0, 0.0, 0.23],     # spine
    [0.0, 0.0, 0.25],     # thorax
    [0.0, 0.02, 0.10],    # neck
    [0.0, 0.0, 0.12],     # head
    [0.16, 0.0, -0.02],   # left_shoulder
    [0.0, 0.0, -0.28],    # left_elbow
    [0.0, 0.0, -0.25],    # left_wrist
    [-0.16, 0.0, -0.02],  # right_shoulder
    [0.0, 0.0, -0.28],    # right_elbow
    [0.0, 0.0, -0.25],    # right_wrist
])
_ROOT_HEIGHT = 0.92
SYNTHETIC_FAMILIES = ("walk", "sit")


def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    r = np.zeros(a.shape + (3, 3))
    r[..., 0, 0] = 1
    r[..., 1, 1], r[..., 1, 2] = c, -s
    r[..., 2, 1], r[..., 2, 2] = s, c
    return r


def _rot_y(a):
    c, s = np.cos(a), np.sin(a)
    r = np.zeros(a.shape + (3, 3))
    r[..., 1, 1] = 1
    r[..., 0, 0], r[..., 0, 2] = c, s
    r[..., 2, 0], r[..., 2, 2] = -s, c
    return r


def _rot_z(a):
    c, s = np.cos(a), np.sin(a)
    r = np.zeros(a.shape + (3, 3))
    r[..., 2, 2] = 1
    r[..., 0, 0], r[..., 0, 1] = c, -s
    r[..., 1, 0], r[..., 1, 1] = s, c
    return r


def forward_kinematics(local_rot: np.ndarray, root_pos: np.ndarray, parents=None) -> np.ndarray:
    """Joint positions from per-joint local rotations (frames, J, 3, 3)."""
    parents = parents or h36m_skeleton().parents
    n_frames, n_joints = local_rot.shape[:2]
    glob = np.empty_like(local_rot)
    pos = np.empty((n_frames, n_joints, 3))
    for j, p in enumerate(parents):
        if p < 0:
            glob[:, j] = local_rot[:, j]
            pos[:, j] = root_pos
        else:
            glob[:, j] = glob[:, p] @ local_rot[:, j]
            pos[:, j] = pos[:, p] + np.einsum("fij,j->fi", glob[:, p], _REST_OFFSETS[j])
    return pos


def _walk(rng: np.random.Generator, t: np.ndarray):
    f = rng.uniform(0.8, 1.2)
    phase = rng.uniform(0, 2 * np.pi)
    hip_amp = rng.uniform(0.3, 0.5)
    knee_amp = rng.uniform(0.4, 0.8)
    arm_amp = rng.uniform(0.2, 0.45)
    elbow0 = rng.uniform(0.3, 0.6)
    speed = rng.uniform(0.9, 1.4)
    w = 2 * np.pi * f * t + phase
    rot = np.tile(np.eye(3), (len(t), 17, 1, 1))
    rot[:, 1] = _rot_x(hip_amp * np.sin(w))
    rot[:, 4] = _rot_x(-hip_amp * np.sin(w))
    rot[:, 2] = _rot_x(-knee_amp * 0.5 * (1 + np.sin(w + np.pi / 2)))
    rot[:, 5] = _rot_x(-knee_amp * 0.5 * (1 - np.sin(w + np.pi / 2)))
    rot[:, 11] = _rot_x(arm_amp * np.sin(w)) @ _rot_y(np.full_like(t, -0.1))
    rot[:, 14] = _rot_x(-arm_amp * np.sin(w)) @ _rot_y(np.full_like(t, 0.1))
    rot[:, 12] = _rot_x(elbow0 + 0.3 * arm_amp * (1 + np.sin(w)))
    rot[:, 15] = _rot_x(elbow0 + 0.3 * arm_amp * (1 - np.sin(w)))
    rot[:, 7] = _rot_z(0.08 * np.sin(w))
    root = np.stack([np.zeros_like(t), speed * t, _ROOT_HEIGHT + 0.02 * np.sin(2 * w)], axis=1)
    return rot, root, f


def _sit(rng: np.random.Generator, t: np.ndarray):
    duration = t[-1] if t[-1] > 0 else 1.0
    center = rng.uniform(0.3, 0.7) * duration
    width = rng.uniform(0.15, 0.3)
    s = 1.0 / (1.0 + np.exp(-(t - center) / width))
    f = rng.uniform(0.3, 0.6)
    wobble = 0.05 * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    rot = np.tile(np.eye(3), (len(t), 17, 1, 1))
    thigh = 1.4 * s
    rot[:, 1] = _rot_x(thigh)
    rot[:, 4] = _rot_x(thigh)
    rot[:, 2] = _rot_x(-1.5 * s)
    rot[:, 5] = _rot_x(-1.5 * s)
    rot[:, 7] = _rot_x(0.35 * np.sin(np.pi * s) + wobble)
    rot[:, 11] = _rot_x(0.5 * s + wobble) @ _rot_y(np.full_like(t, -0.15))
    rot[:, 14] = _rot_x(0.5 * s - wobble) @ _rot_y(np.full_like(t, 0.15))
    rot[:, 12] = _rot_x(np.full_like(t, 0.4) + 0.6 * s)
    rot[:, 15] = _rot_x(np.full_like(t, 0.4) + 0.6 * s)
    root = np.stack([np.zeros_like(t), -0.25 * s, _ROOT_HEIGHT - 0.45 * s + 0.01 * wobble], axis=1)
    return rot, root, f


def synthetic_motion(seed: int, family: str = "walk", n_frames: int = 125, fps: float = 50.0,
                     heading: float | None = None) -> tuple[MotionSequence, float]:
    """One procedural clip and its dominant oscillation frequency (Hz)."""
    if family not in SYNTHETIC_FAMILIES:
        raise ConfigError(f"unknown synthetic family {family!r}")
    rng = np.random.default_rng(seed)
    t = np.arange(n_frames) / fps
    rot, root, freq = (_walk if family == "walk" else _sit)(rng, t)
    yaw = rng.uniform(-np.pi, np.pi) if heading is None else heading
    rot[:, 0] = _rot_z(np.full_like(t, yaw))
    root = root @ _rot_z(np.array(yaw)).T
    return MotionSequence(forward_kinematics(rot, root), fps, h36m_skeleton()), freq


def synthetic_motions(seed: int, count: int, n_frames: int = 125, fps: float = 50.0) -> list[MotionSequence]:
    """``count`` deterministic clips alternating walk-like and sit-transition families."""
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    seeds = np.random.SeedSequence(seed).spawn(count)
    out = []
    for i, ss in enumerate(seeds):
        family = SYNTHETIC_FAMILIES[i % 2]
        sub = int(ss.generate_state(1)[0])
        out.append(synthetic_motion(sub, family, n_frames, fps)[0])
    return out
