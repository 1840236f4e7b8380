"""Skeleton and motion-sequence data model, slicing/concatenation and file I/O.

Canonical JSON file::

    {"fps": 50, "joint_names": [...], "parents": [-1, 0, ...],
     "frames": [[[x, y, z], ...], ...]}

A flat CSV (``frame,joint,x,y,z``, optional ``# fps=<rate>`` first line) is
supported for interchange.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BoundsError, IncompatibleError, ParseError, SchemaError

DEFAULT_FPS = 50.0

# Human3.6M 17-joint layout (hip-rooted tree).
H36M17_NAMES = (
    "hip", "right_hip", "right_knee", "right_foot",
    "left_hip", "left_knee", "left_foot",
    "spine", "thorax", "neck", "head",
    "left_shoulder", "left_elbow", "left_wrist",
    "right_shoulder", "right_elbow", "right_wrist",
)
H36M17_PARENTS = (-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15)


@dataclass(frozen=True)
class Skeleton:
    joint_names: tuple[str, ...]
    parents: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(str(n) for n in self.joint_names))
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        n = len(self.joint_names)
        if len(self.parents) != n:
            raise SchemaError(f"{n} joint names but {len(self.parents)} parent indices")
        if len(set(self.joint_names)) != n:
            raise SchemaError("joint names must be unique")
        roots = [i for i, p in enumerate(self.parents) if p < 0]
        if len(roots) != 1:
            raise SchemaError(f"skeleton needs exactly one root, found {len(roots)}")
        for i, p in enumerate(self.parents):
            if p >= n or p == i:
                raise SchemaError(f"joint {i} has invalid parent {p}")
        # every joint must reach the root without revisiting a node
        for i in range(n):
            seen = set()
            j = i
            while j >= 0:
                if j in seen:
                    raise SchemaError(f"parent links of joint {i} form a cycle")
                seen.add(j)
                j = self.parents[j]

    @property
    def n_joints(self) -> int:
        return len(self.joint_names)

    @property
    def root(self) -> int:
        return next(i for i, p in enumerate(self.parents) if p < 0)

    @property
    def bone_pairs(self) -> list[tuple[int, int]]:
        return [(p, c) for c, p in enumerate(self.parents) if p >= 0]

    def index(self, name: str) -> int:
        try:
            return self.joint_names.index(name)
        except ValueError:
            raise SchemaError(f"unknown joint {name!r}") from None

    def subset(self, keep: Sequence[int]) -> "Skeleton":
        """Skeleton restricted to ``keep``; dropped ancestors are bridged over."""
        keep = list(keep)
        pos = {j: i for i, j in enumerate(keep)}
        parents = []
        for j in keep:
            p = self.parents[j]
            while p >= 0 and p not in pos:
                p = self.parents[p]
            parents.append(pos[p] if p >= 0 else -1)
        return Skeleton(tuple(self.joint_names[j] for j in keep), tuple(parents))


def h36m_skeleton() -> Skeleton:
    return Skeleton(H36M17_NAMES, H36M17_PARENTS)


@dataclass(frozen=True)
class FrameRange:
    start: int
    end: int


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True, eq=False)
class MotionSequence:
    """Joint positions (frames x joints x 3, meters) sampled at ``fps``.

    The array is copied and made read-only on construction. Construction only
    checks the array rank; use :func:`validate` for the full invariants.
    """

    data: np.ndarray
    fps: float = DEFAULT_FPS
    skeleton: Skeleton = field(default_factory=h36m_skeleton)

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[-1] != 3:
            raise SchemaError(f"motion data must be frames x joints x 3, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "fps", float(self.fps))

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_joints(self) -> int:
        return self.data.shape[1]

    def __len__(self) -> int:
        return self.n_frames

    def flat(self) -> np.ndarray:
        """frames x (joints*3) view."""
        return self.data.reshape(self.n_frames, -1)

    def with_data(self, data: np.ndarray) -> "MotionSequence":
        return MotionSequence(data, self.fps, self.skeleton)

    def __eq__(self, other):
        if not isinstance(other, MotionSequence):
            return NotImplemented
        return (
            self.fps == other.fps
            and self.skeleton == other.skeleton
            and self.data.shape == other.data.shape
            and bool(np.array_equal(self.data, other.data))
        )

    __hash__ = None


def validate(seq: MotionSequence) -> ValidationReport:
    report = ValidationReport()
    if seq.n_frames < 1:
        report.errors.append("frames >= 1 violated: sequence has 0 frames")
    if seq.n_joints != seq.skeleton.n_joints:
        report.errors.append(
            f"joint count {seq.n_joints} does not match skeleton ({seq.skeleton.n_joints} joints)"
        )
    if not (seq.fps > 0 and math.isfinite(seq.fps)):
        report.errors.append(f"fps must be positive and finite, got {seq.fps}")
    bad = np.argwhere(~np.isfinite(seq.data))
    for f, j in np.unique(bad[:, :2], axis=0) if bad.size else []:
        report.errors.append(f"non-finite value at frame {f}, joint {j}")
    return report


def slice_motion(seq: MotionSequence, rng: FrameRange) -> MotionSequence:
    if not (0 <= rng.start < rng.end <= seq.n_frames):
        raise BoundsError(
            f"frame range [{rng.start}, {rng.end}) outside sequence of {seq.n_frames} frames"
        )
    return seq.with_data(seq.data[rng.start:rng.end])


def concat(*parts: MotionSequence) -> MotionSequence:
    if not parts:
        raise BoundsError("concat needs at least one sequence")
    first = parts[0]
    for p in parts[1:]:
        if p.skeleton != first.skeleton:
            raise IncompatibleError("cannot concatenate sequences with different skeletons")
        if p.fps != first.fps:
            raise IncompatibleError(f"cannot concatenate {first.fps} fps with {p.fps} fps")
    if len(parts) == 1:
        return first
    return first.with_data(np.concatenate([p.data for p in parts], axis=0))


def center_on_root(seq: MotionSequence) -> tuple[MotionSequence, np.ndarray]:
    """Subtract the root position from every joint; returns (centered, root trajectory)."""
    root = seq.data[:, seq.skeleton.root, :].copy()
    return seq.with_data(seq.data - root[:, None, :]), root


def add_root(seq: MotionSequence, root_trajectory: np.ndarray) -> MotionSequence:
    return seq.with_data(seq.data + np.asarray(root_trajectory)[:, None, :])


def bone_lengths(seq: MotionSequence) -> np.ndarray:
    """frames x bones array of bone lengths in skeleton ``bone_pairs`` order."""
    pairs = np.array(seq.skeleton.bone_pairs)
    return np.linalg.norm(seq.data[:, pairs[:, 1]] - seq.data[:, pairs[:, 0]], axis=-1)


# ----------------------------------------------------------------------------
# file I/O


def motion_to_dict(seq: MotionSequence) -> dict:
    return {
        "fps": seq.fps,
        "joint_names": list(seq.skeleton.joint_names),
        "parents": list(seq.skeleton.parents),
        "frames": seq.data.tolist(),
    }


def motion_from_dict(obj: dict, skeleton: Skeleton | None = None) -> MotionSequence:
    if not isinstance(obj, dict):
        raise SchemaError("motion file must contain a JSON object")
    for key in ("fps", "joint_names", "parents", "frames"):
        if key not in obj:
            raise SchemaError(f"missing required field {key!r}")
    fps = obj["fps"]
    if not isinstance(fps, (int, float)) or isinstance(fps, bool) or fps <= 0:
        raise SchemaError(f"field 'fps' must be a positive number, got {fps!r}")
    declared = Skeleton(tuple(obj["joint_names"]), tuple(obj["parents"]))
    if skeleton is not None and skeleton != declared:
        raise SchemaError(
            f"file skeleton ({declared.n_joints} joints) does not match the expected skeleton "
            f"({skeleton.n_joints} joints)"
        )
    frames = obj["frames"]
    if not isinstance(frames, list):
        raise SchemaError("field 'frames' must be an array")
    nj = declared.n_joints
    for fi, frame in enumerate(frames):
        if not isinstance(frame, list) or len(frame) != nj:
            got = len(frame) if isinstance(frame, list) else type(frame).__name__
            raise SchemaError(f"frames[{fi}]: expected {nj} joints, got {got}")
        for ji, xyz in enumerate(frame):
            if (
                not isinstance(xyz, list)
                or len(xyz) != 3
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in xyz)
            ):
                raise ParseError(f"frames[{fi}][{ji}]: expected [x, y, z] numbers, got {xyz!r}")
    data = np.array(frames, dtype=np.float64).reshape(len(frames), nj, 3)
    return MotionSequence(data, float(fps), declared)


def save_motion(seq: MotionSequence, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        _save_csv(seq, path)
        return
    path.write_text(json.dumps(motion_to_dict(seq)))


def load_motion(path, skeleton: Skeleton | None = None, fps: float | None = None) -> MotionSequence:
    """Load a canonical JSON (or flat CSV) motion file.

    ``skeleton`` optionally declares the expected layout; a mismatch raises
    :class:`SchemaError`. For CSV input ``skeleton`` defaults to the 17-joint
    layout and ``fps`` to the ``# fps=`` header (or 50).
    """
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _load_csv(path, skeleton, fps)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return motion_from_dict(obj, skeleton)


def _save_csv(seq: MotionSequence, path: Path) -> None:
    names = seq.skeleton.joint_names
    with path.open("w", newline="") as fh:
        fh.write(f"# fps={seq.fps!r}\n")
        w = csv.writer(fh)
        w.writerow(["frame", "joint", "x", "y", "z"])
        for f in range(seq.n_frames):
            for j in range(seq.n_joints):
                w.writerow([f, names[j], *(repr(float(v)) for v in seq.data[f, j])])


def _load_csv(path: Path, skeleton: Skeleton | None, fps: float | None) -> MotionSequence:
    skeleton = skeleton or h36m_skeleton()
    lines = path.read_text().splitlines()
    start = 0
    if lines and lines[0].startswith("#"):
        head = lines[0].lstrip("#").strip()
        if head.startswith("fps=") and fps is None:
            fps = float(head[4:])
        start = 1
    reader = csv.reader(lines[start:])
    header = next(reader, None)
    if header != ["frame", "joint", "x", "y", "z"]:
        raise ParseError(f"{path}: line {start + 1}: expected header frame,joint,x,y,z")
    rows = {}
    for lineno, row in enumerate(reader, start=start + 2):
        if len(row) != 5:
            raise ParseError(f"{path}: line {lineno}: expected 5 fields, got {len(row)}")
        try:
            f = int(row[0])
            xyz = [float(v) for v in row[2:]]
        except ValueError as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}") from None
        j = row[1]
        if j not in skeleton.joint_names:
            raise SchemaError(f"{path}: line {lineno}: unknown joint {j!r}")
        rows[(f, skeleton.joint_names.index(j))] = xyz
    n_frames = 1 + max((f for f, _ in rows), default=-1)
    data = np.full((n_frames, skeleton.n_joints, 3), np.nan)
    for (f, j), xyz in rows.items():
        data[f, j] = xyz
    if np.isnan(data).any():
        f, j, _ = np.argwhere(np.isnan(data))[0]
        raise SchemaError(f"{path}: missing row for frame {f}, joint {skeleton.joint_names[j]}")
    return MotionSequence(data, fps or DEFAULT_FPS, skeleton)
