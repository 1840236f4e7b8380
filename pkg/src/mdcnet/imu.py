"""Virtual IMU: accelerometer and gyroscope traces from a joint trajectory.

Strapdown model. A sensor frame rides on the joint with its z axis along the
surface normal and its x axis along an auxiliary direction (by default the
bone leading into the joint). Rotation matrices ``R`` have the sensor axes
as columns, so ``R @ v_sensor`` is a world vector and ``R.T @ v_world`` is
the same vector in sensor coordinates.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import AliasingError, BoundsError, DegenerateFrameError, ParseError, SchemaError, ShapeError
from .motion import MotionSequence

GRAVITY = np.array([0.0, 0.0, -9.81])
IMU_HEADER = ["t", "ax", "ay", "az", "gx", "gy", "gz"]
MAG_HEADER = ["mx", "my", "mz"]


@dataclass(frozen=True)
class SensorSite:
    joint: str = "left_wrist"
    normals: str = "skeleton_derived"  # or "file"
    gravity: tuple[float, float, float] = tuple(GRAVITY)

    def __post_init__(self):
        if self.normals not in ("skeleton_derived", "file"):
            raise SchemaError(f"unknown normal source {self.normals!r}")
        if not np.linalg.norm(self.gravity) > 0:
            raise SchemaError("gravity vector must be non-zero")


@dataclass(frozen=True, eq=False)
class ImuTrace:
    timestamps: np.ndarray
    specific_force: np.ndarray  # (N, 3) m/s^2, sensor frame
    angular_velocity: np.ndarray  # (N, 3) rad/s, sensor frame
    sample_rate: float

    def __post_init__(self):
        n = len(self.timestamps)
        if self.specific_force.shape != (n, 3) or self.angular_velocity.shape != (n, 3):
            raise ShapeError("timestamps, specific force and angular velocity lengths differ")
        for name in ("timestamps", "specific_force", "angular_velocity"):
            if not np.isfinite(getattr(self, name)).all():
                raise ShapeError(f"IMU trace {name} contains non-finite values")

    def __len__(self):
        return len(self.timestamps)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def orientation_frames(normals: np.ndarray, aux_direction: np.ndarray) -> np.ndarray:
    """(N, 3, 3) rotations whose columns are the sensor x, y, z axes in world coordinates.

    z = normal; x = aux_direction with its normal component removed; y = z cross x.
    ``aux_direction`` may be a single vector or one per frame.
    """
    normals = np.asarray(normals, dtype=np.float64)
    aux = np.broadcast_to(np.asarray(aux_direction, dtype=np.float64), normals.shape)
    if normals.ndim != 2 or normals.shape[1] != 3:
        raise ShapeError(f"normals must be (frames, 3), got {normals.shape}")
    norms = np.linalg.norm(normals, axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-6)
    if bad.size:
        raise DegenerateFrameError(int(bad[0]), f"normal at frame {bad[0]} is not unit length ({norms[bad[0]]:.6g})")
    aux_n = np.linalg.norm(aux, axis=1)
    cos = np.abs(np.einsum("ij,ij->i", normals, aux)) / np.where(aux_n > 0, aux_n, 1.0)
    bad = np.flatnonzero((cos > 1 - 1e-6) | (aux_n == 0))
    if bad.size:
        raise DegenerateFrameError(int(bad[0]), f"aux direction parallel to the normal at frame {bad[0]}")
    z = normals
    x = _unit(aux - np.einsum("ij,ij->i", aux, z)[:, None] * z)
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=-1)


def angular_velocity(rotations: np.ndarray, fps: float) -> np.ndarray:
    """Body-frame angular velocity from log(R_i^T R_{i+1}) * fps; last frame repeats."""
    rotations = np.asarray(rotations, dtype=np.float64)
    if len(rotations) < 2:
        raise BoundsError("angular velocity needs at least 2 frames")
    rel = np.einsum("nji,njk->nik", rotations[:-1], rotations[1:])
    rotvec = Rotation.from_matrix(rel).as_rotvec()
    angle = np.linalg.norm(rotvec, axis=1)
    bad = np.flatnonzero(angle >= np.pi - 1e-9)
    if bad.size:
        raise AliasingError(int(bad[0]), float(angle[bad[0]]))
    omega = rotvec * fps
    return np.vstack([omega, omega[-1:]])


def world_acceleration(positions: np.ndarray, fps: float) -> np.ndarray:
    """Second central differences; each endpoint reuses its neighbor's stencil."""
    p = np.asarray(positions, dtype=np.float64)
    if len(p) < 3:
        raise BoundsError("acceleration needs at least 3 frames")
    a = (p[2:] - 2 * p[1:-1] + p[:-2]) * fps**2
    return np.vstack([a[:1], a, a[-1:]])


def accelerometer(positions, rotations, gravity=GRAVITY, fps: float = 50.0) -> np.ndarray:
    """Specific force R^T (a_world - g) per frame, in sensor coordinates."""
    a_w = world_acceleration(positions, fps)
    f_w = a_w - np.asarray(gravity, dtype=np.float64)
    return np.einsum("nji,nj->ni", np.asarray(rotations, dtype=np.float64), f_w)


def skeleton_normals(seq: MotionSequence, joint: int) -> tuple[np.ndarray, np.ndarray]:
    """Approximate surface normal and bone direction at ``joint`` from its limb.

    normal = unit(parent bone x child bone), i.e. the normal of the plane
    spanned by the two segments meeting at the parent joint (forearm and
    upper arm for a wrist). Near-straight limbs fall back to a plane through
    world up, then world x. The sign is kept continuous across frames.
    """
    parents = seq.skeleton.parents
    p = parents[joint]
    if p < 0 or parents[p] < 0:
        raise SchemaError(
            f"joint {seq.skeleton.joint_names[joint]!r} needs a parent and grandparent "
            "for skeleton-derived normals"
        )
    g = parents[p]
    d = seq.data
    bone = d[:, joint] - d[:, p]
    upper = d[:, p] - d[:, g]
    bone_u = _unit(bone)
    n = np.cross(upper, bone)
    for fallback in (np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0])):
        weak = np.linalg.norm(n, axis=1) < 1e-3 * np.linalg.norm(upper, axis=1) * np.linalg.norm(bone, axis=1)
        if not weak.any():
            break
        n[weak] = np.cross(fallback, bone[weak])
    n = _unit(n)
    for i in range(1, len(n)):
        if n[i] @ n[i - 1] < 0:
            n[i] = -n[i]
    return n, bone_u


def synthesize_imu(seq: MotionSequence, site: SensorSite = SensorSite(), normals=None) -> ImuTrace:
    joint = seq.skeleton.index(site.joint)
    derived_n, bone_dir = skeleton_normals(seq, joint)
    if site.normals == "file" or normals is not None:
        if normals is None:
            raise SchemaError("site uses file normals but none were supplied")
        normals = np.asarray(normals, dtype=np.float64)
        if normals.shape != (seq.n_frames, 3):
            raise ShapeError(f"normals must be ({seq.n_frames}, 3), got {normals.shape}")
    else:
        normals = derived_n
    rot = orientation_frames(normals, bone_dir)
    pos = seq.data[:, joint]
    return ImuTrace(
        timestamps=np.arange(seq.n_frames) / seq.fps,
        specific_force=accelerometer(pos, rot, site.gravity, seq.fps),
        angular_velocity=angular_velocity(rot, seq.fps),
        sample_rate=seq.fps,
    )


def export_imu(trace: ImuTrace, path, magnetometer: bool = False) -> None:
    header = IMU_HEADER + (MAG_HEADER if magnetometer else [])
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(trace)):
            row = [trace.timestamps[i], *trace.specific_force[i], *trace.angular_velocity[i]]
            if magnetometer:
                row += [0.0, 0.0, 0.0]
            w.writerow([repr(float(v)) for v in row])


def load_imu(path) -> tuple[ImuTrace, np.ndarray | None]:
    """Read an exported CSV; returns the trace and the magnetometer columns if present."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:7] != IMU_HEADER:
        raise ParseError(f"{path}: line 1: expected header {','.join(IMU_HEADER)}")
    has_mag = rows[0][7:] == MAG_HEADER
    width = len(rows[0])
    try:
        arr = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64).reshape(-1, width)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    t = arr[:, 0]
    rate = 1.0 / (t[1] - t[0]) if len(t) > 1 else 0.0
    trace = ImuTrace(t, arr[:, 1:4], arr[:, 4:7], rate)
    return trace, (arr[:, 7:10] if has_mag else None)


def plot_imu(trace: ImuTrace, path, magnetometer: np.ndarray | None = None) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    panels = [("specific force [m/s$^2$]", trace.specific_force),
              ("angular velocity [rad/s]", trace.angular_velocity)]
    if magnetometer is not None:
        panels.append(("magnetic field", magnetometer))
    fig, axes = plt.subplots(len(panels), 1, figsize=(8, 2.6 * len(panels)), sharex=True)
    for ax, (label, values) in zip(axes, panels):
        for c, name in enumerate("xyz"):
            ax.plot(trace.timestamps, values[:, c], label=name, lw=1)
        ax.set_ylabel(label)
        ax.legend(loc="upper right", fontsize=8)
        ax.grid(alpha=0.3)
    axes[-1].set_xlabel("time [s]")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
