"""Orthonormal DCT-II along the time axis, one transform per feature channel."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import BoundsError, ShapeError
from .motion import MotionSequence, Skeleton, h36m_skeleton


@lru_cache(maxsize=64)
def _dct_matrix_cached(n: int) -> np.ndarray:
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * i + 1) * k / (2 * n))
    m[0] /= np.sqrt(2.0)
    m.setflags(write=False)
    return m


def dct_matrix(n: int) -> np.ndarray:
    """n x n orthonormal DCT-II basis; row ``l`` is frequency ``l``."""
    if n < 1:
        raise BoundsError(f"DCT length must be >= 1, got {n}")
    return _dct_matrix_cached(int(n))


@dataclass(frozen=True, eq=False)
class DctCoeffs:
    """L retained frequencies x F feature channels, plus the original length."""

    coeffs: np.ndarray
    n_frames: int

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.float64)
        if c.ndim != 2:
            raise ShapeError(f"coefficients must be L x F, got shape {c.shape}")
        if not 1 <= c.shape[0] <= self.n_frames:
            raise BoundsError(f"need 1 <= L <= n_frames, got L={c.shape[0]}, n={self.n_frames}")
        if not np.isfinite(c).all():
            raise ShapeError("DCT coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def n_coeffs(self) -> int:
        return self.coeffs.shape[0]


def dct_array(x: np.ndarray, n_coeffs: int | None = None) -> np.ndarray:
    """DCT of a frames x features array, keeping the first ``n_coeffs`` rows."""
    n = x.shape[0]
    n_coeffs = n if n_coeffs is None else n_coeffs
    if not 1 <= n_coeffs <= n:
        raise BoundsError(f"need 1 <= L <= {n}, got L={n_coeffs}")
    return dct_matrix(n)[:n_coeffs] @ x


def idct_array(c: np.ndarray, n_frames: int) -> np.ndarray:
    """Least-squares reconstruction from the leading ``c.shape[0]`` coefficients."""
    return dct_matrix(n_frames)[: c.shape[0]].T @ c


def dct(seq: MotionSequence, n_coeffs: int | None = None) -> DctCoeffs:
    return DctCoeffs(dct_array(seq.flat(), n_coeffs), seq.n_frames)


def idct(coeffs: DctCoeffs, fps: float = 50.0, skeleton: Skeleton | None = None) -> MotionSequence:
    x = idct_array(coeffs.coeffs, coeffs.n_frames)
    if x.shape[1] % 3:
        raise ShapeError(f"feature count {x.shape[1]} is not a multiple of 3")
    data = x.reshape(coeffs.n_frames, -1, 3)
    if skeleton is None:
        return MotionSequence(data, fps, _anonymous_skeleton(data.shape[1]))
    return MotionSequence(data, fps, skeleton)


def _anonymous_skeleton(n: int) -> Skeleton:
    sk = h36m_skeleton()
    if n == sk.n_joints:
        return sk
    # chain skeleton so any joint count yields a valid tree
    return Skeleton(tuple(f"j{i}" for i in range(n)), tuple(range(-1, n - 1)))
