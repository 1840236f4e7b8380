"""Masked reverse diffusion that fills the gap between two motion fragments.

Every reverse step builds two candidates for x_{t-1}: the clean observed
sequence diffused to step t-1 (observed frames) and one ancestral step of the
current latent using the predicted noise (frames to generate). They are merged
frame-wise in the time domain and transformed back to DCT coefficients.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .diffusion import MotionDiffusion
from .errors import BoundsError, ConfigError, DivergenceError, IncompatibleError, ShapeError
from .motion import FrameRange, MotionSequence, center_on_root, concat, slice_motion
from .schedule import posterior_step, q_sample

PADDING_STRATEGIES = ("split_ends", "zeros", "last_of_h1", "first_of_h2")


@dataclass(frozen=True)
class CompletionTask:
    h1_tail: MotionSequence
    h2_head: MotionSequence
    m: int
    padding: str = "split_ends"
    rng_seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise BoundsError(f"completion length must be >= 1, got {self.m}")
        if self.h1_tail.n_frames < 1 or self.h2_head.n_frames < 1:
            raise BoundsError("h1 tail and h2 head need at least one frame each")
        if self.h1_tail.skeleton != self.h2_head.skeleton:
            raise IncompatibleError("h1 tail and h2 head use different skeletons")
        if self.h1_tail.fps != self.h2_head.fps:
            raise IncompatibleError(
                f"h1 tail is {self.h1_tail.fps} fps but h2 head is {self.h2_head.fps} fps"
            )
        if self.padding not in PADDING_STRATEGIES:
            raise ConfigError(f"unknown padding {self.padding!r}; expected one of {PADDING_STRATEGIES}")

    @property
    def x(self) -> int:
        return self.h1_tail.n_frames

    @property
    def k(self) -> int:
        return self.h2_head.n_frames

    @property
    def n(self) -> int:
        return self.x + self.m + self.k


def build_mask(x: int, m: int, k: int) -> np.ndarray:
    if x < 1 or m < 1 or k < 1:
        raise BoundsError(f"mask lengths must all be >= 1, got x={x}, m={m}, k={k}")
    return np.concatenate([np.ones(x), np.zeros(m), np.ones(k)])


def _fill(task: CompletionTask) -> np.ndarray:
    last = task.h1_tail.data[-1]
    first = task.h2_head.data[0]
    m = task.m
    if task.padding == "split_ends":
        n_h1 = math.ceil(m / 2)
        return np.concatenate([np.repeat(last[None], n_h1, 0), np.repeat(first[None], m - n_h1, 0)])
    if task.padding == "zeros":
        return np.zeros((m,) + last.shape)
    if task.padding == "last_of_h1":
        return np.repeat(last[None], m, 0)
    return np.repeat(first[None], m, 0)


def build_padded_input(task: CompletionTask) -> MotionSequence:
    middle = task.h1_tail.with_data(_fill(task))
    return concat(task.h1_tail, middle, task.h2_head)


def masked_sample(
    diffusion: MotionDiffusion,
    observed: np.ndarray,
    mask: np.ndarray,
    generator: torch.Generator,
    n_samples: int = 1,
    resample: int = 1,
) -> np.ndarray:
    """Run the masked reverse chain.

    observed: (n, F) root-relative padded input; mask: (n,) with 1 = keep.
    ``resample`` > 1 re-noises the merged latent by one forward step and
    repeats that reverse step, letting generated frames settle against the
    observed ones. 1 is the plain per-step merge.
    Returns (n_samples, n, F) time-domain samples in the input units.
    """
    config = diffusion.config
    n, n_feats = observed.shape
    if n_feats != config.n_feats:
        raise ShapeError(f"model expects {config.n_feats} features, task has {n_feats}")
    if n > config.n_frames:
        raise BoundsError(
            f"task needs {n} frames but the model was trained for at most {config.n_frames}; "
            "chain several completions for longer transitions"
        )
    if mask.shape != (n,):
        raise ShapeError(f"mask has shape {mask.shape}, expected ({n},)")
    if resample < 1:
        raise BoundsError(f"resample must be >= 1, got {resample}")
    sched = diffusion.schedule
    basis = diffusion.basis(n)  # (L, n)
    L = basis.shape[0]
    obs = torch.from_numpy(diffusion.normalize(observed)).to(torch.float64)
    obs_c = basis @ obs
    keep = torch.from_numpy(np.asarray(mask, dtype=np.float64))[:, None]

    def noise(*shape):
        return torch.randn(*shape, generator=generator, dtype=torch.float64)

    y = noise(n_samples, L, n_feats)
    combined = None
    for t in reversed(range(sched.T)):
        for r in range(resample if t > 0 else 1):
            if r:
                # forward one step: level t-1 back to level t
                beta = float(sched.betas[t])
                y = math.sqrt(1.0 - beta) * y + math.sqrt(beta) * noise(*y.shape)
            eps = diffusion.clamp_eps(y, diffusion.predict_eps(y, t), t)
            y_gen = posterior_step(sched, y, eps, t, noise(*y.shape) if t > 0 else None)
            if t > 0:
                known = basis.T @ q_sample(sched, obs_c, t - 1, noise(*y.shape))
            else:
                known = obs.expand(n_samples, n, n_feats)
            combined = keep * known + (1.0 - keep) * (basis.T @ y_gen)
            if not torch.isfinite(combined).all():
                raise DivergenceError(f"non-finite latent during sampling at step t={t}")
            y = basis @ combined
    return diffusion.denormalize(combined.numpy())


def _root_frames(task: CompletionTask):
    """Center observed frames on the root and interpolate the root across the gap."""
    tail, tail_root = center_on_root(task.h1_tail)
    head, head_root = center_on_root(task.h2_head)
    w = (np.arange(1, task.m + 1) / (task.m + 1))[:, None]
    gap_root = (1 - w) * tail_root[-1] + w * head_root[0]
    return tail, head, np.concatenate([tail_root, gap_root, head_root])


def sample_completion(
    task: CompletionTask, diffusion: MotionDiffusion, n_samples: int = 1, resample: int = 1
) -> MotionSequence | list[MotionSequence]:
    """Generate the m middle frames between ``task.h1_tail`` and ``task.h2_head``.

    Returns the full x+m+k frame sequence (a list when ``n_samples > 1``).
    Observed frames reproduce the inputs; the generated frames carry a root
    trajectory linearly interpolated between the two fragments.
    """
    tail, head, root = _root_frames(task)
    centered = CompletionTask(tail, head, task.m, task.padding, task.rng_seed)
    padded = build_padded_input(centered)
    mask = build_mask(task.x, task.m, task.k)
    gen = torch.Generator().manual_seed(int(task.rng_seed))
    out = masked_sample(diffusion, padded.flat(), mask, gen, n_samples, resample)
    out = out.reshape(n_samples, task.n, -1, 3) + root[None, :, None, :]
    seqs = [task.h1_tail.with_data(o) for o in out]
    return seqs[0] if n_samples == 1 else seqs


def complete_pair(
    h1: MotionSequence,
    h2: MotionSequence,
    x: int,
    k: int,
    m: int,
    diffusion: MotionDiffusion,
    padding: str = "split_ends",
    seed: int = 0,
    resample: int = 1,
) -> MotionSequence:
    """Join two full clips through an m-frame transition inferred from h1's
    last ``x`` frames and h2's first ``k`` frames."""
    if not 1 <= x <= h1.n_frames:
        raise BoundsError(f"tail length x={x} must be in [1, {h1.n_frames}]")
    if not 1 <= k <= h2.n_frames:
        raise BoundsError(f"head length k={k} must be in [1, {h2.n_frames}]")
    tail = slice_motion(h1, FrameRange(h1.n_frames - x, h1.n_frames))
    head = slice_motion(h2, FrameRange(0, k))
    task = CompletionTask(tail, head, m, padding, seed)
    filled = sample_completion(task, diffusion, resample=resample)
    middle = slice_motion(filled, FrameRange(x, x + m))
    return concat(h1, middle, h2)
