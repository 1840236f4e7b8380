"""Trained-model bundle (denoiser + schedule + data normalization) and checkpoints.

Motion windows are root-centered, standardized per feature in the time
domain, then DCT-transformed; the denoiser works on those coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .dct import dct_matrix
from .errors import SchemaError, ShapeError
from .model import Denoiser, ModelConfig
from .motion import Skeleton, h36m_skeleton
from .schedule import NoiseSchedule, make_schedule

CHECKPOINT_FORMAT = "mdcnet-checkpoint/1"


@dataclass
class MotionDiffusion:
    denoiser: Denoiser
    schedule: NoiseSchedule
    mean: np.ndarray  # (n_feats,)
    std: np.ndarray  # (n_feats,)
    n_coeffs: int | None = None  # None keeps every DCT coefficient
    skeleton: Skeleton = field(default_factory=h36m_skeleton)
    fps: float = 50.0
    default_partition: tuple[int, int, int] = (10, 100, 15)
    # (L, F) max |coefficient| seen in training; bounds the x0 estimate while sampling
    coeff_bound: np.ndarray | None = None

    @property
    def config(self) -> ModelConfig:
        return self.denoiser.config

    def coeff_count(self, n: int) -> int:
        return n if self.n_coeffs is None else min(self.n_coeffs, n)

    def basis(self, n: int) -> torch.Tensor:
        """(L, n) float64 truncated DCT basis for an ``n``-frame window."""
        return torch.from_numpy(np.array(dct_matrix(n)[: self.coeff_count(n)]))

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean

    def clamp_eps(self, y: torch.Tensor, eps: torch.Tensor, t: int) -> torch.Tensor:
        """Noise estimate consistent with an x0 estimate clamped to the training range."""
        if self.coeff_bound is None:
            return eps
        bound = torch.from_numpy(np.asarray(self.coeff_bound, dtype=np.float64))
        if bound.shape != y.shape[1:]:
            bound = bound.abs().max()
        ab = float(self.schedule.alpha_bars[t])
        x0 = (y - (1.0 - ab) ** 0.5 * eps) / ab**0.5
        x0 = torch.maximum(torch.minimum(x0, bound), -bound)
        return (y - ab**0.5 * x0) / (1.0 - ab) ** 0.5

    @torch.no_grad()
    def predict_eps(self, y: torch.Tensor, t: int) -> torch.Tensor:
        """Model noise estimate for float64 coefficients ``y`` of shape (B, L, F)."""
        dtype = next(self.denoiser.parameters()).dtype
        steps = torch.full((y.shape[0],), int(t), dtype=torch.long)
        return self.denoiser(y.to(dtype), steps).to(torch.float64)


def fit_normalizer(windows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean/std over (N, n, F) windows; constant features get std 1."""
    flat = windows.reshape(-1, windows.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    std = np.where(std < 1e-8, 1.0, std)
    return mean, std


def save_checkpoint(path, diffusion: MotionDiffusion, train_state: dict | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "model_config": diffusion.config.to_dict(),
        "state_dict": {k: v.detach().clone() for k, v in diffusion.denoiser.state_dict().items()},
        "schedule": {"kind": diffusion.schedule.kind, "T": diffusion.schedule.T},
        "normalizer": {
            "mean": torch.from_numpy(np.asarray(diffusion.mean, dtype=np.float64)),
            "std": torch.from_numpy(np.asarray(diffusion.std, dtype=np.float64)),
        },
        "n_coeffs": diffusion.n_coeffs,
        "coeff_bound": None if diffusion.coeff_bound is None
        else torch.from_numpy(np.asarray(diffusion.coeff_bound, dtype=np.float64)),
        "skeleton": {
            "joint_names": list(diffusion.skeleton.joint_names),
            "parents": list(diffusion.skeleton.parents),
        },
        "fps": diffusion.fps,
        "default_partition": list(diffusion.default_partition),
        "train": train_state or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[MotionDiffusion, dict]:
    """Returns the model bundle (in eval mode) and the stored training state."""
    try:
        payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise SchemaError(f"{path}: not a readable checkpoint ({exc})") from None
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise SchemaError(f"{path}: unsupported checkpoint format {payload.get('format')!r}")
    config = ModelConfig.from_dict(payload["model_config"])
    denoiser = Denoiser(config)
    denoiser.load_state_dict(payload["state_dict"])
    denoiser.eval()
    sk = payload["skeleton"]
    skeleton = Skeleton(tuple(sk["joint_names"]), tuple(sk["parents"]))
    if skeleton.n_joints * 3 != config.n_feats:
        raise ShapeError(f"checkpoint skeleton has {skeleton.n_joints} joints but n_feats={config.n_feats}")
    bundle = MotionDiffusion(
        denoiser=denoiser,
        schedule=make_schedule(payload["schedule"]["kind"], payload["schedule"]["T"]),
        mean=payload["normalizer"]["mean"].numpy(),
        std=payload["normalizer"]["std"].numpy(),
        n_coeffs=payload["n_coeffs"],
        skeleton=skeleton,
        fps=float(payload["fps"]),
        default_partition=tuple(payload["default_partition"]),
        coeff_bound=None if payload.get("coeff_bound") is None else payload["coeff_bound"].numpy(),
    )
    return bundle, payload["train"]
