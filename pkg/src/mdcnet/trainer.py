"""Noise-prediction training loop with checkpointing and a CSV metrics log."""
from __future__ import annotations

import copy
import csv
import logging
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .dct import dct_matrix
from .diffusion import MotionDiffusion, fit_normalizer, load_checkpoint, save_checkpoint
from .errors import ConfigError, DivergenceError
from .model import Denoiser, ModelConfig, parameter_count
from .motion import MotionSequence, center_on_root, h36m_skeleton
from .schedule import NoiseSchedule, make_schedule

log = logging.getLogger(__name__)

PARTITION_POLICIES = ("random", "fixed")
# history and future lengths of the fixed split; the middle takes the rest of the window
FIXED_HISTORY, FIXED_FUTURE = 10, 15


@dataclass
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 64
    lr: float = 3e-4
    schedule: str = "cosine"
    steps: int = 1000
    window: int = 125
    partition: str = "random"
    seed: int = 0
    checkpoint_every: int = 100
    grad_clip: float = 1.0
    n_coeffs: int | None = None
    ema: bool = False
    ema_decay: float = 0.999

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.partition not in PARTITION_POLICIES:
            raise ConfigError(f"unknown partition policy {self.partition!r}")
        if self.window < 3:
            raise ConfigError(f"window must be >= 3 frames, got {self.window}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def sample_partition(n: int, rng: np.random.Generator, policy: str = "random") -> tuple[int, int, int]:
    """(x, m, k) with x + m + k = n and every part >= 1."""
    if policy == "fixed":
        x = max(1, round(n * FIXED_HISTORY / 125))
        k = max(1, round(n * FIXED_FUTURE / 125))
        return x, n - x - k, k
    x, k = (int(v) for v in rng.integers(1, max(1, n // 3) + 1, size=2))
    return x, n - x - k, k


def diffusion_loss(model: Callable, x0: torch.Tensor, schedule: NoiseSchedule, generator=None):
    """MSE between true and predicted noise at uniformly drawn steps.

    Returns (loss, t, eps) so callers can inspect the draw.
    """
    B = x0.shape[0]
    t = torch.randint(0, schedule.T, (B,), generator=generator)
    eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    ab = torch.tensor(schedule.alpha_bars, dtype=x0.dtype)[t].view(B, *([1] * (x0.ndim - 1)))
    x_t = ab.sqrt() * x0 + (1 - ab).sqrt() * eps
    pred = model(x_t, t)
    return F.mse_loss(pred, eps), t, eps


def training_step(model, x0, schedule, optimizer=None, generator=None, grad_clip: float | None = 1.0) -> float:
    loss, t, _ = diffusion_loss(model, x0, schedule, generator)
    if not torch.isfinite(loss):
        raise DivergenceError(
            f"non-finite loss {loss.item()} (batch {x0.shape[0]}, steps {t.tolist()[:8]}..., "
            f"max |x0| {x0.abs().max().item():.3g})"
        )
    if optimizer is not None:
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        if grad_clip:
            torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
        optimizer.step()
    return float(loss.item())


def prepare_windows(windows: Sequence[MotionSequence] | np.ndarray) -> np.ndarray:
    """Stack root-centered windows into an (N, n, F) float64 array."""
    if isinstance(windows, np.ndarray):
        arr = windows.astype(np.float64)
        return arr.reshape(arr.shape[0], arr.shape[1], -1)
    if not windows:
        raise ConfigError("training dataset is empty")
    lengths = {w.n_frames for w in windows}
    if len(lengths) != 1:
        raise ConfigError(f"training windows must share one length, got {sorted(lengths)}")
    return np.stack([center_on_root(w)[0].flat() for w in windows])


def encode_windows(arr: np.ndarray, mean, std, n_coeffs: int | None) -> torch.Tensor:
    n = arr.shape[1]
    basis = dct_matrix(n)[: n if n_coeffs is None else n_coeffs]
    coeffs = np.einsum("ln,bnf->blf", basis, (arr - mean) / std)
    return torch.from_numpy(coeffs).to(torch.float32)


class Trainer:
    def __init__(self, windows, config: TrainConfig, model_config: ModelConfig | None = None,
                 out_dir=None, skeleton=None, fps: float = 50.0):
        self.config = config
        arr = prepare_windows(windows)
        if arr.shape[0] == 0:
            raise ConfigError("training dataset is empty")
        if arr.shape[1] != config.window:
            raise ConfigError(f"windows have {arr.shape[1]} frames, config.window={config.window}")
        if skeleton is None:
            skeleton = windows[0].skeleton if isinstance(windows, (list, tuple)) else h36m_skeleton()
            fps = windows[0].fps if isinstance(windows, (list, tuple)) else fps
        model_config = model_config or ModelConfig()
        model_config.n_frames = config.window
        model_config.n_feats = arr.shape[2]
        self.out_dir = Path(out_dir) if out_dir else None
        torch.manual_seed(config.seed)
        mean, std = fit_normalizer(arr)
        self.diffusion = MotionDiffusion(
            Denoiser(model_config),
            make_schedule(config.schedule, config.steps),
            mean, std, config.n_coeffs, skeleton, fps,
            sample_partition(config.window, np.random.default_rng(0), "fixed"),
        )
        self.data = encode_windows(arr, mean, std, config.n_coeffs)
        self.diffusion.coeff_bound = 1.2 * self.data.abs().amax(dim=0).double().numpy()
        self.optimizer = torch.optim.Adam(self.diffusion.denoiser.parameters(), lr=config.lr)
        self.ema = copy.deepcopy(self.diffusion.denoiser) if config.ema else None
        self.epoch = 0
        self.losses: list[float] = []
        log.info("denoiser parameters: %d", parameter_count(model_config))

    @property
    def model(self) -> Denoiser:
        return self.diffusion.denoiser

    def train_state(self) -> dict:
        state = {
            "config": self.config.to_dict(),
            "epoch": self.epoch,
            "losses": list(self.losses),
            "optimizer": self.optimizer.state_dict(),
            "rng_state": torch.get_rng_state(),
        }
        if self.ema is not None:
            state["ema_state"] = {k: v.clone() for k, v in self.ema.state_dict().items()}
        return state

    def save(self, path) -> None:
        if self.ema is not None:
            # the sampler reads the averaged weights; raw weights stay in train state
            raw = {k: v.clone() for k, v in self.model.state_dict().items()}
            state = self.train_state()
            state["raw_state"] = raw
            self.model.load_state_dict(self.ema.state_dict())
            save_checkpoint(path, self.diffusion, state)
            self.model.load_state_dict(raw)
        else:
            save_checkpoint(path, self.diffusion, self.train_state())

    @classmethod
    def resume(cls, path, windows, out_dir=None) -> "Trainer":
        bundle, state = load_checkpoint(path)
        config = TrainConfig.from_dict(state["config"])
        trainer = cls(windows, config, copy.deepcopy(bundle.config), out_dir,
                      bundle.skeleton, bundle.fps)
        trainer.model.load_state_dict(state.get("raw_state", bundle.denoiser.state_dict()))
        if trainer.ema is not None and "ema_state" in state:
            trainer.ema.load_state_dict(state["ema_state"])
        trainer.optimizer.load_state_dict(state["optimizer"])
        trainer.epoch = int(state["epoch"])
        trainer.losses = list(state["losses"])
        torch.set_rng_state(state["rng_state"])
        return trainer

    def run_epoch(self) -> float:
        cfg = self.config
        self.model.train()
        order = np.random.default_rng([cfg.seed, self.epoch]).permutation(len(self.data))
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = self.data[torch.from_numpy(order[start:start + cfg.batch_size])]
            loss = training_step(self.model, batch, self.diffusion.schedule, self.optimizer,
                                 grad_clip=cfg.grad_clip)
            if self.ema is not None:
                with torch.no_grad():
                    for pe, p in zip(self.ema.parameters(), self.model.parameters()):
                        pe.mul_(cfg.ema_decay).add_(p, alpha=1 - cfg.ema_decay)
            total += loss * batch.shape[0]
            count += batch.shape[0]
        self.model.eval()
        self.epoch += 1
        mean_loss = total / count
        self.losses.append(mean_loss)
        return mean_loss

    def fit(self, epochs: int | None = None) -> list[float]:
        """Train until ``epochs`` (default: config.epochs) total epochs are done."""
        target = self.config.epochs if epochs is None else epochs
        metrics = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            path = self.out_dir / "metrics.csv"
            new = not path.exists() or self.epoch == 0
            metrics = path.open("w" if new else "a", newline="")
            writer = csv.writer(metrics)
            if new:
                writer.writerow(["epoch", "loss", "wallclock"])
        t0 = time.time()
        try:
            while self.epoch < target:
                loss = self.run_epoch()
                if metrics is not None:
                    writer.writerow([self.epoch, repr(loss), f"{time.time() - t0:.3f}"])
                    metrics.flush()
                    if self.epoch % self.config.checkpoint_every == 0:
                        self.save(self.out_dir / f"ckpt_epoch{self.epoch:05d}.ckpt")
                log.debug("epoch %d loss %.5f", self.epoch, loss)
        finally:
            if metrics is not None:
                metrics.close()
        if self.out_dir is not None:
            self.save(self.out_dir / "model.ckpt")
        return self.losses


def train(windows, config: TrainConfig, model_config: ModelConfig | None = None, out_dir=None) -> MotionDiffusion:
    trainer = Trainer(windows, config, model_config, out_dir)
    trainer.fit()
    return trainer.diffusion
