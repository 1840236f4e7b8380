"""Masked DCT-domain diffusion for human motion completion, with virtual IMU synthesis."""

__version__ = "0.1.0"

from .dct import DctCoeffs, dct, idct
from .diffusion import MotionDiffusion, load_checkpoint, save_checkpoint
from .errors import MdcError
from .model import Denoiser, ModelConfig, parameter_count
from .motion import FrameRange, MotionSequence, Skeleton, h36m_skeleton, load_motion, save_motion
from .sampler import CompletionTask, complete_pair, sample_completion
from .schedule import NoiseSchedule, make_schedule
from .trainer import TrainConfig, Trainer, train

__all__ = [
    "CompletionTask", "DctCoeffs", "Denoiser", "FrameRange", "MdcError", "ModelConfig",
    "MotionDiffusion", "MotionSequence", "NoiseSchedule", "Skeleton", "TrainConfig", "Trainer",
    "complete_pair", "dct", "h36m_skeleton", "idct", "load_checkpoint", "load_motion",
    "make_schedule", "parameter_count", "sample_completion", "save_checkpoint", "save_motion",
    "train",
]
