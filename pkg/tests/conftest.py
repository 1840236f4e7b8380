import numpy as np
import pytest
import torch

from mdcnet.dataset import synthetic_motions
from mdcnet.model import ModelConfig
from mdcnet.motion import MotionSequence, h36m_skeleton
from mdcnet.trainer import TrainConfig, Trainer

TOY_MODEL = dict(latent_dim=16, n_heads=2, ff_dim=32, n_blocks=2, dropout=0.0, n_time_scales=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def seq125(rng):
    return MotionSequence(rng.normal(size=(125, 17, 3)), 50.0, h36m_skeleton())


def toy_trainer(window=30, epochs=2, steps=10, count=16, seed=0, out_dir=None, **model_kw):
    cfg = TrainConfig(epochs=epochs, batch_size=8, steps=steps, window=window, seed=seed,
                      checkpoint_every=1)
    model = ModelConfig(**{**TOY_MODEL, **model_kw})
    trainer = Trainer(synthetic_motions(seed, count, n_frames=window), cfg, model, out_dir)
    trainer.fit()
    return trainer


@pytest.fixture(scope="session")
def toy_diffusion():
    """Briefly trained 30-frame model with T=10; quality is irrelevant."""
    torch.set_num_threads(1)
    return toy_trainer().diffusion


@pytest.fixture(scope="session")
def toy_ckpt_125(tmp_path_factory):
    """Checkpoint of a 125-frame toy model, for CLI and pipeline tests."""
    out = tmp_path_factory.mktemp("toy125")
    toy_trainer(window=125, epochs=1, steps=10, count=8, out_dir=out)
    return out / "model.ckpt"


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    """Record one PASS/FAIL line per acceptance criterion."""

    def report(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
