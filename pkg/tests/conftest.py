import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from scgan.data import SyntheticTask, generate_synthetic  # noqa: E402
from scgan.trainer import TrainConfig  # noqa: E402


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("tiny_data")
    generate_synthetic(SyntheticTask("channel-swap", n_train=6, n_test=4, size=64, seed=3), root, overwrite=True)
    return root


@pytest.fixture
def tiny_config(tiny_dataset, tmp_path) -> TrainConfig:
    """A narrow network so multi-step training tests run in seconds."""
    return TrainConfig(
        data_root=str(tiny_dataset),
        checkpoint_dir=str(tmp_path / "run"),
        image_size=64,
        epochs=4,
        batch_size=2,
        n_res_blocks=1,
        gen_width=8,
        disc_width=8,
        pool_size=3,
        seed=11,
        n_samples=2,
    )


@pytest.fixture
def rand_images():
    def make(b=2, s=64, seed=0, dtype=torch.float32):
        g = torch.Generator().manual_seed(seed)
        return (torch.rand(b, 3, s, s, generator=g, dtype=dtype) * 2 - 1)

    return make


@pytest.fixture(scope="session")
def steps_dataset(tmp_path_factory) -> Path:
    """20 images per domain: 10 steps per epoch at batch 2."""
    root = tmp_path_factory.mktemp("steps_data")
    generate_synthetic(SyntheticTask("channel-swap", n_train=20, n_test=2, size=64, seed=5), root, overwrite=True)
    return root


def steps_config(data_root, checkpoint_dir, **kw) -> TrainConfig:
    base = dict(
        data_root=str(data_root), checkpoint_dir=str(checkpoint_dir), image_size=64, epochs=20,
        batch_size=2, n_res_blocks=1, gen_width=8, disc_width=8, pool_size=5, seed=7,
        diffaug="color,translation,cutout", n_samples=2,
    )
    base.update(kw)
    return TrainConfig(**base)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
