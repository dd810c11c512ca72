"""
Shared pytest fixtures for the tgvfm test suite.
"""

import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from datasets import simulate_dataset  # noqa: E402
from models import RunConfig  # noqa: E402

TINY_SCENE = {
    "height": 16,
    "width": 16,
    "n_frames": 8,
    "n_objects": 2,
    "min_size": 2,
    "max_size": 4,
    "min_speed": 1.0,
    "max_speed": 2.0,
}

TINY_BACKBONE = {
    "n_blocks": 2,
    "channels": 8,
    "n_heads": 2,
    "patch_size": 4,
    "n_tcfb_sites": 2,
    "head_channels": 4,
    "guidance_stride": 2,
    "mlp_ratio": 2,
}


@pytest.fixture
def tiny_scene_config():
    """A 16x16, 8-frame, two-object scene."""
    return dict(TINY_SCENE)


@pytest.fixture
def tiny_backbone_config():
    """2-block, 8-channel backbone on 16x16 frames with a 4x4 token grid."""
    return {"height": 16, "width": 16, **TINY_BACKBONE}


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory):
    """Four simulated 16x16 sequences, shared by every test in the session."""
    root = tmp_path_factory.mktemp("data") / "synthetic"
    return simulate_dataset(root, seed=0, n_sequences=4, scene_config=TINY_SCENE)


@pytest.fixture
def tiny_run_config(tiny_dataset_dir):
    """Seg run on clean frames with a 2-block backbone; seconds per run."""
    return RunConfig.model_validate(
        {
            "seed": 0,
            "name": "tiny",
            "task": "seg",
            "data": {
                "data_dir": str(tiny_dataset_dir),
                "n_sequences": 4,
                "scene": TINY_SCENE,
                "representation": "frames",
                "unroll": 4,
            },
            "e2vid": {"preset": "B0", "iterations": 2, "batch_size": 1, "unroll": 4, "log_interval": 1},
            "backbone": TINY_BACKBONE,
            "tcfb": {"k": 2},
            "optim": {"lr": 1e-3},
            "train": {
                "iterations": 6,
                "batch_size": 2,
                "log_interval": 1,
                "eval_interval": 3,
                "checkpoint_interval": 3,
            },
        }
    )


@pytest.fixture
def fd_check():
    """
    Central finite-difference check of d loss / d tensor[index] for a few
    entries of a float64 tensor that requires grad.

    Returns the worst relative error over the checked entries.
    """

    def check(loss_fn, tensor: torch.Tensor, n_entries: int = 3, eps: float = 1e-6, seed: int = 0) -> float:
        tensor.grad = None
        loss = loss_fn()
        (grad,) = torch.autograd.grad(loss, tensor)
        gen = torch.Generator().manual_seed(seed)
        flat = tensor.detach().view(-1)
        worst = 0.0
        picks = torch.randperm(flat.numel(), generator=gen)[:n_entries]
        for i in picks.tolist():
            original = flat[i].item()
            with torch.no_grad():
                flat[i] = original + eps
                up = loss_fn().item()
                flat[i] = original - eps
                down = loss_fn().item()
                flat[i] = original
            numeric = (up - down) / (2 * eps)
            analytic = grad.view(-1)[i].item()
            scale = max(abs(numeric), abs(analytic), 1e-6)
            worst = max(worst, abs(numeric - analytic) / scale)
        return worst

    return check
