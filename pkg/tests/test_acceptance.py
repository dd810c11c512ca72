"""
Long-running end-to-end checks on the default 64x64 synthetic task.

Skipped unless TGVFM_RUN_SLOW=1; expect well over an hour on a desktop CPU.
"""

import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from ablation import run_ablation, sweep_memory_k
from datasets import simulate_dataset
from models import RunConfig
from trainer import train_e2vid

pytestmark = [
    pytest.mark.slow,
    pytest.mark.skipif(os.getenv("TGVFM_RUN_SLOW") != "1", reason="set TGVFM_RUN_SLOW=1 to run"),
]


@pytest.fixture(scope="module")
def base_config(tmp_path_factory):
    root = tmp_path_factory.mktemp("slow")
    data_dir = simulate_dataset(root / "synthetic", seed=0, n_sequences=24)
    return RunConfig().with_updates(
        {
            "data.data_dir": str(data_dir),
            "e2vid.iterations": 5000,
            "train.iterations": 2000,
            "train.eval_interval": 500,
            "train.checkpoint_interval": 500,
        }
    ), root


@pytest.fixture(scope="module")
def e2vid_run(base_config):
    config, root = base_config
    return train_e2vid(config, root / "e2vid")


def test_e2vid_reconstruction_quality(e2vid_run):
    _, record = e2vid_run
    assert record.final_metrics["ssim"] >= 0.6
    assert record.final_metrics["ssim_zero_state"] < record.final_metrics["ssim"]


def test_temporal_fusion_beats_baseline(base_config, e2vid_run):
    config, root = base_config
    model, _ = e2vid_run
    table, _ = run_ablation(config, root / "ablation", seeds=[0, 1, 2], e2vid_model=model)

    full = table.row("combination", "L+D+G")
    assert full["improvement"] >= 2.0
    for single in ("L", "D"):
        assert full["miou"] >= table.row("combination", single)["miou"] - 0.5


def test_memory_window_sweep(base_config, e2vid_run):
    config, root = base_config
    model, _ = e2vid_run
    table, _ = sweep_memory_k(config, [1, 2, 3, 4, 5], root / "sweep", e2vid_model=model)

    latencies = table.column("latency_ms")
    for before, after in zip(latencies, latencies[1:]):
        assert after >= 0.9 * before
    assert table.row("k", 3)["miou"] >= table.row("k", 1)["miou"]
