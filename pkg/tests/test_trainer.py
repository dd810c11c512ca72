"""
Tests for the training loops: run artifacts, determinism, resume and distillation.
"""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from datasets import SequenceDataset
from errors import ConfigurationError, DataNotFoundError
from logging_config import RUN_LOG_NAME
from runs import CONFIG_FILE, METRICS_FILE, RECORD_FILE, STATE_FILE, MetricsLog, RunRecord
from trainer import (
    E2VID_FILE,
    MODEL_FILE,
    DistillationTrainer,
    TGVFMTrainer,
    evaluate_e2vid,
    train_distilled,
    train_e2vid,
    train_supervised,
)


class CrashingTrainer(TGVFMTrainer):
    """Fails on the fifth loss computation, after the iteration-3 checkpoint."""

    crash_at = 5

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.calls = 0

    def compute_loss(self, batch):
        self.calls += 1
        if self.calls == self.crash_at:
            raise RuntimeError("simulated crash")
        return super().compute_loss(batch)


class TestSupervisedRun:
    """Artifacts and logging of a supervised run."""

    def test_run_directory(self, tmp_path, tiny_run_config):
        record = train_supervised(tiny_run_config, tmp_path / "run")
        for name in (CONFIG_FILE, METRICS_FILE, RECORD_FILE, STATE_FILE, MODEL_FILE, RUN_LOG_NAME):
            assert (tmp_path / "run" / name).exists(), name
        assert record.finalized
        assert 0.0 <= record.final_metrics["miou"] <= 1.0
        assert RunRecord.load(tmp_path / "run") == record

    def test_logging_schedule(self, tmp_path, tiny_run_config):
        record = train_supervised(tiny_run_config, tmp_path / "run")
        assert [e["iteration"] for e in record.losses] == [0, 1, 2, 3, 4, 5]
        assert [e["iteration"] for e in record.evaluations] == [0, 3, 6]
        kinds = [(r["iteration"], r["kind"]) for r in MetricsLog(tmp_path / "run" / METRICS_FILE).read()]
        assert kinds[:2] == [(0, "train"), (0, "eval")]
        assert kinds[-1] == (6, "eval")

    def test_deterministic_metrics_log(self, tmp_path, tiny_run_config):
        train_supervised(tiny_run_config, tmp_path / "a")
        train_supervised(tiny_run_config, tmp_path / "b")
        a = MetricsLog(tmp_path / "a" / METRICS_FILE).read(strip_timing=True)
        b = MetricsLog(tmp_path / "b" / METRICS_FILE).read(strip_timing=True)
        assert a == b

    def test_zero_init_tcfb_starts_at_baseline_loss(self, tmp_path, tiny_run_config):
        base = tiny_run_config.with_updates({"use_tcfb": False, "train.iterations": 1})
        fused = tiny_run_config.with_updates({"use_tcfb": True, "train.iterations": 1})
        base_record = train_supervised(base, tmp_path / "base")
        fused_record = train_supervised(fused, tmp_path / "fused")
        assert fused_record.losses[0]["loss"] == base_record.losses[0]["loss"]
        assert fused_record.evaluations[0]["iteration"] == 0
        assert fused_record.evaluations[0]["miou"] == base_record.evaluations[0]["miou"]
        assert fused_record.evaluations[0] == base_record.evaluations[0]

    def test_depth_task(self, tmp_path, tiny_run_config):
        config = tiny_run_config.with_updates({"task": "depth", "train.iterations": 2})
        record = train_supervised(config, tmp_path / "depth")
        assert set(record.final_metrics) == {"delta1", "delta2", "delta3", "rel", "rms", "rmslog"}

    def test_missing_dataset(self, tmp_path, tiny_run_config):
        config = tiny_run_config.with_updates({"data.data_dir": str(tmp_path / "nowhere")})
        with pytest.raises(DataNotFoundError):
            TGVFMTrainer(config, tmp_path / "run")

    def test_e2vid_input_needs_checkpoint(self, tmp_path, tiny_run_config):
        config = tiny_run_config.with_updates({"data.representation": "e2vid"})
        with pytest.raises(DataNotFoundError):
            TGVFMTrainer(config, tmp_path / "run")


class TestResume:
    """Crash and resume from state.pt."""

    def test_resume_matches_uninterrupted_run(self, tmp_path, tiny_run_config):
        reference = train_supervised(tiny_run_config, tmp_path / "reference")

        with pytest.raises(RuntimeError, match="simulated crash"):
            CrashingTrainer(tiny_run_config, tmp_path / "crashed").train()
        resumed = train_supervised(tiny_run_config, tmp_path / "crashed", resume=True)

        assert [e["iteration"] for e in resumed.losses] == [0, 1, 2, 3, 4, 5]
        for a, b in zip(resumed.losses, reference.losses):
            assert a["loss"] == pytest.approx(b["loss"], abs=1e-6)
        assert resumed.final_metrics["miou"] == pytest.approx(reference.final_metrics["miou"], abs=1e-6)
        log = MetricsLog(tmp_path / "crashed" / METRICS_FILE).read()
        assert [r["iteration"] for r in log if r["kind"] == "train"] == [0, 1, 2, 3, 4, 5]

    def test_resume_without_state(self, tmp_path, tiny_run_config):
        with pytest.raises(DataNotFoundError):
            train_supervised(tiny_run_config, tmp_path / "fresh", resume=True)


class TestDistillation:
    """Student against a frozen teacher."""

    def test_needs_teacher(self, tmp_path, tiny_run_config):
        with pytest.raises(ConfigurationError):
            DistillationTrainer(tiny_run_config, tmp_path / "student")

    def test_teacher_must_exist(self, tmp_path, tiny_run_config):
        config = tiny_run_config.with_updates({"train.teacher_checkpoint": str(tmp_path / "missing.tgv")})
        with pytest.raises(ConfigurationError):
            DistillationTrainer(config, tmp_path / "student")

    def test_student_identical_to_teacher_has_no_loss(self, tmp_path, tiny_run_config):
        frozen = tiny_run_config.with_updates({"optim.lr": 0.0, "train.iterations": 1})
        train_supervised(frozen, tmp_path / "teacher")
        config = frozen.with_updates(
            {
                "mode": "distilled",
                "train.iterations": 3,
                "train.teacher_checkpoint": str(tmp_path / "teacher" / MODEL_FILE),
            }
        )
        record = train_distilled(config, tmp_path / "student")
        losses = [e["loss"] for e in record.losses]
        assert losses == pytest.approx([0.0] * 3, abs=1e-5)
        assert all(e["disagreement"] == pytest.approx(0.0, abs=0.01) for e in record.losses)
        assert "disagreement" in record.final_metrics

    def test_student_moves_toward_teacher(self, tmp_path, tiny_run_config):
        teacher = tiny_run_config.with_updates(
            {"optim.lr": 1e-2, "train.iterations": 20, "train.eval_interval": 100, "train.checkpoint_interval": 100}
        )
        train_supervised(teacher, tmp_path / "teacher")
        config = tiny_run_config.with_updates(
            {
                "mode": "distilled",
                "seed": 1,
                "optim.lr": 1e-2,
                "train.iterations": 25,
                "train.log_interval": 8,
                "train.eval_interval": 100,
                "train.checkpoint_interval": 100,
                "train.teacher_checkpoint": str(tmp_path / "teacher" / MODEL_FILE),
            }
        )
        record = train_distilled(config, tmp_path / "student")
        first, last = record.losses[0], record.losses[-1]
        assert [e["iteration"] for e in record.losses] == [0, 8, 16, 24]
        assert last["loss"] < first["loss"]
        assert last["disagreement"] < first["disagreement"]
        assert record.final_metrics["disagreement"] < record.evaluations[0]["disagreement"]


class TestE2VIDTraining:
    """Reconstructor training and reconstructed-input runs."""

    def test_train_and_reuse(self, tmp_path, tiny_run_config):
        model, record = train_e2vid(tiny_run_config, tmp_path / "e2vid")
        assert (tmp_path / "e2vid" / E2VID_FILE).exists()
        assert [e["iteration"] for e in record.losses] == [0, 1]
        assert -1.0 <= record.final_metrics["ssim"] <= 1.0
        assert "ssim_zero_state" in record.final_metrics

        config = tiny_run_config.with_updates({"data.representation": "e2vid", "train.iterations": 2})
        trainer = TGVFMTrainer(config, tmp_path / "backbone", e2vid_model=model)
        assert trainer.model.config.in_channels == 1
        assert trainer.train().finalized

    def test_evaluate_held_out(self, tmp_path, tiny_run_config):
        model, record = train_e2vid(tiny_run_config, tmp_path / "e2vid")
        data = tiny_run_config.data
        dataset = SequenceDataset(data.data_dir, "voxel", model.config.num_bins)
        _, val_idx = dataset.split(data.val_fraction)
        metrics = evaluate_e2vid(model, dataset, val_idx)
        assert metrics["sequences"] == len(val_idx)
        assert metrics["ssim"] == pytest.approx(record.final_metrics["ssim"])
        assert model.training
