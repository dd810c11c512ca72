"""
Training loops.

- train_e2vid / evaluate_e2vid: reconstructor training on voxel windows with
  L1 + SSIM loss, and held-out SSIM with carried versus zeroed state
- TGVFMTrainer: supervised backbone (+ TCFB) training on reconstructed
  sequences against generator ground truth
- DistillationTrainer: the same student trained against a frozen teacher
  that sees clean frames

Every run writes config.cfg, metrics.log, record.json, state.pt and the
model checkpoint into its run directory and can be resumed from state.pt.
"""

import math
import random
import time
from pathlib import Path
from typing import Any

import numpy as np
import torch

from backbone import ModelOutput, TGVFMBackbone, load_model, save_model
from datasets import SequenceDataset, SequenceTensors, WindowSampler
from e2vid import E2VIDLite, load_e2vid, reconstruction_loss, save_e2vid, ssim
from errors import ConfigurationError, DataNotFoundError
from event_synth import CLASS_NAMES
from logging_config import attach_run_log, detach_run_log, get_logger
from metrics import ConfusionMatrix, depth_metrics, disagreement_rate
from models import RunConfig, dump_run_config
from objectives import ce_loss_from_logits, distill_seg_l1, silog_loss
from runs import CONFIG_FILE, METRICS_FILE, STATE_FILE, MetricsLog, RunRecord

logger = get_logger(__name__)

MODEL_FILE = "model.tgv"
E2VID_FILE = "e2vid.e2v"
E2VID_HINT = "Train one with `tgvfm e2vid-train` and set e2vid.checkpoint."


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


def _elapsed_ms(start: float) -> float:
    return (time.perf_counter() - start) * 1000.0


# =============================================================================
# E2VID
# =============================================================================


@torch.no_grad()
def evaluate_e2vid(model: E2VIDLite, dataset: SequenceDataset, indices: list[int]) -> dict[str, float]:
    """
    Mean held-out SSIM per sequence, with the state carried and with the
    state reset to zero before every step.

    Frame 0 has no event window and is skipped.
    """
    model.eval()
    carried, zeroed = [], []
    for index in indices:
        seq = dataset[index]
        height, width = seq.inputs.shape[-2:]
        state = model.init_state(height, width)
        zero_state = model.init_state(height, width)
        scores_carried, scores_zero = [], []
        for t in range(seq.n_frames):
            voxel = seq.inputs[t : t + 1]
            frame, state = model(voxel, state)
            frame_zero, _ = model(voxel, zero_state)
            if t == 0:
                continue
            scores_carried.append(float(ssim(frame, seq.clean[t : t + 1])))
            scores_zero.append(float(ssim(frame_zero, seq.clean[t : t + 1])))
        carried.append(np.mean(scores_carried))
        zeroed.append(np.mean(scores_zero))
    model.train()
    return {"ssim": float(np.mean(carried)), "ssim_zero_state": float(np.mean(zeroed)), "sequences": len(indices)}


def train_e2vid(config: RunConfig, run_dir: str | Path) -> tuple[E2VIDLite, RunRecord]:
    """
    Train the reconstructor on voxel windows of the configured dataset.

    Each window starts from a zero state and unrolls e2vid.unroll steps;
    the loss is averaged over the steps.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    dump_run_config(config, run_dir / CONFIG_FILE)
    handler = attach_run_log(run_dir)
    try:
        seed_everything(config.seed)
        cfg = config.e2vid
        dataset = SequenceDataset(config.data.data_dir, "voxel", config.data.num_bins)
        train_idx, val_idx = dataset.split(config.data.val_fraction)
        n_frames = dataset[train_idx[0]].n_frames
        sampler = WindowSampler(train_idx, n_frames, cfg.unroll, config.seed)

        model = E2VIDLite(cfg.architecture(config.data.num_bins))
        optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
        metrics_log = MetricsLog(run_dir / METRICS_FILE)
        record = RunRecord(name=config.name, config=config.to_dict())

        logger.info(
            "Training E2VID",
            extra={"preset": cfg.preset, "iterations": cfg.iterations, "batch_size": cfg.batch_size},
        )
        start = time.perf_counter()
        for iteration in range(cfg.iterations):
            batch = sampler.batch(dataset, cfg.batch_size)
            height, width = batch.inputs.shape[-2:]
            state = model.init_state(height, width, cfg.batch_size)
            loss = batch.inputs.new_zeros(())
            for t in range(batch.inputs.shape[0]):
                frame, state = model(batch.inputs[t], state)
                loss = loss + reconstruction_loss(frame, batch.clean[t], cfg.ssim_weight)
            loss = loss / batch.inputs.shape[0]

            if iteration % cfg.log_interval == 0:
                values = {"loss": float(loss)}
                record.log_losses(iteration, values)
                metrics_log.append(iteration, "train", _elapsed_ms(start), values)
                logger.info("E2VID step", extra={"iteration": iteration, "loss": float(loss)})

            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

        ckpt = save_e2vid(model, run_dir / E2VID_FILE)
        record.add_artifact("checkpoint", ckpt)
        final = evaluate_e2vid(model, dataset, val_idx)
        metrics_log.append(cfg.iterations, "eval", _elapsed_ms(start), final)
        record.log_evaluation(cfg.iterations, final)
        record.finalize(final, _elapsed_ms(start))
        record.save(run_dir)
        logger.info("E2VID training finished", extra=final)
        return model, record
    finally:
        detach_run_log(handler)


# =============================================================================
# Backbone
# =============================================================================


class TGVFMTrainer:
    """
    Supervised training of the backbone (with or without TCFB).

    Losses are computed over an unrolled window with banks reset at its
    start; evaluation threads banks through whole held-out sequences.
    """

    def __init__(self, config: RunConfig, run_dir: str | Path, e2vid_model: E2VIDLite | None = None):
        self.config = config
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)

        seed_everything(config.seed)
        self.dataset = self._build_dataset(e2vid_model)
        self.train_idx, self.val_idx = self.dataset.split(config.data.val_fraction)
        n_frames = self.dataset[self.train_idx[0]].n_frames
        self.sampler = WindowSampler(self.train_idx, n_frames, config.data.unroll, config.seed)

        torch.manual_seed(config.seed)
        self.model = TGVFMBackbone(config.resolved_backbone(), config.tcfb if config.use_tcfb else None)
        self.optimizer = torch.optim.Adam(
            self.model.parameters(),
            lr=config.optim.lr,
            betas=config.optim.betas,
            weight_decay=config.optim.weight_decay,
        )
        self.metrics_log = MetricsLog(self.run_dir / METRICS_FILE)
        self.record = RunRecord(name=config.name, config=config.to_dict())
        self.start_iteration = 0
        self.elapsed_ms = 0.0

    def _build_dataset(self, e2vid_model: E2VIDLite | None) -> SequenceDataset:
        data = self.config.data
        if data.representation == "e2vid" and e2vid_model is None:
            if self.config.e2vid.checkpoint is None:
                raise DataNotFoundError("e2vid.checkpoint", E2VID_HINT)
            e2vid_model = load_e2vid(self.config.e2vid.checkpoint)
        return SequenceDataset(data.data_dir, data.representation, data.num_bins, e2vid_model)

    # ------------------------------------------------------------------ losses

    def _unroll(self, model: TGVFMBackbone, inputs: torch.Tensor) -> list[ModelOutput]:
        outputs, _ = model.forward_sequence(inputs, None, use_tcfb=self.config.use_tcfb)
        return outputs

    def compute_loss(self, batch: SequenceTensors) -> tuple[torch.Tensor, dict[str, float]]:
        outputs = self._unroll(self.model, batch.inputs)
        terms = []
        for t, out in enumerate(outputs):
            if self.config.task == "seg":
                terms.append(ce_loss_from_logits(out.seg_logits, batch.labels[t]))
            else:
                gt = batch.depth[t]
                terms.append(silog_loss(out.depth[:, 0], gt, gt > 0, self.config.silog))
        loss = torch.stack(terms).mean()
        return loss, {"loss": float(loss)}

    # -------------------------------------------------------------- evaluation

    @torch.no_grad()
    def evaluate(self, indices: list[int] | None = None) -> dict[str, Any]:
        indices = self.val_idx if indices is None else indices
        self.model.eval()
        n_classes = self.model.config.n_classes
        confusion = ConfusionMatrix(n_classes)
        preds, gts = [], []
        for index in indices:
            seq = self.dataset[index]
            outputs = self._unroll(self.model, seq.inputs.unsqueeze(1))
            for t, out in enumerate(outputs):
                if self.config.task == "seg":
                    confusion.update(out.seg_labels[0], seq.labels[t])
                else:
                    preds.append(out.depth[0, 0].numpy())
                    gts.append(seq.depth[t].numpy())
        self.model.train()

        if self.config.task == "seg":
            per_class, mean = confusion.iou()
            metrics: dict[str, Any] = {"miou": mean, "pixel_acc": confusion.pixel_accuracy()}
            for name, value in zip(CLASS_NAMES[:n_classes], per_class):
                metrics[f"iou_{name}"] = None if math.isnan(value) else value
            return metrics
        return depth_metrics(np.stack(preds), np.stack(gts)).to_dict()

    # ------------------------------------------------------------ persistence

    def save_state(self, iteration: int) -> Path:
        path = self.run_dir / STATE_FILE
        torch.save(
            {
                "iteration": iteration,
                "model": self.model.state_dict(),
                "optimizer": self.optimizer.state_dict(),
                "sampler": self.sampler.state(),
                "torch_rng": torch.get_rng_state(),
                "elapsed_ms": self.elapsed_ms,
            },
            path,
        )
        self.record.save(self.run_dir)
        logger.debug("Saved training state", extra={"iteration": iteration, "path": str(path)})
        return path

    def resume(self) -> int:
        """Restore state.pt and roll logs back to the checkpointed iteration."""
        path = self.run_dir / STATE_FILE
        if not path.exists():
            raise DataNotFoundError(path, "Nothing to resume; start the run without --resume.")
        state = torch.load(path, weights_only=False)
        self.model.load_state_dict(state["model"])
        self.optimizer.load_state_dict(state["optimizer"])
        self.sampler.set_state(state["sampler"])
        torch.set_rng_state(state["torch_rng"])
        self.elapsed_ms = state["elapsed_ms"]
        self.start_iteration = state["iteration"]

        self.record = RunRecord.load(self.run_dir)
        self.record.truncate_after(self.start_iteration - 1)
        self.metrics_log.truncate_after(self.start_iteration - 1)
        logger.info("Resumed run", extra={"iteration": self.start_iteration, "run_dir": str(self.run_dir)})
        return self.start_iteration

    # ---------------------------------------------------------------- training

    def _log_eval(self, iteration: int, wall_ms: float) -> dict[str, Any]:
        metrics = self.evaluate()
        self.record.log_evaluation(iteration, metrics)
        self.metrics_log.append(iteration, "eval", wall_ms, metrics)
        logger.info("Evaluation", extra={"iteration": iteration, **metrics})
        return metrics

    def train(self, resume: bool = False) -> RunRecord:
        """
        Run the configured number of iterations and finalize the record.

        Losses are logged before the optimizer step of their iteration, so
        iteration 0 reflects the untrained model.
        """
        cfg = self.config.train
        if resume:
            self.resume()
        else:
            # a fresh run replaces any earlier log in the same directory
            self.metrics_log.path.unlink(missing_ok=True)
        dump_run_config(self.config, self.run_dir / CONFIG_FILE)
        handler = attach_run_log(self.run_dir)
        try:
            logger.info(
                "Training backbone",
                extra={
                    "run": self.config.name,
                    "mode": self.config.mode,
                    "task": self.config.task,
                    "use_tcfb": self.config.use_tcfb,
                    "start": self.start_iteration,
                    "iterations": cfg.iterations,
                },
            )
            start = time.perf_counter() - self.elapsed_ms / 1000.0
            for iteration in range(self.start_iteration, cfg.iterations):
                batch = self.sampler.batch(self.dataset, cfg.batch_size)
                loss, values = self.compute_loss(batch)

                if iteration % cfg.log_interval == 0:
                    self.record.log_losses(iteration, values)
                    self.metrics_log.append(iteration, "train", _elapsed_ms(start), values)
                    logger.info("Train step", extra={"iteration": iteration, **values})
                if iteration % cfg.eval_interval == 0:
                    self._log_eval(iteration, _elapsed_ms(start))

                self.optimizer.zero_grad()
                loss.backward()
                self.optimizer.step()

                if (iteration + 1) % cfg.checkpoint_interval == 0:
                    self.elapsed_ms = _elapsed_ms(start)
                    self.save_state(iteration + 1)

            final = self._log_eval(cfg.iterations, _elapsed_ms(start))
            ckpt = save_model(self.model, self.run_dir / MODEL_FILE)
            self.record.add_artifact("checkpoint", ckpt)
            self.record.finalize(final, _elapsed_ms(start))
            self.record.save(self.run_dir)
            return self.record
        finally:
            detach_run_log(handler)


class DistillationTrainer(TGVFMTrainer):
    """
    Student on reconstructed input, teacher on clean frames.

    Segmentation is distilled with an L1 loss between probability maps,
    depth with SiLog against the teacher's predictions.
    """

    def __init__(self, config: RunConfig, run_dir: str | Path, e2vid_model: E2VIDLite | None = None):
        teacher_path = config.train.teacher_checkpoint
        if not teacher_path:
            raise ConfigurationError("distillation needs train.teacher_checkpoint")
        if not Path(teacher_path).exists():
            raise ConfigurationError(
                f"teacher checkpoint {teacher_path} not found; train one with data.representation=frames"
            )
        super().__init__(config, run_dir, e2vid_model)
        self.teacher = load_model(teacher_path)
        self.teacher.eval()
        for p in self.teacher.parameters():
            p.requires_grad_(False)

    @torch.no_grad()
    def _teacher_outputs(self, clean: torch.Tensor) -> list[ModelOutput]:
        outputs, _ = self.teacher.forward_sequence(clean, None, use_tcfb=self.teacher.has_tcfb)
        return outputs

    def compute_loss(self, batch: SequenceTensors) -> tuple[torch.Tensor, dict[str, float]]:
        student = self._unroll(self.model, batch.inputs)
        teacher = self._teacher_outputs(batch.clean)
        terms, disagreement = [], []
        for s_out, t_out in zip(student, teacher):
            if self.config.task == "seg":
                terms.append(distill_seg_l1(s_out.seg_probs, t_out.seg_probs))
                disagreement.append(disagreement_rate(s_out.seg_probs, t_out.seg_probs))
            else:
                terms.append(silog_loss(s_out.depth, t_out.depth, None, self.config.silog))
        loss = torch.stack(terms).mean()
        values = {"loss": float(loss)}
        if disagreement:
            values["disagreement"] = float(np.mean(disagreement))
        return loss, values

    @torch.no_grad()
    def evaluate(self, indices: list[int] | None = None) -> dict[str, Any]:
        metrics = super().evaluate(indices)
        if self.config.task != "seg":
            return metrics
        rates = []
        for index in self.val_idx if indices is None else indices:
            seq = self.dataset[index]
            student = self._unroll(self.model, seq.inputs.unsqueeze(1))
            teacher = self._teacher_outputs(seq.clean.unsqueeze(1))
            rates.extend(disagreement_rate(s.seg_probs, t.seg_probs) for s, t in zip(student, teacher))
        metrics["disagreement"] = float(np.mean(rates))
        return metrics


def train_supervised(
    config: RunConfig, run_dir: str | Path, resume: bool = False, e2vid_model: E2VIDLite | None = None
) -> RunRecord:
    return TGVFMTrainer(config, run_dir, e2vid_model).train(resume=resume)


def train_distilled(
    config: RunConfig, run_dir: str | Path, resume: bool = False, e2vid_model: E2VIDLite | None = None
) -> RunRecord:
    return DistillationTrainer(config, run_dir, e2vid_model).train(resume=resume)
