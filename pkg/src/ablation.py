"""
Ablation studies over TCFB components, memory window, zero initialization,
input representation, reconstructor size and parameter sharing.

Each study trains one run per configuration under <out_dir>/<study>/ and
returns a ResultTable; MIoU columns are percentages.
"""

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from datasets import SequenceDataset
from e2vid import E2VIDLite, param_count
from errors import ConfigurationError
from logging_config import get_logger
from models import RunConfig
from report import plot_loss_curves
from runs import RunRecord
from tcfb import shared_param_count
from trainer import TGVFMTrainer, train_e2vid

logger = get_logger(__name__)

# (label, use_lta, use_dsa, use_dfgm); guidance always has a consumer
COMPONENT_COMBINATIONS: list[tuple[str, bool, bool, bool]] = [
    ("none", False, False, False),
    ("L", True, False, False),
    ("L+G", True, False, True),
    ("D", False, True, False),
    ("D+G", False, True, True),
    ("L+D", True, True, False),
    ("L+D+G", True, True, True),
]
BASELINE_LABEL = "baseline"


@dataclass
class ResultTable:
    """Rows of results with a fixed column order."""

    title: str
    columns: list[str]
    rows: list[dict[str, Any]] = field(default_factory=list)

    def add_row(self, **values: Any) -> None:
        self.rows.append({c: values.get(c) for c in self.columns})

    def column(self, name: str) -> list[Any]:
        return [row[name] for row in self.rows]

    def row(self, key_column: str, key: Any) -> dict[str, Any]:
        for row in self.rows:
            if row[key_column] == key:
                return row
        raise KeyError(key)

    def to_dict(self) -> dict[str, Any]:
        return {"title": self.title, "columns": self.columns, "rows": self.rows}

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(self.columns)
            for row in self.rows:
                writer.writerow([_format(row[c]) for c in self.columns])
        return path

    def format_text(self) -> str:
        cells = [[_format(row[c]) for c in self.columns] for row in self.rows]
        widths = [max(len(c), *(len(r[i]) for r in cells)) for i, c in enumerate(self.columns)]
        lines = [self.title, "  ".join(c.ljust(w) for c, w in zip(self.columns, widths))]
        lines += ["  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in cells]
        return "\n".join(lines)


def _format(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.2f}"
    if isinstance(value, bool):
        return "yes" if value else "no"
    return "" if value is None else str(value)


def _train(
    config: RunConfig, run_dir: Path, e2vid_model: E2VIDLite | None = None
) -> tuple[RunRecord, TGVFMTrainer]:
    trainer = TGVFMTrainer(config, run_dir, e2vid_model)
    return trainer.train(), trainer


def _seeds(base: RunConfig, seeds: list[int] | None) -> list[int]:
    return list(seeds) if seeds else [base.seed]


def _require_seg(config: RunConfig) -> None:
    if config.task != "seg":
        raise ConfigurationError(f"studies are scored by MIoU and need task=seg, got {config.task}")


def run_ablation(
    base_config: RunConfig,
    out_dir: str | Path,
    seeds: list[int] | None = None,
    e2vid_model: E2VIDLite | None = None,
) -> tuple[ResultTable, list[RunRecord]]:
    """
    Train the no-TCFB baseline and the seven component combinations.

    MIoU is averaged over seeds; improvement is measured against the baseline.
    """
    _require_seg(base_config)
    out_dir = Path(out_dir) / "components"
    table = ResultTable("Ablation of TCFB components", ["combination", "lta", "dsa", "dfgm", "miou", "improvement"])
    records: list[RunRecord] = []

    arms: list[tuple[str, dict[str, Any]]] = [(BASELINE_LABEL, {"use_tcfb": False})]
    for label, lta, dsa, dfgm in COMPONENT_COMBINATIONS:
        arms.append((label, {"use_tcfb": True, "tcfb.use_lta": lta, "tcfb.use_dsa": dsa, "tcfb.use_dfgm": dfgm}))

    scores: dict[str, float] = {}
    for label, updates in arms:
        values = []
        for seed in _seeds(base_config, seeds):
            name = f"{label}_seed{seed}"
            config = base_config.with_updates({**updates, "seed": seed, "name": name})
            record, _ = _train(config, out_dir / name, e2vid_model)
            records.append(record)
            values.append(100.0 * record.final_metrics["miou"])
        scores[label] = float(np.mean(values))
        logger.info("Ablation arm finished", extra={"combination": label, "miou": scores[label]})

    baseline = scores[BASELINE_LABEL]
    table.add_row(combination=BASELINE_LABEL, lta=False, dsa=False, dfgm=False, miou=baseline, improvement=0.0)
    for label, lta, dsa, dfgm in COMPONENT_COMBINATIONS:
        table.add_row(
            combination=label, lta=lta, dsa=dsa, dfgm=dfgm, miou=scores[label], improvement=scores[label] - baseline
        )
    table.to_csv(out_dir / "ablation.csv")
    return table, records


@torch.no_grad()
def measure_latency(
    model: torch.nn.Module, dataset: SequenceDataset, indices: list[int], warmup: int = 2
) -> float:
    """Mean per-frame inference time in milliseconds, banks threaded through each sequence."""
    model.eval()
    timings = []
    for index in indices:
        banks = None
        for t, frame in enumerate(dataset[index].inputs):
            start = time.perf_counter()
            _, banks = model.forward_frame(frame.unsqueeze(0), banks)
            if t >= warmup:
                timings.append((time.perf_counter() - start) * 1000.0)
    model.train()
    return float(np.mean(timings)) if timings else 0.0


def sweep_memory_k(
    base_config: RunConfig,
    k_values: list[int],
    out_dir: str | Path,
    e2vid_model: E2VIDLite | None = None,
) -> tuple[ResultTable, list[RunRecord]]:
    """One run per memory window k; everything else is held fixed."""
    _require_seg(base_config)
    if not k_values:
        raise ValueError("k_values must not be empty")
    out_dir = Path(out_dir) / "memory_k"
    table = ResultTable("Effect of memory window size", ["k", "miou", "latency_ms"])
    records = []
    for k in k_values:
        config = base_config.with_updates({"tcfb.k": k, "use_tcfb": True, "name": f"k{k}"})
        record, trainer = _train(config, out_dir / f"k{k}", e2vid_model)
        latency = measure_latency(trainer.model, trainer.dataset, trainer.val_idx)
        records.append(record)
        table.add_row(k=k, miou=100.0 * record.final_metrics["miou"], latency_ms=latency)
        logger.info("Memory sweep point", extra={"k": k, "latency_ms": latency})
    table.to_csv(out_dir / "memory_k.csv")
    return table, records


def compare_zero_init(
    base_config: RunConfig, out_dir: str | Path, e2vid_model: E2VIDLite | None = None
) -> tuple[ResultTable, list[RunRecord]]:
    """Train with and without the zero-initialized output layer and plot both loss curves."""
    _require_seg(base_config)
    out_dir = Path(out_dir) / "zero_init"
    table = ResultTable("Zero initialization", ["zero_init", "initial_loss", "final_loss", "miou"])
    records = []
    for zero_init in (True, False):
        name = "zero_init" if zero_init else "default_init"
        config = base_config.with_updates({"tcfb.zero_init": zero_init, "use_tcfb": True, "name": name})
        record, _ = _train(config, out_dir / name, e2vid_model)
        records.append(record)
        _, losses = record.loss_curve()
        table.add_row(
            zero_init=zero_init,
            initial_loss=losses[0],
            final_loss=losses[-1],
            miou=100.0 * record.final_metrics["miou"],
        )
    plot_loss_curves(records, out_dir / "loss_curves.png", title="Zero-init vs default init")
    table.to_csv(out_dir / "zero_init.csv")
    return table, records


def compare_representations(
    base_config: RunConfig,
    out_dir: str | Path,
    representations: tuple[str, ...] = ("e2vid", "voxel", "time_surface"),
    e2vid_model: E2VIDLite | None = None,
) -> tuple[ResultTable, list[RunRecord]]:
    """Train the same model on different encodings of the event stream."""
    _require_seg(base_config)
    out_dir = Path(out_dir) / "representation"
    table = ResultTable("Event representation", ["representation", "in_channels", "miou"])
    records = []
    for representation in representations:
        config = base_config.with_updates({"data.representation": representation, "name": representation})
        record, trainer = _train(config, out_dir / representation, e2vid_model)
        records.append(record)
        table.add_row(
            representation=representation,
            in_channels=trainer.model.config.in_channels,
            miou=100.0 * record.final_metrics["miou"],
        )
    table.to_csv(out_dir / "representation.csv")
    return table, records


def compare_e2vid_presets(
    base_config: RunConfig,
    out_dir: str | Path,
    presets: tuple[str, ...] = ("B0", "B1", "B2", "B3", "B4"),
) -> tuple[ResultTable, list[RunRecord]]:
    """
    Train one reconstructor per preset, then the backbone on its output.

    Each row pairs the reconstructor's held-out SSIM with the MIoU of the
    backbone trained on its reconstructions.
    """
    _require_seg(base_config)
    if not presets:
        raise ValueError("presets must not be empty")
    out_dir = Path(out_dir) / "e2vid_presets"
    table = ResultTable("Reconstructor size", ["preset", "params_m", "ssim", "miou"])
    records = []
    for preset in presets:
        e2vid_config = base_config.with_updates({"e2vid.preset": preset, "name": f"e2vid_{preset}"})
        model, e2vid_record = train_e2vid(e2vid_config, out_dir / preset / "e2vid")
        config = base_config.with_updates({"data.representation": "e2vid", "name": f"backbone_{preset}"})
        record, _ = _train(config, out_dir / preset / "backbone", model)
        records += [e2vid_record, record]
        ssim = e2vid_record.final_metrics["ssim"]
        table.add_row(
            preset=preset,
            params_m=param_count(model.config) / 1e6,
            ssim=ssim,
            miou=100.0 * record.final_metrics["miou"],
        )
        logger.info("Preset finished", extra={"preset": preset, "ssim": ssim})
    table.to_csv(out_dir / "e2vid_presets.csv")
    return table, records


def sharing_table(base_config: RunConfig, site_counts: tuple[int, ...] = (1, 2, 3, 4)) -> ResultTable:
    """TCFB parameter counts with and without cross-site sharing."""
    backbone = base_config.resolved_backbone()
    table = ResultTable("Parameter sharing", ["n_sites", "unshared_m", "shared_m", "reduction_pct"])
    for n in site_counts:
        counts = {
            share: shared_param_count(
                n, share, backbone.channels, backbone.head_channels, backbone.guidance_stride, base_config.tcfb
            )
            for share in (False, True)
        }
        table.add_row(
            n_sites=n,
            unshared_m=counts[False] / 1e6,
            shared_m=counts[True] / 1e6,
            reduction_pct=100.0 * (1.0 - counts[True] / counts[False]),
        )
    return table
