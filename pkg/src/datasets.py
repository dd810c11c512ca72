"""
On-disk synthetic datasets and training window sampling.

A dataset directory holds one scene archive per sequence (seq_0000, ...),
each with an events.bin next to its manifest, plus dataset.yaml describing
how it was generated.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal

import numpy as np
import torch
import yaml
from joblib import Parallel, delayed

from config_validator import coerce_model
from errors import ConfigurationError, ContractError, DataNotFoundError
from event_synth import (
    DEFAULT_CONTRAST_THRESHOLD,
    DEFAULT_NUM_BINS,
    EVENTS_FILE,
    SceneConfig,
    build_sequence,
    load_events,
    load_scene_archive,
    save_events,
    save_scene_archive,
    voxelize_sequence,
)
from logging_config import get_logger

logger = get_logger(__name__)

DATASET_MANIFEST = "dataset.yaml"
DATASET_FORMAT = "dataset v1"
SIMULATE_HINT = "Generate it with `tgvfm simulate --out <dir>`."

Representation = Literal["e2vid", "frames", "voxel", "time_surface"]


def _sequence_dir(root: Path, index: int) -> Path:
    return root / f"seq_{index:04d}"


def _write_sequence(root: Path, index: int, seed: int, scene_config: SceneConfig, threshold: float) -> str:
    simulated = build_sequence(seed, scene_config, threshold)
    directory = save_scene_archive(simulated.scene, _sequence_dir(root, index))
    save_events(simulated.events, directory / EVENTS_FILE)
    return directory.name


def simulate_dataset(
    out_dir: str | Path,
    seed: int = 0,
    n_sequences: int = 24,
    scene_config: SceneConfig | dict[str, Any] | None = None,
    contrast_threshold: float = DEFAULT_CONTRAST_THRESHOLD,
    n_jobs: int = 1,
) -> Path:
    """
    Generate n_sequences scenes with seeds seed, seed + 1, ... and their events.

    Output is identical for any n_jobs.
    """
    if n_sequences < 1:
        raise ConfigurationError(f"n_sequences must be >= 1, got {n_sequences}")
    scene_config = coerce_model(SceneConfig, scene_config if scene_config is not None else {}, path="scene")
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)

    names = Parallel(n_jobs=n_jobs)(
        delayed(_write_sequence)(root, i, seed + i, scene_config, contrast_threshold) for i in range(n_sequences)
    )

    manifest = {
        "format": DATASET_FORMAT,
        "seed": seed,
        "n_sequences": n_sequences,
        "contrast_threshold": contrast_threshold,
        "scene": scene_config.model_dump(),
        "sequences": list(names),
    }
    with open(root / DATASET_MANIFEST, "w") as f:
        yaml.safe_dump(manifest, f, sort_keys=True)

    logger.info(
        "Simulated dataset",
        extra={"out_dir": str(root), "sequences": n_sequences, "seed": seed, "n_jobs": n_jobs},
    )
    return root


def load_dataset_manifest(data_dir: str | Path) -> dict[str, Any]:
    path = Path(data_dir) / DATASET_MANIFEST
    if not path.exists():
        raise DataNotFoundError(path, SIMULATE_HINT)
    with open(path) as f:
        manifest = yaml.safe_load(f)
    if manifest.get("format") != DATASET_FORMAT:
        raise ContractError(f"{path}: unsupported format {manifest.get('format')!r}")
    return manifest


@dataclass
class SequenceTensors:
    """One sequence as tensors, time first."""

    inputs: torch.Tensor  # (T, C, H, W) model input
    clean: torch.Tensor  # (T, 1, H, W) ground-truth intensity
    labels: torch.Tensor  # (T, H, W) class indices
    depth: torch.Tensor  # (T, H, W) metres, 0 = invalid

    @property
    def n_frames(self) -> int:
        return self.inputs.shape[0]

    def window(self, start: int, length: int) -> "SequenceTensors":
        end = start + length
        return SequenceTensors(
            self.inputs[start:end], self.clean[start:end], self.labels[start:end], self.depth[start:end]
        )


def stack_windows(windows: list[SequenceTensors]) -> SequenceTensors:
    """Stack along a batch axis after time: (T, B, ...)."""
    return SequenceTensors(
        inputs=torch.stack([w.inputs for w in windows], dim=1),
        clean=torch.stack([w.clean for w in windows], dim=1),
        labels=torch.stack([w.labels for w in windows], dim=1),
        depth=torch.stack([w.depth for w in windows], dim=1),
    )


class SequenceDataset:
    """
    Sequences of a simulated dataset encoded for one input representation.

    e2vid inputs are reconstructed once with the given model (carrying its
    state across the whole sequence) and cached.
    """

    def __init__(
        self,
        data_dir: str | Path,
        representation: Representation = "e2vid",
        num_bins: int = DEFAULT_NUM_BINS,
        e2vid_model=None,
        dtype: torch.dtype = torch.float32,
    ):
        self.data_dir = Path(data_dir)
        self.manifest = load_dataset_manifest(self.data_dir)
        self.representation = representation
        self.num_bins = num_bins
        self.e2vid_model = e2vid_model
        self.dtype = dtype
        if representation == "e2vid" and e2vid_model is None:
            raise ConfigurationError("representation 'e2vid' needs a reconstruction model")
        self._cache: dict[int, SequenceTensors] = {}

    def __len__(self) -> int:
        return len(self.manifest["sequences"])

    @property
    def in_channels(self) -> int:
        return {"voxel": self.num_bins, "time_surface": 2}.get(self.representation, 1)

    def split(self, val_fraction: float) -> tuple[list[int], list[int]]:
        """Leading sequences train, trailing ones validate."""
        n_val = max(1, int(np.ceil(len(self) * val_fraction)))
        if n_val >= len(self):
            raise ConfigurationError(f"val_fraction {val_fraction} leaves no training sequences")
        return list(range(len(self) - n_val)), list(range(len(self) - n_val, len(self)))

    def _encode(self, index: int) -> SequenceTensors:
        directory = self.data_dir / self.manifest["sequences"][index]
        if not directory.exists():
            raise DataNotFoundError(directory, SIMULATE_HINT)
        scene = load_scene_archive(directory)
        clean = torch.as_tensor(scene.frames, dtype=self.dtype).unsqueeze(1)

        if self.representation == "frames":
            inputs = clean
        else:
            events = load_events(directory / EVENTS_FILE)
            encoding = "time_surface" if self.representation == "time_surface" else "voxel"
            grids = voxelize_sequence(events, scene.n_frames, scene.frame_period_ms, self.num_bins, encoding)
            inputs = torch.as_tensor(grids, dtype=self.dtype)
            if self.representation == "e2vid":
                inputs = reconstruct_sequence(self.e2vid_model, inputs)

        return SequenceTensors(
            inputs=inputs,
            clean=clean,
            labels=torch.as_tensor(scene.seg_labels, dtype=torch.long),
            depth=torch.as_tensor(scene.depth_maps, dtype=self.dtype),
        )

    def __getitem__(self, index: int) -> SequenceTensors:
        if index not in self._cache:
            self._cache[index] = self._encode(index)
        return self._cache[index]


@torch.no_grad()
def reconstruct_sequence(model, voxels: torch.Tensor) -> torch.Tensor:
    """Run the reconstructor over (T, C, H, W) voxels with carried state; returns (T, 1, H, W)."""
    dtype = next(model.parameters()).dtype
    voxels = voxels.to(dtype)
    state = model.init_state(voxels.shape[-2], voxels.shape[-1], batch_size=1)
    frames = []
    for voxel in voxels:
        frame, state = model(voxel.unsqueeze(0), state)
        frames.append(frame[0])
    return torch.stack(frames)


class WindowSampler:
    """Draws (sequence, start) windows from a seeded generator whose state can be saved."""

    def __init__(self, indices: list[int], n_frames: int, unroll: int, seed: int):
        if not indices:
            raise ConfigurationError("sampler needs at least one sequence")
        if unroll > n_frames:
            raise ConfigurationError(f"unroll {unroll} exceeds sequence length {n_frames}")
        self.indices = list(indices)
        self.n_frames = n_frames
        self.unroll = unroll
        self.rng = np.random.default_rng(seed)

    def sample(self, batch_size: int) -> list[tuple[int, int]]:
        seqs = self.rng.choice(self.indices, size=batch_size)
        starts = self.rng.integers(0, self.n_frames - self.unroll + 1, size=batch_size)
        return [(int(s), int(t)) for s, t in zip(seqs, starts)]

    def batch(self, dataset: SequenceDataset, batch_size: int) -> SequenceTensors:
        return stack_windows([dataset[s].window(t, self.unroll) for s, t in self.sample(batch_size)])

    def state(self) -> dict[str, Any]:
        return self.rng.bit_generator.state

    def set_state(self, state: dict[str, Any]) -> None:
        self.rng.bit_generator.state = state
