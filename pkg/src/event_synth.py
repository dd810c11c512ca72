"""
Synthetic scenes, contrast-threshold event simulation and event encodings.

Scenes are small bouncing-object sequences with per-pixel segmentation labels
and metric depth. One class is "direction-coded": squares that look identical
in every frame but are labelled by their horizontal motion over the last three
frames, so a single frame cannot resolve them and temporal fusion has headroom.

Events follow the usual contrast-threshold model on log intensity: a pixel
fires each time log(I + eps) moves a whole threshold away from the level at
which it last fired.
"""

import struct
from collections.abc import Iterator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

import imageio.v3 as iio
import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from config_validator import coerce_model
from errors import ConfigurationError, ContractError, DataNotFoundError, EventRangeError
from logging_config import get_logger

logger = get_logger(__name__)

LOG_EPS = 1e-3
DEFAULT_CONTRAST_THRESHOLD = 0.2
DEFAULT_NUM_BINS = 5
DEFAULT_WINDOW_MS = 50.0
BACKGROUND_DEPTH_M = 20.0
DIRECTION_SQUARE_INTENSITY = 0.85

BACKGROUND, DISC, SQUARE_RIGHT, SQUARE_LEFT = 0, 1, 2, 3
CLASS_NAMES = ("background", "disc", "square_right", "square_left")

TEXT_HEADER = "evt v1"
BINARY_MAGIC = b"EVT1"
_BINARY_HEADER = struct.Struct("<4sIIQ")
_BINARY_RECORD = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])

SCENE_MANIFEST = "manifest.yaml"
SCENE_FORMAT = "scene v1"
EVENTS_FILE = "events.bin"


# =============================================================================
# Configuration
# =============================================================================


class ObjectSpec(BaseModel):
    """One scene object; positions in pixels, velocities in pixels per frame."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["disc", "square"]
    size: int = Field(..., ge=1, description="half extent (square) or radius (disc)")
    x: float
    y: float
    vx: float = 0.0
    vy: float = 0.0
    intensity: float = Field(0.7, ge=0.0, le=1.0)
    depth: float = Field(5.0, gt=0.0)


class SceneConfig(BaseModel):
    """Scene generator parameters."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    height: int = 64
    width: int = 64
    n_frames: int = 16
    n_objects: int = 3
    frame_period_ms: float = Field(DEFAULT_WINDOW_MS, gt=0.0)
    min_size: int = Field(4, ge=1)
    max_size: int = Field(8, ge=1)
    min_speed: float = Field(0.5, ge=0.0)
    max_speed: float = Field(2.0, ge=0.0)
    min_depth: float = Field(2.0, gt=0.0)
    max_depth: float = Field(10.0, gt=0.0)
    objects: list[ObjectSpec] | None = None

    @model_validator(mode="after")
    def _check_ranges(self) -> "SceneConfig":
        if self.height < 16 or self.width < 16:
            raise ValueError(f"resolution must be at least 16x16, got {self.height}x{self.width}")
        if self.n_frames < 8:
            raise ValueError(f"n_frames must be >= 8, got {self.n_frames}")
        n_objects = len(self.objects) if self.objects is not None else self.n_objects
        if n_objects < 2:
            raise ValueError(f"scene needs at least 2 objects, got {n_objects}")
        if self.min_size > self.max_size:
            raise ValueError("min_size must be <= max_size")
        if self.min_speed > self.max_speed:
            raise ValueError("min_speed must be <= max_speed")
        if self.min_depth > self.max_depth or self.max_depth >= BACKGROUND_DEPTH_M:
            raise ValueError(f"object depths must satisfy min <= max < {BACKGROUND_DEPTH_M}")
        sizes = [o.size for o in self.objects] if self.objects is not None else [self.max_size]
        if 2 * max(sizes) + 2 > min(self.height, self.width):
            raise ValueError("objects do not fit inside the frame")
        return self


# =============================================================================
# Domain types
# =============================================================================


@dataclass(frozen=True)
class Event:
    """A single brightness-change event."""

    t: int
    x: int
    y: int
    p: int

    def validate(self, sensor_size: tuple[int, int]) -> None:
        height, width = sensor_size
        if self.t < 0:
            raise ContractError(f"event timestamp must be non-negative, got {self.t}")
        if not (0 <= self.x < width and 0 <= self.y < height):
            raise ContractError(f"event ({self.x}, {self.y}) outside sensor {width}x{height}")
        if self.p not in (1, -1):
            raise ContractError(f"event polarity must be +1 or -1, got {self.p}")


@dataclass
class EventStream:
    """
    Column-oriented event stream.

    Sorted by timestamp, ties broken by (y, x, p). Timestamps are integer
    microseconds.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    sensor_size: tuple[int, int]

    def __post_init__(self) -> None:
        self.t = np.asarray(self.t, dtype=np.int64)
        self.x = np.asarray(self.x, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.p = np.asarray(self.p, dtype=np.int8)
        self.sensor_size = (int(self.sensor_size[0]), int(self.sensor_size[1]))
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ContractError("event columns must have equal length")
        if n == 0:
            return
        height, width = self.sensor_size
        if self.t.min() < 0:
            raise ContractError("event timestamps must be non-negative")
        if self.x.min() < 0 or self.x.max() >= width or self.y.min() < 0 or self.y.max() >= height:
            raise ContractError(f"event coordinates outside sensor {width}x{height}")
        if not np.all(np.abs(self.p) == 1):
            raise ContractError("event polarity must be +1 or -1")
        if np.any(np.diff(self.t) < 0):
            raise ContractError("event timestamps must be non-decreasing")

    @classmethod
    def empty(cls, sensor_size: tuple[int, int]) -> "EventStream":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0), sensor_size)

    @classmethod
    def from_unsorted(cls, t, x, y, p, sensor_size) -> "EventStream":
        """Build a stream from unordered columns, applying the canonical order."""
        t, x, y, p = (np.asarray(a) for a in (t, x, y, p))
        order = np.lexsort((p, x, y, t))
        return cls(t[order], x[order], y[order], p[order], sensor_size)

    @classmethod
    def from_events(cls, events: list[Event], sensor_size: tuple[int, int]) -> "EventStream":
        for event in events:
            event.validate(sensor_size)
        cols = [[getattr(e, name) for e in events] for name in ("t", "x", "y", "p")]
        return cls.from_unsorted(*cols, sensor_size)

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def slice(self, t_start: float, t_end: float) -> "EventStream":
        """Events with t_start <= t < t_end."""
        lo = np.searchsorted(self.t, t_start, side="left")
        hi = np.searchsorted(self.t, t_end, side="left")
        return EventStream(self.t[lo:hi], self.x[lo:hi], self.y[lo:hi], self.p[lo:hi], self.sensor_size)

    def signed_count(self) -> int:
        return int(self.p.astype(np.int64).sum())

    def equals(self, other: "EventStream") -> bool:
        return (
            self.sensor_size == other.sensor_size
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
        )


@dataclass
class SceneSequence:
    """Rendered scene: intensities, labels and depth per frame."""

    frames: np.ndarray  # (T, H, W) float64 in [0, 1]
    seg_labels: np.ndarray  # (T, H, W) uint8 class indices
    depth_maps: np.ndarray  # (T, H, W) float64 metres, 0 = invalid
    frame_period_ms: float
    class_names: tuple[str, ...] = CLASS_NAMES
    seed: int | None = None

    def __post_init__(self) -> None:
        if not (self.frames.shape == self.seg_labels.shape == self.depth_maps.shape):
            raise ContractError("frames, labels and depth must share one resolution")
        if self.frames.ndim != 3:
            raise ContractError(f"expected (T, H, W) arrays, got {self.frames.shape}")
        if np.any(self.depth_maps < 0):
            raise ContractError("depth must be 0 (invalid) or strictly positive")
        if np.any(self.seg_labels >= len(self.class_names)):
            raise ContractError("label outside class range")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def sensor_size(self) -> tuple[int, int]:
        return (self.frames.shape[1], self.frames.shape[2])

    def frame_times_us(self) -> np.ndarray:
        return np.arange(self.n_frames, dtype=np.float64) * self.frame_period_ms * 1000.0


@dataclass
class VoxelGrid:
    """Temporal bilinear binning of one event window, stored (C, H, W)."""

    bins: np.ndarray
    window_ms: float
    t0_us: float = 0.0

    @property
    def num_bins(self) -> int:
        return self.bins.shape[0]

    def to_tensor(self, dtype=None):
        import torch

        return torch.as_tensor(self.bins, dtype=dtype or torch.float32)


# =============================================================================
# Scene generation
# =============================================================================


def _random_objects(rng: np.random.Generator, config: SceneConfig) -> list[ObjectSpec]:
    """Object 0 is always a direction-coded square, object 1 always a disc."""
    objects = []
    for index in range(config.n_objects):
        kind = "square" if index == 0 else "disc" if index == 1 else str(rng.choice(["square", "disc"]))
        size = int(rng.integers(config.min_size, config.max_size + 1))
        x = float(rng.uniform(size, config.width - 1 - size))
        y = float(rng.uniform(size, config.height - 1 - size))
        speed = float(rng.uniform(config.min_speed, config.max_speed))
        heading = float(rng.uniform(0.0, 2.0 * np.pi))
        intensity = (
            DIRECTION_SQUARE_INTENSITY if kind == "square" else float(rng.uniform(0.5, 0.75))
        )
        objects.append(
            ObjectSpec(
                kind=kind,
                size=size,
                x=x,
                y=y,
                vx=speed * np.cos(heading),
                vy=speed * np.sin(heading),
                intensity=intensity,
                depth=float(rng.uniform(config.min_depth, config.max_depth)),
            )
        )
    return objects


def _bounce(pos: float, vel: float, low: float, high: float) -> tuple[float, float]:
    pos += vel
    if pos < low:
        pos, vel = 2 * low - pos, -vel
    elif pos > high:
        pos, vel = 2 * high - pos, -vel
    return pos, vel


def _track(spec: ObjectSpec, n_frames: int, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer pixel centres (T, 2) as (x, y) and horizontal velocity per frame."""
    centres = np.zeros((n_frames, 2), dtype=np.int64)
    vxs = np.zeros(n_frames)
    x, y, vx, vy = spec.x, spec.y, spec.vx, spec.vy
    for t in range(n_frames):
        if t > 0:
            x, vx = _bounce(x, vx, spec.size, width - 1 - spec.size)
            y, vy = _bounce(y, vy, spec.size, height - 1 - spec.size)
        centres[t] = (int(np.floor(x + 0.5)), int(np.floor(y + 0.5)))
        vxs[t] = vx
    return centres, vxs


def _direction_label(centres: np.ndarray, vxs: np.ndarray, t: int) -> int:
    """Label of a direction-coded square from its motion over frames t-2..t."""
    dx = centres[t, 0] - centres[max(t - 2, 0), 0]
    if dx == 0:
        dx = vxs[t]
    return SQUARE_RIGHT if dx >= 0 else SQUARE_LEFT


def _background(height: int, width: int) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width]
    return 0.3 + 0.08 * np.sin(2 * np.pi * xx / 16.0) * np.cos(2 * np.pi * yy / 16.0)


def generate_scene(seed: int, config: SceneConfig | dict[str, Any] | None = None) -> SceneSequence:
    """
    Render a deterministic bouncing-object sequence.

    Objects translate with their own velocity and reflect off the frame
    border; nearer objects occlude farther ones.
    """
    config = coerce_model(SceneConfig, config if config is not None else {}, path="scene")
    rng = np.random.default_rng(seed)
    objects = list(config.objects) if config.objects is not None else _random_objects(rng, config)

    height, width, n_frames = config.height, config.width, config.n_frames
    frames = np.repeat(_background(height, width)[None], n_frames, axis=0)
    labels = np.zeros((n_frames, height, width), dtype=np.uint8)
    depth = np.full((n_frames, height, width), BACKGROUND_DEPTH_M)

    yy, xx = np.mgrid[0:height, 0:width]
    # far to near so that nearer objects overwrite
    for spec in sorted(objects, key=lambda o: -o.depth):
        centres, vxs = _track(spec, n_frames, height, width)
        for t in range(n_frames):
            cx, cy = centres[t]
            if spec.kind == "square":
                mask = (np.abs(xx - cx) <= spec.size) & (np.abs(yy - cy) <= spec.size)
                label = _direction_label(centres, vxs, t)
            else:
                mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= spec.size**2
                label = DISC
            frames[t][mask] = spec.intensity
            labels[t][mask] = label
            depth[t][mask] = spec.depth

    logger.debug(
        "Generated scene",
        extra={"seed": seed, "frames": n_frames, "objects": len(objects), "size": f"{height}x{width}"},
    )
    return SceneSequence(
        frames=np.clip(frames, 0.0, 1.0),
        seg_labels=labels,
        depth_maps=depth,
        frame_period_ms=config.frame_period_ms,
        seed=seed,
    )


def invert_intensity(scene: SceneSequence) -> SceneSequence:
    """
    Photometric inversion in the log domain.

    Maps I in [0, 1] onto [1, 0] such that log(I' + eps) = log(eps (1 + eps)) - log(I + eps),
    so every log-intensity change is negated exactly.
    """
    inverted = LOG_EPS * (1.0 + LOG_EPS) / (scene.frames + LOG_EPS) - LOG_EPS
    return SceneSequence(
        frames=inverted,
        seg_labels=scene.seg_labels.copy(),
        depth_maps=scene.depth_maps.copy(),
        frame_period_ms=scene.frame_period_ms,
        class_names=scene.class_names,
        seed=scene.seed,
    )


# =============================================================================
# Event simulation
# =============================================================================


def simulate_events(
    scene: SceneSequence, contrast_threshold: float = DEFAULT_CONTRAST_THRESHOLD
) -> EventStream:
    """
    Emit events from a rendered scene with an ideal contrast-threshold pixel.

    Log intensity is interpolated linearly between frames; each crossing of
    ref + n * threshold emits one event at the interpolated crossing time and
    moves the pixel's reference level to the crossed level.
    """
    if not contrast_threshold > 0:
        raise ConfigurationError(f"contrast_threshold must be > 0, got {contrast_threshold}")

    log_frames = np.log(scene.frames.astype(np.float64) + LOG_EPS)
    reference = log_frames[0].copy()
    times = scene.frame_times_us()
    period_us = scene.frame_period_ms * 1000.0

    columns: dict[str, list[np.ndarray]] = {"t": [], "x": [], "y": [], "p": []}
    for k in range(scene.n_frames - 1):
        l0, l1 = log_frames[k], log_frames[k + 1]
        diff = l1 - reference
        n_cross = np.floor(np.abs(diff) / contrast_threshold).astype(np.int64)
        ys, xs = np.nonzero(n_cross)
        if len(ys) == 0:
            continue

        sign = np.sign(diff[ys, xs])
        counts = n_cross[ys, xs]
        ref_px = reference[ys, xs]
        start, span = l0[ys, xs], (l1 - l0)[ys, xs]
        for i in range(1, int(counts.max()) + 1):
            sel = counts >= i
            level = ref_px[sel] + sign[sel] * i * contrast_threshold
            frac = np.clip((level - start[sel]) / span[sel], 0.0, 1.0)
            columns["t"].append(np.floor(times[k] + frac * period_us + 0.5).astype(np.int64))
            columns["x"].append(xs[sel])
            columns["y"].append(ys[sel])
            columns["p"].append(sign[sel].astype(np.int8))

        reference[ys, xs] = ref_px + sign * counts * contrast_threshold

    if not columns["t"]:
        return EventStream.empty(scene.sensor_size)
    stream = EventStream.from_unsorted(
        *(np.concatenate(columns[name]) for name in ("t", "x", "y", "p")), scene.sensor_size
    )
    logger.debug(
        "Simulated events",
        extra={"seed": scene.seed, "events": len(stream), "threshold": contrast_threshold},
    )
    return stream


# =============================================================================
# Encodings
# =============================================================================


def _check_window(events: EventStream, t0_us: float, window_us: float) -> None:
    if len(events) == 0:
        return
    outside = (events.t < t0_us) | (events.t >= t0_us + window_us)
    if outside.any():
        first = int(events.t[outside][0])
        raise EventRangeError(
            f"event at t={first}us outside window [{t0_us}, {t0_us + window_us})"
        )


def encode_voxel_grid(
    events: EventStream,
    sensor_size: tuple[int, int],
    window_ms: float = DEFAULT_WINDOW_MS,
    num_bins: int = DEFAULT_NUM_BINS,
    t0_us: float = 0.0,
) -> VoxelGrid:
    """
    Bin a window of events into num_bins temporal channels.

    Each event's polarity is split linearly between the two bins adjacent to
    t* = (t - t0) / window * (num_bins - 1); spatial placement is exact, so
    the grid's signed sum equals the signed event count.
    """
    if num_bins < 2:
        raise ConfigurationError(f"num_bins must be >= 2, got {num_bins}")
    height, width = sensor_size
    window_us = window_ms * 1000.0
    bins = np.zeros((num_bins, height, width), dtype=np.float64)
    _check_window(events, t0_us, window_us)
    if len(events) == 0:
        return VoxelGrid(bins, window_ms, t0_us)

    t_norm = (events.t - t0_us) / window_us * (num_bins - 1)
    left = np.floor(t_norm).astype(np.int64)
    frac = t_norm - left
    pol = events.p.astype(np.float64)

    np.add.at(bins, (left, events.y, events.x), pol * (1.0 - frac))
    right = frac > 0
    np.add.at(bins, (left[right] + 1, events.y[right], events.x[right]), pol[right] * frac[right])
    return VoxelGrid(bins, window_ms, t0_us)


def encode_time_surface(
    events: EventStream,
    sensor_size: tuple[int, int],
    window_ms: float = DEFAULT_WINDOW_MS,
    t0_us: float = 0.0,
    tau_ms: float = 25.0,
) -> np.ndarray:
    """
    Two-channel (positive, negative) time surface at the end of the window.

    Each pixel holds exp(-(t_end - t_last) / tau) of its latest event of that
    polarity, or 0 if it did not fire.
    """
    height, width = sensor_size
    window_us = window_ms * 1000.0
    surface = np.zeros((2, height, width), dtype=np.float64)
    _check_window(events, t0_us, window_us)
    if len(events) == 0:
        return surface
    decay = np.exp(-((t0_us + window_us) - events.t) / (tau_ms * 1000.0))
    channel = (events.p < 0).astype(np.int64)
    np.maximum.at(surface, (channel, events.y, events.x), decay)
    return surface


def voxelize_sequence(
    stream: EventStream,
    n_frames: int,
    frame_period_ms: float,
    num_bins: int = DEFAULT_NUM_BINS,
    representation: Literal["voxel", "time_surface"] = "voxel",
) -> np.ndarray:
    """
    Encode the window [t_k - period, t_k) for every frame k.

    Frame 0 has no preceding window and gets an all-zero encoding.
    Returns (T, C, H, W) with C = num_bins for voxels and 2 for time surfaces.
    """
    channels = num_bins if representation == "voxel" else 2
    out = np.zeros((n_frames, channels, *stream.sensor_size), dtype=np.float64)
    period_us = frame_period_ms * 1000.0
    for k in range(1, n_frames):
        t0 = (k - 1) * period_us
        window = stream.slice(t0, t0 + period_us)
        if representation == "voxel":
            out[k] = encode_voxel_grid(window, stream.sensor_size, frame_period_ms, num_bins, t0).bins
        else:
            out[k] = encode_time_surface(window, stream.sensor_size, frame_period_ms, t0)
    return out


# =============================================================================
# Event files
# =============================================================================


def write_events_text(stream: EventStream, path: str | Path) -> None:
    height, width = stream.sensor_size
    with open(path, "w") as f:
        f.write(f"{TEXT_HEADER} {height} {width}\n")
        for t, x, y, p in zip(stream.t, stream.x, stream.y, stream.p):
            f.write(f"{t} {x} {y} {int(p):+d}\n")


def read_events_text(path: str | Path) -> EventStream:
    with open(path) as f:
        header = f.readline().split()
        if header[:2] != TEXT_HEADER.split() or len(header) != 4:
            raise ContractError(f"{path}: not an '{TEXT_HEADER}' event file")
        sensor_size = (int(header[2]), int(header[3]))
        rows = [line.split() for line in f if line.strip()]
    if not rows:
        return EventStream.empty(sensor_size)
    data = np.array(rows, dtype=np.int64)
    return EventStream(data[:, 0], data[:, 1], data[:, 2], data[:, 3], sensor_size)


def write_events_binary(stream: EventStream, path: str | Path) -> None:
    height, width = stream.sensor_size
    records = np.empty(len(stream), dtype=_BINARY_RECORD)
    records["t"], records["x"], records["y"], records["p"] = stream.t, stream.x, stream.y, stream.p
    with open(path, "wb") as f:
        f.write(_BINARY_HEADER.pack(BINARY_MAGIC, height, width, len(stream)))
        f.write(records.tobytes())


def read_events_binary(path: str | Path) -> EventStream:
    with open(path, "rb") as f:
        magic, height, width, count = _BINARY_HEADER.unpack(f.read(_BINARY_HEADER.size))
        if magic != BINARY_MAGIC:
            raise ContractError(f"{path}: bad magic {magic!r}, expected {BINARY_MAGIC!r}")
        records = np.frombuffer(f.read(count * _BINARY_RECORD.itemsize), dtype=_BINARY_RECORD)
    if len(records) != count:
        raise ContractError(f"{path}: truncated, expected {count} events, got {len(records)}")
    return EventStream(records["t"], records["x"], records["y"], records["p"], (height, width))


def save_events(stream: EventStream, path: str | Path) -> None:
    """Write text for *.txt paths, binary otherwise."""
    if Path(path).suffix == ".txt":
        write_events_text(stream, path)
    else:
        write_events_binary(stream, path)


def load_events(path: str | Path) -> EventStream:
    path = Path(path)
    if not path.exists():
        raise DataNotFoundError(path, "Generate events with `tgvfm simulate --out <dir>`.")
    return read_events_text(path) if path.suffix == ".txt" else read_events_binary(path)


# =============================================================================
# Scene archives
# =============================================================================


def save_scene_archive(scene: SceneSequence, directory: str | Path) -> Path:
    """
    Write frames (16-bit PNG), labels (8-bit PNG) and depth (16-bit PNG, mm)
    plus a manifest.
    """
    directory = Path(directory)
    for sub in ("frames", "labels", "depth"):
        (directory / sub).mkdir(parents=True, exist_ok=True)

    for t in range(scene.n_frames):
        name = f"{t:06d}.png"
        gray = np.floor(scene.frames[t] * 65535.0 + 0.5).astype(np.uint16)
        depth_mm = np.floor(scene.depth_maps[t] * 1000.0 + 0.5).astype(np.uint16)
        iio.imwrite(directory / "frames" / name, gray)
        iio.imwrite(directory / "labels" / name, scene.seg_labels[t].astype(np.uint8))
        iio.imwrite(directory / "depth" / name, depth_mm)

    manifest = {
        "format": SCENE_FORMAT,
        "frame_period_ms": float(scene.frame_period_ms),
        "class_names": list(scene.class_names),
        "n_frames": scene.n_frames,
        "height": scene.sensor_size[0],
        "width": scene.sensor_size[1],
        "seed": scene.seed,
    }
    with open(directory / SCENE_MANIFEST, "w") as f:
        yaml.safe_dump(manifest, f, sort_keys=True)
    return directory


def load_scene_archive(directory: str | Path) -> SceneSequence:
    directory = Path(directory)
    manifest_path = directory / SCENE_MANIFEST
    if not manifest_path.exists():
        raise DataNotFoundError(manifest_path, "Generate scenes with `tgvfm simulate --out <dir>`.")
    with open(manifest_path) as f:
        manifest = yaml.safe_load(f)
    if manifest.get("format") != SCENE_FORMAT:
        raise ContractError(f"{manifest_path}: unsupported format {manifest.get('format')!r}")

    names = [f"{t:06d}.png" for t in range(manifest["n_frames"])]
    frames = np.stack([iio.imread(directory / "frames" / n) for n in names]).astype(np.float64)
    labels = np.stack([iio.imread(directory / "labels" / n) for n in names]).astype(np.uint8)
    depth = np.stack([iio.imread(directory / "depth" / n) for n in names]).astype(np.float64)
    return SceneSequence(
        frames=frames / 65535.0,
        seg_labels=labels,
        depth_maps=depth / 1000.0,
        frame_period_ms=float(manifest["frame_period_ms"]),
        class_names=tuple(manifest["class_names"]),
        seed=manifest.get("seed"),
    )


@dataclass
class SimulatedSequence:
    """A scene together with its event stream."""

    scene: SceneSequence
    events: EventStream
    extras: dict[str, Any] = field(default_factory=dict)


def build_sequence(
    seed: int,
    scene_config: SceneConfig | dict[str, Any] | None = None,
    contrast_threshold: float = DEFAULT_CONTRAST_THRESHOLD,
) -> SimulatedSequence:
    scene = generate_scene(seed, scene_config)
    return SimulatedSequence(scene=scene, events=simulate_events(scene, contrast_threshold))
