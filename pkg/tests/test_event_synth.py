"""
Tests for scene generation, event simulation and event encodings.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from errors import ConfigurationError, ContractError, EventRangeError
from event_synth import (
    BACKGROUND_DEPTH_M,
    DISC,
    LOG_EPS,
    SQUARE_LEFT,
    SQUARE_RIGHT,
    Event,
    EventStream,
    SceneSequence,
    build_sequence,
    encode_time_surface,
    encode_voxel_grid,
    generate_scene,
    invert_intensity,
    simulate_events,
    voxelize_sequence,
)


def _two_object_config(square_vx: float = 1.0, disc_vx: float = 0.0) -> dict:
    return {
        "height": 32,
        "width": 32,
        "n_frames": 8,
        "objects": [
            {"kind": "square", "size": 2, "x": 15, "y": 8, "vx": square_vx, "vy": 0, "intensity": 0.85, "depth": 4.0},
            {"kind": "disc", "size": 2, "x": 25, "y": 25, "vx": disc_vx, "vy": 0, "intensity": 0.6, "depth": 7.0},
        ],
    }


def _random_stream(rng, n: int, sensor=(16, 16), window_us: int = 50_000) -> EventStream:
    return EventStream.from_unsorted(
        rng.integers(0, window_us, n),
        rng.integers(0, sensor[1], n),
        rng.integers(0, sensor[0], n),
        rng.choice([-1, 1], n),
        sensor,
    )


class TestGenerateScene:
    """Tests for the bouncing-object scene generator."""

    def test_deterministic_for_seed(self, tiny_scene_config):
        a = generate_scene(0, tiny_scene_config)
        b = generate_scene(0, tiny_scene_config)
        assert np.array_equal(a.frames, b.frames)
        assert np.array_equal(a.seg_labels, b.seg_labels)
        assert np.array_equal(a.depth_maps, b.depth_maps)

    def test_different_seeds_differ(self, tiny_scene_config):
        a = generate_scene(0, tiny_scene_config)
        b = generate_scene(1, tiny_scene_config)
        assert not np.array_equal(a.frames, b.frames)

    def test_static_scene_frames_identical(self):
        scene = generate_scene(0, _two_object_config(square_vx=0.0))
        for t in range(1, scene.n_frames):
            assert np.array_equal(scene.frames[t], scene.frames[0])

    def test_square_centroid_advances_one_pixel_per_frame(self):
        scene = generate_scene(0, _two_object_config(square_vx=1.0))
        centroids = []
        for t in range(scene.n_frames):
            ys, xs = np.nonzero(np.isin(scene.seg_labels[t], [SQUARE_RIGHT, SQUARE_LEFT]))
            centroids.append(xs.mean())
        assert np.allclose(np.diff(centroids), 1.0)

    def test_direction_label_follows_velocity_sign(self):
        right = generate_scene(0, _two_object_config(square_vx=1.0))
        left = generate_scene(0, _two_object_config(square_vx=-1.0))
        assert (right.seg_labels == SQUARE_RIGHT).any() and not (right.seg_labels == SQUARE_LEFT).any()
        assert (left.seg_labels == SQUARE_LEFT).any() and not (left.seg_labels == SQUARE_RIGHT).any()

    def test_depth_per_object_and_background(self):
        scene = generate_scene(0, _two_object_config())
        labels, depth = scene.seg_labels, scene.depth_maps
        assert np.all(depth[labels == 0] == BACKGROUND_DEPTH_M)
        assert np.all(depth[labels == DISC] == 7.0)
        assert np.all(depth[np.isin(labels, [SQUARE_RIGHT, SQUARE_LEFT])] == 4.0)

    def test_random_scenes_contain_direction_class(self, tiny_scene_config):
        scenes = [generate_scene(seed, tiny_scene_config) for seed in range(5)]
        assert any(np.isin(s.seg_labels, [SQUARE_RIGHT, SQUARE_LEFT]).any() for s in scenes)
        for scene in scenes:
            assert scene.frames.min() >= 0.0 and scene.frames.max() <= 1.0

    @pytest.mark.parametrize(
        "override",
        [{"height": 8, "width": 8}, {"n_frames": 4}, {"n_objects": 1}, {"objects": []}],
    )
    def test_invalid_config(self, tiny_scene_config, override):
        with pytest.raises(ConfigurationError):
            generate_scene(0, {**tiny_scene_config, **override})


class TestSimulateEvents:
    """Tests for the contrast-threshold event simulator."""

    def test_static_scene_emits_nothing(self):
        scene = generate_scene(0, _two_object_config(square_vx=0.0))
        assert len(simulate_events(scene)) == 0

    def test_single_pixel_step(self):
        """A log step of 2.5 thresholds gives two +1 events at 40% and 80% of the interval."""
        frames = np.full((2, 16, 16), 0.5)
        frames[1, 3, 4] = (0.5 + LOG_EPS) * np.exp(2.5 * 0.2) - LOG_EPS
        scene = SceneSequence(frames, np.zeros((2, 16, 16), np.uint8), np.zeros((2, 16, 16)), 50.0)

        events = simulate_events(scene, 0.2)

        assert len(events) == 2
        assert list(events.x) == [4, 4] and list(events.y) == [3, 3]
        assert list(events.p) == [1, 1]
        assert list(events.t) == [20_000, 40_000]

    def test_inversion_flips_polarity(self, tiny_scene_config):
        scene = generate_scene(2, tiny_scene_config)
        events = simulate_events(scene)
        inverted = simulate_events(invert_intensity(scene))

        assert len(events) > 0
        assert np.array_equal(events.t, inverted.t)
        assert np.array_equal(events.x, inverted.x)
        assert np.array_equal(events.y, inverted.y)
        assert np.array_equal(events.p, -inverted.p)

    def test_timestamps_monotone(self, tiny_scene_config):
        events = build_sequence(5, tiny_scene_config).events
        assert np.all(np.diff(events.t) >= 0)

    def test_deterministic(self, tiny_scene_config):
        a = build_sequence(4, tiny_scene_config).events
        b = build_sequence(4, tiny_scene_config).events
        assert a.equals(b)

    def test_threshold_must_be_positive(self, tiny_scene_config):
        with pytest.raises(ConfigurationError):
            simulate_events(generate_scene(0, tiny_scene_config), 0.0)


class TestEventStream:
    """Tests for EventStream invariants."""

    def test_canonical_order_for_equal_timestamps(self):
        events = [Event(10, 3, 2, 1), Event(10, 1, 2, -1), Event(5, 0, 0, 1), Event(10, 0, 1, 1)]
        stream = EventStream.from_events(events, (4, 4))
        assert list(stream.t) == [5, 10, 10, 10]
        assert list(zip(stream.y, stream.x)) == [(0, 0), (1, 0), (2, 1), (2, 3)]

    def test_rejects_bad_polarity(self):
        with pytest.raises(ContractError):
            EventStream.from_events([Event(0, 0, 0, 0)], (4, 4))

    def test_rejects_out_of_bounds(self):
        with pytest.raises(ContractError):
            EventStream([0], [4], [0], [1], (4, 4))

    def test_rejects_decreasing_timestamps(self):
        with pytest.raises(ContractError):
            EventStream([5, 3], [0, 0], [0, 0], [1, 1], (4, 4))

    def test_slice_is_half_open(self):
        stream = EventStream([0, 10, 20, 30], [0, 0, 0, 0], [0, 0, 0, 0], [1, -1, 1, 1], (4, 4))
        window = stream.slice(10, 30)
        assert list(window.t) == [10, 20]
        assert window.signed_count() == 0


class TestVoxelGrid:
    """Tests for encode_voxel_grid."""

    def test_empty_slice(self):
        grid = encode_voxel_grid(EventStream.empty((8, 8)), (8, 8))
        assert grid.bins.shape == (5, 8, 8)
        assert not grid.bins.any()

    def test_bilinear_split(self):
        """t* = 1.25 with 5 bins puts 0.75 in bin 1 and 0.25 in bin 2."""
        t = int(1.25 / 4 * 50_000)
        stream = EventStream([t], [2], [3], [1], (8, 8))
        grid = encode_voxel_grid(stream, (8, 8), window_ms=50.0, num_bins=5)
        assert grid.bins[1, 3, 2] == pytest.approx(0.75)
        assert grid.bins[2, 3, 2] == pytest.approx(0.25)
        assert grid.bins.sum() == pytest.approx(1.0)

    def test_mass_conservation(self):
        rng = np.random.default_rng(0)
        for n in (1, 100, 10_000):
            stream = _random_stream(rng, n)
            grid = encode_voxel_grid(stream, stream.sensor_size)
            assert abs(grid.bins.sum() - stream.signed_count()) <= 1e-5

    def test_offset_window(self):
        stream = EventStream([100_000], [0], [0], [-1], (4, 4))
        grid = encode_voxel_grid(stream, (4, 4), window_ms=50.0, num_bins=3, t0_us=100_000)
        assert grid.bins[0, 0, 0] == -1.0

    def test_event_outside_window(self):
        stream = EventStream([50_000], [0], [0], [1], (4, 4))
        with pytest.raises(EventRangeError):
            encode_voxel_grid(stream, (4, 4), window_ms=50.0)

    def test_needs_two_bins(self):
        with pytest.raises(ConfigurationError):
            encode_voxel_grid(EventStream.empty((4, 4)), (4, 4), num_bins=1)

    def test_to_tensor_shape(self):
        grid = encode_voxel_grid(EventStream.empty((8, 4)), (8, 4), num_bins=3)
        assert tuple(grid.to_tensor().shape) == (3, 8, 4)


class TestTimeSurface:
    """Tests for encode_time_surface."""

    def test_decay_and_channels(self):
        stream = EventStream([25_000, 40_000], [1, 2], [0, 0], [1, -1], (4, 4))
        surface = encode_time_surface(stream, (4, 4), window_ms=50.0, tau_ms=25.0)
        assert surface[0, 0, 1] == pytest.approx(np.exp(-1.0))
        assert surface[1, 0, 2] == pytest.approx(np.exp(-10.0 / 25.0))
        assert surface[1, 0, 1] == 0.0

    def test_latest_event_wins(self):
        stream = EventStream([0, 45_000], [1, 1], [1, 1], [1, 1], (4, 4))
        surface = encode_time_surface(stream, (4, 4))
        assert surface[0, 1, 1] == pytest.approx(np.exp(-5.0 / 25.0))


class TestVoxelizeSequence:
    """Tests for per-frame encoding of a whole stream."""

    def test_shapes_and_first_frame(self, tiny_scene_config):
        seq = build_sequence(0, tiny_scene_config)
        grids = voxelize_sequence(seq.events, seq.scene.n_frames, seq.scene.frame_period_ms, 5)
        assert grids.shape == (8, 5, 16, 16)
        assert not grids[0].any()

    def test_total_mass(self, tiny_scene_config):
        seq = build_sequence(1, tiny_scene_config)
        period = seq.scene.frame_period_ms
        grids = voxelize_sequence(seq.events, seq.scene.n_frames, period, 5)
        covered = seq.events.slice(0, (seq.scene.n_frames - 1) * period * 1000.0)
        assert abs(grids.sum() - covered.signed_count()) <= 1e-5 * max(1, len(covered) / 1e4)

    def test_time_surface_channels(self, tiny_scene_config):
        seq = build_sequence(0, tiny_scene_config)
        surfaces = voxelize_sequence(seq.events, 8, seq.scene.frame_period_ms, representation="time_surface")
        assert surfaces.shape == (8, 2, 16, 16)
        assert surfaces.min() >= 0.0 and surfaces.max() <= 1.0
