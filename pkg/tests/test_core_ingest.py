import json
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from frame2video.core import (
    colorize, compute_direction_map, content_checksum, decode_colors, flow_to_polar,
    off_palette_pixels, polar_to_flow
)
from frame2video.errors import (
    DatasetLoadError, FlowFormatError, InvalidInputError, PaletteMissError, ParameterError
)
from frame2video.ingest import (
    build_sample, load_dataset, load_palette, load_test_labels, make_training_samples, read_flo,
    read_labels, resize_flow, resize_frame, save_palette, write_flo, write_labels, write_semantic_png
)
from frame2video.models import (
    AnomalyKind, AnomalySpec, ClassPalette, Clip, FlowField, ModelConfig, ScoreConfig, SemanticFrame, Split
)


# Fixtures

@pytest.fixture
def palette():
    """Load the shipped palette"""
    return load_palette(Path(__file__).parent.parent / "data" / "palette.json")


@pytest.fixture
def class_map():
    rng = np.random.default_rng(3)
    return rng.integers(0, 8, size=(16, 16))


def make_clip(palette, num_frames, size=8, labels=None):
    """Clip with one person pixel moving right by one pixel per frame"""
    frames, flows = [], []
    for t in range(num_frames):
        grid = np.zeros((size, size), dtype=np.int64)
        grid[2, t % size] = 1
        frames.append(colorize(grid, palette, frame_index=t))
    for t in range(num_frames - 1):
        uv = np.zeros((size, size, 2), dtype=np.float32)
        uv[2, t % size, 0] = 1.0
        flows.append(FlowField(uv=uv))
    return Clip(clip_id="clip", frames=frames, flows=flows, labels=labels)


def write_clip_dir(root, split, clip_id, palette, num_frames=4, size=8, labels=True):
    clip = make_clip(palette, num_frames, size)
    clip_dir = root / split / clip_id
    (clip_dir / "semantic").mkdir(parents=True)
    (clip_dir / "flow").mkdir()
    for frame in clip.frames:
        write_semantic_png(clip_dir / "semantic" / f"{frame.frame_index:06d}.png", frame)
    for t, flow in enumerate(clip.flows):
        write_flo(clip_dir / "flow" / f"{t:06d}.flo", flow)
    if labels:
        write_labels(clip_dir / "labels.csv", np.zeros(num_frames, dtype=np.int8))
    return clip_dir


@pytest.fixture
def dataset_root(tmp_path, palette):
    save_palette(tmp_path / "palette.json", palette)
    write_clip_dir(tmp_path, "train", "a", palette, labels=False)
    write_clip_dir(tmp_path, "test", "b", palette)
    return tmp_path


# Unit Tests - Models

class TestModels:
    """Test pydantic domain types and configs"""

    def test_default_palette_matches_shipped_file(self, palette):
        assert palette == ClassPalette.default()
        assert palette.color_of(0) == (0.0, 0.0, 0.0)
        assert palette.color_of(1) == (0.0, 1.0, 0.0)
        assert len(palette.entries) == 8

    def test_palette_rejects_duplicate_colors(self):
        with pytest.raises(ValidationError):
            ClassPalette.from_records([
                {"class_id": 0, "class_name": "background", "color": [0, 0, 0]},
                {"class_id": 1, "class_name": "a", "color": [0, 0, 0]},
            ])

    def test_palette_requires_black_background(self):
        with pytest.raises(ValidationError):
            ClassPalette.from_records([
                {"class_id": 0, "class_name": "background", "color": [10, 0, 0]},
                {"class_id": 1, "class_name": "a", "color": [0, 255, 0]},
            ])

    def test_model_config_default_halvings(self):
        cfg = ModelConfig()
        assert cfg.num_stages == 5
        assert cfg.latent_channels == 512
        assert cfg.sm_in_channels == 5
        assert cfg.of_in_channels == 2

    def test_model_config_tiny(self):
        cfg = ModelConfig.tiny()
        assert cfg.image_size == 32
        assert cfg.stage_channels == [16, 32, 64]
        assert ModelConfig.tiny(image_size=64).stage_channels == [8, 16, 32, 64]

    def test_model_config_rejects_bad_halvings(self):
        with pytest.raises(ValidationError):
            ModelConfig(image_size=100)

    def test_magnitude_input_has_one_channel(self):
        assert ModelConfig.tiny(of_input="magnitude").of_in_channels == 1

    def test_score_config_parses_timestep(self):
        assert ScoreConfig(timestep_mode="7").timestep_mode == 7
        assert ScoreConfig().timestep_mode == "all"
        with pytest.raises(ValidationError):
            ScoreConfig(timestep_mode=0)

    def test_anomaly_onset_is_one_based(self):
        spec = AnomalySpec(kind=AnomalyKind.FAST_MOTION, onset_frame=20)
        assert spec.onset_index == 19

    def test_semantic_frame_is_immutable(self, palette, class_map):
        frame = colorize(class_map, palette)
        with pytest.raises(ValueError):
            frame.pixels[0, 0, 0] = 0.5

    def test_clip_checks_flow_count(self, palette):
        clip = make_clip(palette, 3)
        with pytest.raises(ValidationError):
            Clip(clip_id="x", frames=clip.frames, flows=clip.flows[:1])


# Unit Tests - Core

class TestCore:
    """Test polar flow, direction maps and colorization"""

    def test_polar_three_four_five(self):
        magnitude, angle = flow_to_polar(FlowField.uniform(3.0, 4.0, 4, 4))
        np.testing.assert_allclose(magnitude, 5.0)
        np.testing.assert_allclose(angle, 0.9273, atol=1e-4)

    def test_polar_axis_and_zero(self):
        magnitude, angle = flow_to_polar(FlowField.uniform(1.0, 0.0, 2, 2))
        np.testing.assert_allclose(magnitude, 1.0)
        np.testing.assert_allclose(angle, 0.0)

        magnitude, angle = flow_to_polar(FlowField.uniform(0.0, 0.0, 2, 2))
        assert (magnitude == 0).all() and (angle == 0).all()

    def test_polar_angle_range_excludes_minus_pi(self):
        _, angle = flow_to_polar(FlowField.uniform(-1.0, -0.0, 1, 1))
        assert angle[0, 0] == pytest.approx(np.pi)

    def test_polar_rejects_non_finite(self):
        uv = np.zeros((3, 3, 2), dtype=np.float32)
        uv[0, 0, 0] = np.nan
        uv[1, 1, 1] = np.inf
        with pytest.raises(InvalidInputError, match="2 non-finite"):
            flow_to_polar(FlowField(uv=uv))

    def test_polar_round_trip(self):
        rng = np.random.default_rng(0)
        uv = rng.normal(size=(8, 8, 2)).astype(np.float32)
        magnitude, angle = flow_to_polar(FlowField(uv=uv))
        np.testing.assert_allclose(polar_to_flow(magnitude, angle).uv, uv, atol=1e-6)

    def test_direction_map_examples(self):
        np.testing.assert_allclose(compute_direction_map(FlowField.uniform(1, 0, 2, 2)).c0, 1.0)
        np.testing.assert_allclose(compute_direction_map(FlowField.uniform(1, 0, 2, 2)).c1, 0.0)
        diagonal = compute_direction_map(FlowField.uniform(1, 1, 2, 2))
        np.testing.assert_allclose(diagonal.data, 0.70711, atol=1e-5)
        assert (compute_direction_map(FlowField.uniform(0, 0, 2, 2)).data == 0).all()

    def test_direction_map_discards_sign(self):
        right = compute_direction_map(FlowField.uniform(2, 0, 2, 2))
        left = compute_direction_map(FlowField.uniform(-2, 0, 2, 2))
        np.testing.assert_array_equal(right.data, left.data)

    def test_direction_map_masks_slow_pixels(self):
        assert (compute_direction_map(FlowField.uniform(5e-4, 0, 2, 2), eps_motion=1e-3).data == 0).all()

    def test_direction_map_unit_norm(self):
        rng = np.random.default_rng(1)
        uv = rng.normal(size=(16, 16, 2)).astype(np.float32)
        uv[:4] = 0.0
        direction = compute_direction_map(FlowField(uv=uv))
        norm = direction.c0 ** 2 + direction.c1 ** 2
        assert np.all((np.abs(norm - 1) < 1e-6) | (norm == 0))
        assert (direction.data >= 0).all() and (direction.data <= 1).all()

    def test_direction_map_rejects_bad_eps(self):
        with pytest.raises(ParameterError):
            compute_direction_map(FlowField.uniform(1, 0, 2, 2), eps_motion=0.0)

    def test_colorize_background_and_person(self, palette):
        assert (colorize(np.zeros((4, 4), dtype=int), palette).pixels == 0).all()
        grid = np.zeros((4, 4), dtype=int)
        grid[1, 2] = 1
        np.testing.assert_array_equal(colorize(grid, palette).pixels[1, 2], [0.0, 1.0, 0.0])

    def test_colorize_unknown_class(self, palette):
        grid = np.zeros((4, 4), dtype=int)
        grid[0, 0] = 9
        with pytest.raises(PaletteMissError) as exc:
            colorize(grid, palette)
        assert exc.value.missing_ids == [9]

    def test_colorize_decode_round_trip(self, palette, class_map):
        np.testing.assert_array_equal(decode_colors(colorize(class_map, palette), palette), class_map)

    def test_off_palette_pixels(self, palette, class_map):
        frame = colorize(class_map, palette)
        assert off_palette_pixels(frame, palette) == 0
        pixels = frame.pixels.copy()
        pixels[0, 0] = (0.5, 0.5, 0.5)
        assert off_palette_pixels(SemanticFrame(pixels=pixels), palette) == 1

    def test_content_checksum_sensitivity(self, palette, class_map):
        frame = colorize(class_map, palette)
        flow = np.zeros((16, 16, 2), dtype=np.float32)
        base = content_checksum([frame.pixels], [flow])
        assert base == content_checksum([frame.pixels], [flow.copy()])
        flow[0, 0, 0] = 1.0
        assert base != content_checksum([frame.pixels], [flow])


# Unit Tests - Ingest

class TestFlo:
    """Test the Middlebury .flo reader and writer"""

    def test_round_trip_uniform(self, tmp_path):
        write_flo(tmp_path / "a.flo", FlowField.uniform(1.0, 2.0, 4, 4))
        flow = read_flo(tmp_path / "a.flo")
        assert (flow.u == 1.0).all() and (flow.v == 2.0).all()

    def test_minimal_file(self, tmp_path):
        path = tmp_path / "min.flo"
        path.write_bytes(b"PIEH" + np.array([1, 1], dtype="<i4").tobytes() + np.zeros(2, dtype="<f4").tobytes())
        flow = read_flo(path)
        assert flow.uv.shape == (1, 1, 2)
        assert (flow.uv == 0).all()

    def test_non_square_layout_is_row_major(self, tmp_path):
        uv = np.arange(2 * 3 * 2, dtype=np.float32).reshape(2, 3, 2)
        write_flo(tmp_path / "r.flo", FlowField(uv=uv))
        raw = (tmp_path / "r.flo").read_bytes()
        assert np.frombuffer(raw, dtype="<i4", count=2, offset=4).tolist() == [3, 2]
        np.testing.assert_array_equal(read_flo(tmp_path / "r.flo").uv, uv)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.flo"
        path.write_bytes(b"XXXX" + bytes(16))
        with pytest.raises(FlowFormatError) as exc:
            read_flo(path)
        assert exc.value.offset == 0

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "short.flo"
        path.write_bytes(b"PIEH" + np.array([2, 2], dtype="<i4").tobytes() + bytes(8))
        with pytest.raises(FlowFormatError) as exc:
            read_flo(path)
        assert exc.value.offset == 20

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "long.flo"
        write_flo(path, FlowField.uniform(0.5, 0.5, 2, 2))
        path.write_bytes(path.read_bytes() + bytes(3))
        with pytest.raises(FlowFormatError, match="trailing") as exc:
            read_flo(path)
        assert exc.value.offset == 12 + 32

    def test_invalid_dimensions(self, tmp_path):
        path = tmp_path / "zero.flo"
        path.write_bytes(b"PIEH" + np.array([0, 2], dtype="<i4").tobytes())
        with pytest.raises(FlowFormatError) as exc:
            read_flo(path)
        assert exc.value.offset == 4


class TestIngest:
    """Test dataset loading, resizing and sample construction"""

    def test_resize_flow_scales_vectors(self):
        flow = resize_flow(FlowField.uniform(4.0, -2.0, 256, 256), 128)
        assert flow.uv.shape == (128, 128, 2)
        np.testing.assert_allclose(flow.u, 2.0, atol=1e-5)
        np.testing.assert_allclose(flow.v, -1.0, atol=1e-5)

    def test_resize_frame_keeps_palette(self, palette, class_map):
        frame = resize_frame(colorize(class_map, palette), 32)
        assert frame.pixels.shape == (32, 32, 3)
        assert off_palette_pixels(frame, palette) == 0

    def test_labels_round_trip(self, tmp_path):
        labels = np.array([0, 0, 1, 1], dtype=np.int8)
        write_labels(tmp_path / "labels.csv", labels)
        np.testing.assert_array_equal(read_labels(tmp_path / "labels.csv", num_frames=4), labels)

    def test_labels_reject_bad_values(self, tmp_path):
        (tmp_path / "labels.csv").write_text("frame_index,label\n0,0\n1,2\n")
        with pytest.raises(ValueError):
            read_labels(tmp_path / "labels.csv")

    def test_palette_file_round_trip(self, tmp_path, palette):
        save_palette(tmp_path / "p.json", palette)
        assert load_palette(tmp_path / "p.json") == palette
        assert json.loads((tmp_path / "p.json").read_text())[1]["color"] == [0, 255, 0]

    def test_load_dataset(self, dataset_root):
        train = load_dataset(dataset_root, "train", target_size=8)
        test = load_dataset(dataset_root, Split.TEST, target_size=8)
        assert [c.clip_id for c in train.clips] == ["a"]
        assert train.clips[0].labels is None
        assert test.clips[0].num_frames == 4
        assert len(test.clips[0].flows) == 3
        assert test.clips[0].labels.shape == (4,)

    def test_load_dataset_missing_flow(self, dataset_root):
        (dataset_root / "test" / "b" / "flow" / "000001.flo").unlink()
        with pytest.raises(DatasetLoadError) as exc:
            load_dataset(dataset_root, "test", target_size=8)
        assert exc.value.clip_id == "b"
        assert "000001.flo" in str(exc.value)

    def test_load_dataset_malformed_labels(self, dataset_root):
        (dataset_root / "test" / "b" / "labels.csv").write_text("frame,label\n0,0\n")
        with pytest.raises(DatasetLoadError, match="malformed labels"):
            load_dataset(dataset_root, "test", target_size=8)

    def test_load_dataset_rejects_off_palette_frame(self, dataset_root, palette):
        gray = SemanticFrame(pixels=np.full((8, 8, 3), 0.5, dtype=np.float32))
        write_semantic_png(dataset_root / "test" / "b" / "semantic" / "000000.png", gray)
        with pytest.raises(DatasetLoadError, match="outside the palette"):
            load_dataset(dataset_root, "test", target_size=8)

    def test_load_test_labels(self, dataset_root):
        labels = load_test_labels(dataset_root)
        assert list(labels) == ["b"]
        assert labels["b"].tolist() == [0, 0, 0, 0]

    @pytest.mark.parametrize("num_frames, expected", [(13, 2), (12, 1), (11, 0)])
    def test_sample_count(self, palette, num_frames, expected):
        assert len(make_training_samples(make_clip(palette, num_frames), horizon=10)) == expected

    def test_sample_alignment(self, palette):
        clip = make_clip(palette, 13)
        sample = build_sample(clip, 2, horizon=10)
        assert sample.index == 2
        assert sample.initial.frame_index == 2
        np.testing.assert_array_equal(sample.flow.uv, clip.flows[1].uv)
        np.testing.assert_array_equal(sample.target.frames[0], clip.frames[3].pixels)
        np.testing.assert_array_equal(sample.target.frames[-1], clip.frames[12].pixels)
        assert sample.direction.c0[2, 1] == 1.0


if __name__ == "__main__":
    pytest.main([__file__, "-v", "--tb=short"])
