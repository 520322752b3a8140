import numpy as np
import pytest
from pydantic import ValidationError

from frame2video.core import content_checksum
from frame2video.errors import OverwriteError, ScriptError
from frame2video.ingest import load_dataset, read_flo
from frame2video.models import (
    AgentPlacement, AgentShape, AgentSpec, AnomalyKind, AnomalySpec, BenchmarkConfig, ClassPalette,
    Heading, HeadingPolicy, SceneScript, Split
)
from frame2video.synth import (
    CAR, PERSON, agent_stamp, analytic_flow, clip_placements, default_benchmark, gen_dataset,
    generate_clip, load_manifest, render_class_map
)


# Fixtures

@pytest.fixture
def palette():
    return ClassPalette.default()


@pytest.fixture
def lane_agent():
    return AgentSpec(
        class_id=PERSON, shape=AgentShape.SQUARE, size_px=4, speed_px_per_frame=1.0,
        heading=Heading.EAST, heading_policy=HeadingPolicy.LANE
    )


def make_script(agent, kind=None, onset=20, frames=40, factor=3.0):
    anomaly = AnomalySpec(kind=kind, onset_frame=onset, speed_factor=factor) if kind else None
    return SceneScript(
        name=f"script_{kind.value if kind else 'normal'}",
        split=Split.TEST,
        seed=5,
        num_clips=1,
        frames_per_clip=frames,
        image_size=64,
        agents=[agent],
        anomaly_spec=anomaly,
    )


@pytest.fixture
def tiny_benchmark():
    return BenchmarkConfig(
        image_size=32, frames_per_clip=16, train_clips=2, normal_test_clips=1,
        novel_class_clips=1, fast_motion_clips=1, wrong_direction_clips=1
    )


def placement(x, y, size=6, class_id=PERSON, shape=AgentShape.DISK):
    return AgentPlacement(class_id=class_id, shape=shape, size_px=size, x=x, y=y)


def steps(script):
    """Per-step x displacement of the first agent"""
    xs = np.array([frame[0].x for frame in clip_placements(script, 0)])
    return np.diff(xs)


# Unit Tests - Rendering

class TestRendering:
    """Test stamps, class maps and analytic flow"""

    def test_stamps(self):
        assert agent_stamp(AgentShape.SQUARE, 5).all()
        disk = agent_stamp(AgentShape.DISK, 10)
        assert disk[5, 5] and not disk[0, 0]
        assert disk.sum() < 100

    def test_render_class_map(self):
        grid = render_class_map([placement(2, 3, size=4, shape=AgentShape.SQUARE, class_id=CAR)], 16)
        assert grid[3:7, 2:6].tolist() == [[CAR] * 4] * 4
        assert grid.sum() == CAR * 16

    def test_absent_agent_is_not_rendered(self):
        hidden = placement(2, 3).model_copy(update={"present": False})
        assert render_class_map([hidden], 16).sum() == 0

    def test_agents_are_clipped_at_the_border(self):
        grid = render_class_map([placement(-2, 0, size=4, shape=AgentShape.SQUARE)], 8)
        assert grid[0:4, 0:2].all() and grid.sum() == PERSON * 8

    def test_rigid_translation(self):
        before, after = [placement(5, 5)], [placement(7, 5)]
        flow = analytic_flow(before, after, 20)
        mask = render_class_map(before, 20) > 0
        assert (flow.u[mask] == 2).all() and (flow.v[mask] == 0).all()
        assert (flow.uv[~mask] == 0).all()

    def test_static_agent(self):
        flow = analytic_flow([placement(5, 5)], [placement(5, 5)], 20)
        assert (flow.uv == 0).all()

    def test_two_agents_piecewise(self):
        before = [placement(1, 1, shape=AgentShape.SQUARE), placement(10, 10, shape=AgentShape.SQUARE)]
        after = [placement(2, 1, shape=AgentShape.SQUARE), placement(10, 11, shape=AgentShape.SQUARE)]
        flow = analytic_flow(before, after, 20)
        np.testing.assert_array_equal(flow.uv[1:7, 1:7], np.tile([1.0, 0.0], (6, 6, 1)))
        np.testing.assert_array_equal(flow.uv[10:16, 10:16], np.tile([0.0, 1.0], (6, 6, 1)))
        assert np.abs(flow.uv).sum() == 2 * 36

    def test_overlap_is_a_script_error(self):
        with pytest.raises(ScriptError):
            render_class_map([placement(0, 0), placement(2, 2)], 16)


# Unit Tests - Scripts

class TestScripts:
    """Test scripted trajectories and injected anomalies"""

    def test_normal_clip_labels(self, palette, lane_agent):
        _, _, labels = generate_clip(make_script(lane_agent), 0, palette)
        assert (labels == 0).all()

    def test_onset_contract(self, palette, lane_agent):
        frames, flows, labels = generate_clip(make_script(lane_agent, AnomalyKind.FAST_MOTION, onset=20), 0, palette)
        assert len(frames) == 40 and len(flows) == 39
        assert labels.tolist() == [0] * 19 + [1] * 21

    def test_lane_motion_is_constant(self, lane_agent):
        d = steps(make_script(lane_agent))
        assert np.all((d == 1) | (d < -10))

    def test_wrong_direction_reverses(self, lane_agent):
        d = steps(make_script(lane_agent, AnomalyKind.WRONG_DIRECTION, onset=20))
        assert np.all((d[:19] == 1) | (d[:19] < -10))
        assert np.all((d[19:] == -1) | (d[19:] > 10))

    def test_fast_motion_speeds_up(self, lane_agent):
        d = steps(make_script(lane_agent, AnomalyKind.FAST_MOTION, onset=20, factor=3.0))
        assert np.all((d[:19] == 1) | (d[:19] < -10))
        assert np.all((d[19:] == 3) | (d[19:] < -10))

    @pytest.mark.parametrize("kind,abnormal", [(AnomalyKind.FAST_MOTION, 3), (AnomalyKind.WRONG_DIRECTION, -1)])
    def test_first_anomalous_frame_has_abnormal_outgoing_motion(self, palette, lane_agent, kind, abnormal):
        # the first labelled frame is the last one placed by normal motion
        script = make_script(lane_agent, kind, onset=20)
        _, _, labels = generate_clip(script, 0, palette)
        first = int(np.argmax(labels))
        d = steps(script)
        assert first == 19
        assert d[first - 1] == 1 or abs(d[first - 1]) > 10
        assert d[first] == abnormal or abs(d[first]) > 10

    def test_novel_agent_appears_at_onset(self, lane_agent):
        frames = clip_placements(make_script(lane_agent, AnomalyKind.NOVEL_CLASS, onset=20), 0)
        assert not any(f[0].present for f in frames[:19])
        assert all(f[0].present for f in frames[19:])

    def test_bounce_stays_in_frame(self):
        agent = AgentSpec(class_id=PERSON, size_px=8, speed_px_per_frame=3.0, heading=Heading.SOUTH)
        script = SceneScript(name="b", seed=1, frames_per_clip=80, image_size=32, agents=[agent])
        ys = [frame[0].y for frame in clip_placements(script, 0)]
        assert min(ys) >= 0 and max(ys) <= 32 - 8

    def test_flow_matches_frame_displacement(self, palette, lane_agent):
        frames, flows, _ = generate_clip(make_script(lane_agent), 0, palette)
        for t in range(len(flows)):
            before = frames[t].pixels.any(axis=-1)
            assert np.unique(flows[t].u[before]).size <= 1

    def test_training_script_rejects_anomaly(self, lane_agent):
        with pytest.raises(ValidationError):
            SceneScript(
                name="bad", split=Split.TRAIN, agents=[lane_agent],
                anomaly_spec=AnomalySpec(kind=AnomalyKind.FAST_MOTION, onset_frame=5)
            )

    def test_onset_must_fall_inside_clip(self, lane_agent):
        with pytest.raises(ValidationError):
            make_script(lane_agent, AnomalyKind.FAST_MOTION, onset=40, frames=40)


# Integration Tests - Dataset generation

class TestGenDataset:
    """Test on-disk benchmark generation"""

    def test_default_benchmark_counts(self):
        scripts = default_benchmark(BenchmarkConfig())
        train = sum(s.num_clips for s in scripts if s.split == Split.TRAIN)
        test = sum(s.num_clips for s in scripts if s.split == Split.TEST)
        assert (train, test) == (64, 16)
        kinds = {s.anomaly_spec.kind: s.num_clips for s in scripts if s.anomaly_spec}
        assert kinds == {
            AnomalyKind.NOVEL_CLASS: 4, AnomalyKind.FAST_MOTION: 2, AnomalyKind.WRONG_DIRECTION: 2
        }

    def test_layout_and_manifest(self, tmp_path, tiny_benchmark):
        manifest = gen_dataset(default_benchmark(tiny_benchmark), tmp_path / "bench", workers=2)
        root = tmp_path / "bench"
        assert (root / "palette.json").exists()
        assert manifest.clip_count == 6
        assert manifest.frame_count == 6 * 16
        assert load_manifest(root) == manifest

        fast = next(r for r in manifest.clips if r.anomaly_kind == AnomalyKind.FAST_MOTION)
        assert fast.anomaly_frames == (7, 15)
        clip_dir = root / "test" / fast.clip_id
        assert len(list((clip_dir / "semantic").glob("*.png"))) == 16
        assert len(list((clip_dir / "flow").glob("*.flo"))) == 15
        assert read_flo(clip_dir / "flow" / "000000.flo").uv.shape == (32, 32, 2)
        assert not list((root / "train").glob("*/labels.csv"))

    def test_same_seed_same_bytes(self, tmp_path, tiny_benchmark):
        gen_dataset(default_benchmark(tiny_benchmark), tmp_path / "a")
        gen_dataset(default_benchmark(tiny_benchmark), tmp_path / "b")
        files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_different_seed_differs(self, tmp_path, tiny_benchmark):
        a = gen_dataset(default_benchmark(tiny_benchmark), tmp_path / "a")
        b = gen_dataset(default_benchmark(tiny_benchmark.model_copy(update={"seed": 1})), tmp_path / "b")
        assert [r.checksum for r in a.clips] != [r.checksum for r in b.clips]

    def test_loaded_checksums_match_manifest(self, tmp_path, tiny_benchmark):
        manifest = gen_dataset(default_benchmark(tiny_benchmark), tmp_path)
        expected = {r.clip_id: r.checksum for r in manifest.clips}
        for split in (Split.TRAIN, Split.TEST):
            for clip in load_dataset(tmp_path, split, target_size=32).clips:
                checksum = content_checksum([f.pixels for f in clip.frames], [f.uv for f in clip.flows])
                assert checksum == expected[clip.clip_id]

    def test_refuses_to_overwrite(self, tmp_path, tiny_benchmark):
        (tmp_path / "keep.txt").write_text("x")
        with pytest.raises(OverwriteError):
            gen_dataset(default_benchmark(tiny_benchmark), tmp_path)
        gen_dataset(default_benchmark(tiny_benchmark), tmp_path, force=True)
        assert not (tmp_path / "keep.txt").exists()

    def test_novel_class_must_be_unseen(self, tmp_path, lane_agent):
        train = SceneScript(name="train", agents=[lane_agent], image_size=64)
        novel = make_script(lane_agent, AnomalyKind.NOVEL_CLASS)
        with pytest.raises(ScriptError, match="novel class"):
            gen_dataset([train, novel], tmp_path)


if __name__ == "__main__":
    pytest.main([__file__, "-v", "--tb=short"])
