"""Deterministic moving-shape semantic benchmarks with injected anomalies.

Agents move along their heading axis in their own lane (a horizontal or
vertical band of the frame). Positions are computed on an unfolded track
and rounded with floor(p + 0.5), so every run on every platform renders the
same pixels.
"""
import math
import shutil
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from frame2video.core import colorize, content_checksum
from frame2video.errors import OverwriteError, ScriptError
from frame2video.ingest import save_palette, write_flo, write_labels, write_semantic_png
from frame2video.models import (
    AgentPlacement, AgentShape, AgentSpec, AnomalyKind, AnomalySpec, BenchmarkConfig, ClassPalette,
    ClipRecord, DatasetManifest, FlowField, Heading, HeadingPolicy, SceneScript, SemanticFrame, Split
)

PERSON = 1
BICYCLE = 2
CAR = 3


@lru_cache(maxsize=64)
def agent_stamp(shape: AgentShape, size: int) -> np.ndarray:
    """Boolean (size, size) footprint of an agent."""
    if shape == AgentShape.SQUARE:
        stamp = np.ones((size, size), dtype=bool)
    else:
        center = (size - 1) / 2.0
        yy, xx = np.mgrid[:size, :size]
        stamp = (xx - center) ** 2 + (yy - center) ** 2 <= (size / 2.0) ** 2
    stamp.flags.writeable = False
    return stamp


def _occupancy(placements: Sequence[AgentPlacement], image_size: int) -> np.ndarray:
    """Grid of (agent index + 1) per covered pixel, 0 for background."""
    grid = np.zeros((image_size, image_size), dtype=np.int32)
    for i, p in enumerate(placements):
        if not p.present:
            continue
        xa, xb = max(p.x, 0), min(p.x + p.size_px, image_size)
        ya, yb = max(p.y, 0), min(p.y + p.size_px, image_size)
        if xa >= xb or ya >= yb:
            continue
        mask = agent_stamp(p.shape, p.size_px)[ya - p.y:yb - p.y, xa - p.x:xb - p.x]
        region = grid[ya:yb, xa:xb]
        clash = np.unique(region[mask & (region != 0)])
        if clash.size:
            raise ScriptError(f"agent {i} overlaps agent(s) {[int(c) - 1 for c in clash]}")
        region[mask] = i + 1
    return grid


def render_class_map(placements: Sequence[AgentPlacement], image_size: int) -> np.ndarray:
    grid = _occupancy(placements, image_size)
    lut = np.array([0] + [p.class_id for p in placements], dtype=np.int64)
    return lut[grid]


def analytic_flow(
        before: Sequence[AgentPlacement],
        after: Sequence[AgentPlacement],
        image_size: int
) -> FlowField:
    """Exact flow t -> t+1: each pixel covered at t moves with its agent, background is static."""
    if len(before) != len(after):
        raise ScriptError(f"{len(before)} agents at t but {len(after)} at t+1")

    grid = _occupancy(before, image_size)
    uv = np.zeros((image_size, image_size, 2), dtype=np.float32)
    for i, (p, q) in enumerate(zip(before, after)):
        if not p.present:
            continue
        covered = grid == i + 1
        uv[covered, 0] = q.x - p.x
        uv[covered, 1] = q.y - p.y
    return FlowField(uv=uv)


# Trajectories

def _travelled(speed: float, t: int, anomaly: Optional[AnomalySpec]) -> float:
    """Signed distance along the heading after t frames."""
    if anomaly is None or anomaly.kind == AnomalyKind.NOVEL_CLASS or t <= anomaly.onset_index:
        return speed * t
    before = speed * anomaly.onset_index
    after = t - anomaly.onset_index
    if anomaly.kind == AnomalyKind.FAST_MOTION:
        return before + speed * anomaly.speed_factor * after
    return before - speed * after


def _track(agent: AgentSpec, image_size: int, anomaly: Optional[AnomalySpec]) -> Tuple[int, int]:
    """[lo, hi) range of the unfolded coordinate for the agent's policy."""
    if agent.heading_policy == HeadingPolicy.BOUNCE:
        span = image_size - agent.size_px
        if span <= 0:
            raise ScriptError(f"agent of size {agent.size_px} does not fit a {image_size}px frame")
        return 0, 2 * span
    # lane tracks keep a margin of one full step so the wrap happens off-screen
    factor = anomaly.speed_factor if anomaly and anomaly.kind == AnomalyKind.FAST_MOTION else 1.0
    margin = int(math.ceil(agent.speed_px_per_frame * max(1.0, factor)))
    return -agent.size_px - margin, image_size + margin


def _fold(s: float, agent: AgentSpec, lo: int, hi: int, image_size: int) -> float:
    if agent.heading_policy == HeadingPolicy.BOUNCE:
        span = hi / 2
        q = s % hi
        pos = q if q <= span else hi - q
    else:
        pos = lo + (s - lo) % (hi - lo)
    if agent.heading in (Heading.WEST, Heading.NORTH):
        pos = (image_size - agent.size_px) - pos
    return pos


def _lane_offset(index: int, count: int, size: int, image_size: int) -> int:
    band = image_size / count
    offset = int(math.floor(index * band + (band - size) / 2.0 + 0.5))
    return min(max(offset, 0), image_size - size)


def clip_placements(script: SceneScript, clip_index: int) -> List[List[AgentPlacement]]:
    """Per-frame placements of every agent for one clip of the script."""
    rng = np.random.default_rng([script.seed, clip_index])
    anomaly = script.anomaly_spec
    size = script.image_size

    tracks = []
    for i, agent in enumerate(script.agents):
        own = anomaly if anomaly is not None and anomaly.agent_index == i else None
        lo, hi = _track(agent, size, own)
        start = int(rng.integers(lo, hi))
        tracks.append((agent, own, lo, hi, start, _lane_offset(i, len(script.agents), agent.size_px, size)))

    frames = []
    for t in range(script.frames_per_clip):
        placements = []
        for agent, own, lo, hi, start, lane in tracks:
            along = int(math.floor(_fold(start + _travelled(agent.speed_px_per_frame, t, own), agent, lo, hi, size) + 0.5))
            horizontal = agent.heading in (Heading.EAST, Heading.WEST)
            present = not (own is not None and own.kind == AnomalyKind.NOVEL_CLASS and t < own.onset_index)
            placements.append(AgentPlacement(
                class_id=agent.class_id,
                shape=agent.shape,
                size_px=agent.size_px,
                x=along if horizontal else lane,
                y=lane if horizontal else along,
                present=present,
            ))
        frames.append(placements)
    return frames


def generate_clip(
        script: SceneScript,
        clip_index: int,
        palette: ClassPalette
) -> Tuple[List[SemanticFrame], List[FlowField], np.ndarray]:
    placements = clip_placements(script, clip_index)
    size = script.image_size

    frames = [
        colorize(render_class_map(p, size), palette, frame_index=t)
        for t, p in enumerate(placements)
    ]
    flows = [analytic_flow(placements[t], placements[t + 1], size) for t in range(len(placements) - 1)]

    labels = np.zeros(script.frames_per_clip, dtype=np.int8)
    if script.anomaly_spec is not None:
        labels[script.anomaly_spec.onset_index:] = 1
    return frames, flows, labels


def _validate_scripts(scripts: Sequence[SceneScript]) -> None:
    if not scripts:
        raise ScriptError("no scene scripts given")
    sizes = {s.image_size for s in scripts}
    if len(sizes) != 1:
        raise ScriptError(f"scripts disagree on image size: {sorted(sizes)}")
    names = [s.name for s in scripts]
    if len(set(names)) != len(names):
        raise ScriptError(f"duplicate script names: {names}")

    train_classes = {a.class_id for s in scripts if s.split == Split.TRAIN for a in s.agents}
    for script in scripts:
        spec = script.anomaly_spec
        if spec is None:
            continue
        if script.split == Split.TRAIN:
            raise ScriptError(f"training script '{script.name}' contains an anomaly")
        if spec.kind == AnomalyKind.NOVEL_CLASS and script.agents[spec.agent_index].class_id in train_classes:
            raise ScriptError(
                f"script '{script.name}': novel class {script.agents[spec.agent_index].class_id} appears in training"
            )


def _write_clip(
        script: SceneScript,
        clip_index: int,
        root: Path,
        palette: ClassPalette
) -> ClipRecord:
    clip_id = f"{script.name}_{clip_index:03d}"
    frames, flows, labels = generate_clip(script, clip_index, palette)

    clip_dir = root / script.split.value / clip_id
    (clip_dir / "semantic").mkdir(parents=True)
    (clip_dir / "flow").mkdir()
    for frame in frames:
        write_semantic_png(clip_dir / "semantic" / f"{frame.frame_index:06d}.png", frame)
    for t, flow in enumerate(flows):
        write_flo(clip_dir / "flow" / f"{t:06d}.flo", flow)
    if script.split == Split.TEST:
        write_labels(clip_dir / "labels.csv", labels)

    spec = script.anomaly_spec
    return ClipRecord(
        split=script.split,
        clip_id=clip_id,
        num_frames=len(frames),
        anomaly_kind=spec.kind if spec else None,
        anomaly_frames=(spec.onset_index, len(frames) - 1) if spec else None,
        checksum=content_checksum([f.pixels for f in frames], [fl.uv for fl in flows]),
    )


def gen_dataset(
        scripts: Sequence[SceneScript],
        root: Union[str, Path],
        force: bool = False,
        palette: Optional[ClassPalette] = None,
        workers: int = 4
) -> DatasetManifest:
    """Render every script into the ingest layout under root and write manifest.json."""
    root = Path(root)
    palette = palette or ClassPalette.default()
    _validate_scripts(scripts)

    if root.exists() and any(root.iterdir()):
        if not force:
            raise OverwriteError(f"{root} is not empty; pass force to overwrite")
        logger.warning(f"Overwriting existing dataset at {root}")
        shutil.rmtree(root)
    root.mkdir(parents=True, exist_ok=True)
    save_palette(root / "palette.json", palette)

    jobs = [(script, i) for script in scripts for i in range(script.num_clips)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        records = list(pool.map(lambda job: _write_clip(job[0], job[1], root, palette), jobs))
    records.sort(key=lambda r: (r.split.value, r.clip_id))

    manifest = DatasetManifest(
        scripts=[s.name for s in scripts],
        image_size=scripts[0].image_size,
        clip_count=len(records),
        frame_count=sum(r.num_frames for r in records),
        clips=records,
    )
    (root / "manifest.json").write_text(manifest.model_dump_json(indent=2) + "\n")

    anomalous = sum(1 for r in records if r.anomaly_kind is not None)
    logger.info(f"Generated {manifest.clip_count} clips ({anomalous} anomalous, {manifest.frame_count} frames) at {root}")
    return manifest


def load_manifest(root: Union[str, Path]) -> Optional[DatasetManifest]:
    path = Path(root) / "manifest.json"
    if not path.exists():
        return None
    return DatasetManifest.model_validate_json(path.read_text())


# Default benchmark

def default_benchmark(cfg: BenchmarkConfig) -> List[SceneScript]:
    """Training and test scripts for the desk-scale benchmark.

    Every layout has three east-bound lanes; normal motion never reverses,
    so a reversed heading is observable.
    """
    scale = cfg.image_size / 128.0

    def agent(class_id: int, shape: AgentShape, size: int, speed: float) -> AgentSpec:
        return AgentSpec(
            class_id=class_id,
            shape=shape,
            size_px=max(3, int(round(size * scale))),
            speed_px_per_frame=speed,
            heading=Heading.EAST,
            heading_policy=HeadingPolicy.LANE,
        )

    layouts = {
        "walkers": [
            agent(PERSON, AgentShape.DISK, 12, 1.0),
            agent(PERSON, AgentShape.DISK, 12, 2.0),
            agent(PERSON, AgentShape.DISK, 12, 1.0),
        ],
        "street": [
            agent(PERSON, AgentShape.DISK, 12, 1.0),
            agent(CAR, AgentShape.SQUARE, 18, 2.0),
            agent(PERSON, AgentShape.DISK, 12, 2.0),
        ],
    }
    novel_layout = list(layouts["walkers"])
    novel_layout[1] = agent(BICYCLE, AgentShape.SQUARE, 12, 2.0)

    onset = cfg.effective_onset
    walkers_train = (cfg.train_clips + 1) // 2
    normal_walkers = (cfg.normal_test_clips + 1) // 2
    plan = [
        ("train_walkers", Split.TRAIN, walkers_train, layouts["walkers"], None),
        ("train_street", Split.TRAIN, cfg.train_clips - walkers_train, layouts["street"], None),
        ("test_normal_walkers", Split.TEST, normal_walkers, layouts["walkers"], None),
        ("test_normal_street", Split.TEST, cfg.normal_test_clips - normal_walkers, layouts["street"], None),
        ("test_novel_class", Split.TEST, cfg.novel_class_clips, novel_layout,
         AnomalySpec(kind=AnomalyKind.NOVEL_CLASS, onset_frame=onset, agent_index=1)),
        ("test_fast_motion", Split.TEST, cfg.fast_motion_clips, layouts["walkers"],
         AnomalySpec(kind=AnomalyKind.FAST_MOTION, onset_frame=onset, agent_index=0, speed_factor=cfg.fast_factor)),
        ("test_wrong_direction", Split.TEST, cfg.wrong_direction_clips, layouts["walkers"],
         AnomalySpec(kind=AnomalyKind.WRONG_DIRECTION, onset_frame=onset, agent_index=0)),
    ]
    return [
        SceneScript(
            name=name,
            split=split,
            seed=cfg.seed * 1000 + j,
            num_clips=num_clips,
            frames_per_clip=cfg.frames_per_clip,
            image_size=cfg.image_size,
            agents=agents,
            anomaly_spec=anomaly,
        )
        for j, (name, split, num_clips, agents, anomaly) in enumerate(plan)
        if num_clips > 0
    ]
