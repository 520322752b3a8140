import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd
from loguru import logger
from PIL import Image

from frame2video.core import DEFAULT_EPS_MOTION, compute_direction_map, off_palette_pixels, to_uint8
from frame2video.errors import DatasetLoadError, FlowFormatError
from frame2video.models import (
    ClassPalette, Clip, ClipDataset, FlowField, SemanticFrame, Split, TrainingSample, VideoTensor
)

FLO_MAGIC = b"PIEH"
PathLike = Union[str, Path]


# Middlebury .flo

def read_flo(path: PathLike) -> FlowField:
    """Parse a Middlebury .flo file: 'PIEH', int32 width, int32 height, interleaved float32 (u, v)."""
    path = Path(path)
    raw = path.read_bytes()

    if len(raw) < 4:
        raise FlowFormatError("truncated magic tag", offset=len(raw), path=str(path))
    if raw[:4] != FLO_MAGIC:
        raise FlowFormatError(f"bad magic tag {raw[:4]!r}", offset=0, path=str(path))
    if len(raw) < 12:
        raise FlowFormatError("truncated header", offset=len(raw), path=str(path))

    width, height = (int(x) for x in np.frombuffer(raw, dtype="<i4", count=2, offset=4))
    if width <= 0 or height <= 0:
        raise FlowFormatError(f"invalid dimensions {width}x{height}", offset=4, path=str(path))

    expected = 8 * width * height
    payload = raw[12:]
    if len(payload) < expected:
        raise FlowFormatError(
            f"truncated payload: {len(payload)} of {expected} bytes", offset=12 + len(payload), path=str(path)
        )
    if len(payload) > expected:
        raise FlowFormatError(
            f"{len(payload) - expected} trailing bytes after the payload", offset=12 + expected, path=str(path)
        )

    data = np.frombuffer(payload, dtype="<f4", count=2 * width * height)
    return FlowField(uv=data.reshape(height, width, 2))


def write_flo(path: PathLike, flow: FlowField) -> None:
    path = Path(path)
    header = FLO_MAGIC + np.array([flow.width, flow.height], dtype="<i4").tobytes()
    path.write_bytes(header + np.ascontiguousarray(flow.uv, dtype="<f4").tobytes())


# Palette, frames, labels

def load_palette(path: PathLike) -> ClassPalette:
    with open(path) as f:
        return ClassPalette.from_records(json.load(f))


def save_palette(path: PathLike, palette: ClassPalette) -> None:
    with open(path, "w") as f:
        json.dump(palette.to_records(), f, indent=2)
        f.write("\n")


def read_semantic_png(path: PathLike, frame_index: int = 0) -> SemanticFrame:
    with Image.open(path) as img:
        pixels = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return SemanticFrame(pixels=pixels, frame_index=frame_index)


def write_semantic_png(path: PathLike, frame: SemanticFrame) -> None:
    Image.fromarray(to_uint8(frame.pixels)).save(path)


def read_labels(path: PathLike, num_frames: Optional[int] = None) -> np.ndarray:
    """Read a frame_index,label CSV into a 0/1 vector ordered by frame index."""
    table = pd.read_csv(path)
    if list(table.columns) != ["frame_index", "label"]:
        raise ValueError(f"expected columns frame_index,label, got {list(table.columns)}")

    table = table.sort_values("frame_index")
    indices = table["frame_index"].to_numpy()
    if not np.array_equal(indices, np.arange(len(table))):
        raise ValueError("frame_index must enumerate 0..n-1 without gaps")
    labels = table["label"].to_numpy()
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("label values must be 0 or 1")
    if num_frames is not None and len(labels) != num_frames:
        raise ValueError(f"{len(labels)} labels for {num_frames} frames")
    return labels.astype(np.int8)


def write_labels(path: PathLike, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.int64)
    pd.DataFrame({"frame_index": np.arange(len(labels)), "label": labels}).to_csv(path, index=False)


# Resizing

def resize_frame(frame: SemanticFrame, size: int) -> SemanticFrame:
    """Nearest-neighbour resize; keeps every pixel an exact palette color."""
    if frame.height == size and frame.width == size:
        return frame
    img = Image.fromarray(to_uint8(frame.pixels)).resize((size, size), Image.NEAREST)
    return SemanticFrame(pixels=np.asarray(img, dtype=np.float32) / 255.0, frame_index=frame.frame_index)


def resize_flow(flow: FlowField, size: int) -> FlowField:
    """Bilinear resize with displacement vectors rescaled by the resize ratio."""
    if flow.height == size and flow.width == size:
        return flow
    scales = (size / flow.width, size / flow.height)
    channels = []
    for c, scale in enumerate(scales):
        img = Image.fromarray(np.ascontiguousarray(flow.uv[..., c], dtype=np.float32))
        channels.append(np.asarray(img.resize((size, size), Image.BILINEAR), dtype=np.float32) * scale)
    return FlowField(uv=np.stack(channels, axis=-1))


# Dataset loading

def load_clip(clip_dir: Path, split: Split, target_size: int, palette: ClassPalette) -> Clip:
    clip_id = clip_dir.name
    frame_paths = sorted((clip_dir / "semantic").glob("*.png"))
    if not frame_paths:
        raise DatasetLoadError("no semantic frames found", clip_id=clip_id, path=str(clip_dir / "semantic"))

    flow_dir = clip_dir / "flow"
    flow_paths = sorted(flow_dir.glob("*.flo"))
    if len(flow_paths) != len(frame_paths) - 1:
        for frame_path in frame_paths[:-1]:
            expected = flow_dir / f"{frame_path.stem}.flo"
            if not expected.exists():
                raise DatasetLoadError("missing flow file", clip_id=clip_id, path=str(expected))
        raise DatasetLoadError(
            f"frame/flow count mismatch: {len(frame_paths)} frames, {len(flow_paths)} flows",
            clip_id=clip_id, path=str(flow_dir)
        )

    frames = []
    for index, frame_path in enumerate(frame_paths):
        frame = resize_frame(read_semantic_png(frame_path, frame_index=index), target_size)
        if off_palette_pixels(frame, palette):
            raise DatasetLoadError("frame holds colors outside the palette", clip_id=clip_id, path=str(frame_path))
        frames.append(frame)

    flows = []
    for frame_path in frame_paths[:-1]:
        flow_path = flow_dir / f"{frame_path.stem}.flo"
        if not flow_path.exists():
            raise DatasetLoadError("missing flow file", clip_id=clip_id, path=str(flow_path))
        try:
            flow = read_flo(flow_path)
        except FlowFormatError as e:
            raise DatasetLoadError(str(e), clip_id=clip_id, path=str(flow_path)) from e
        if not np.isfinite(flow.uv).all():
            raise DatasetLoadError("flow holds non-finite values", clip_id=clip_id, path=str(flow_path))
        flows.append(resize_flow(flow, target_size))

    labels = None
    labels_path = clip_dir / "labels.csv"
    if split == Split.TEST:
        if not labels_path.exists():
            raise DatasetLoadError("missing labels.csv", clip_id=clip_id, path=str(labels_path))
        try:
            labels = read_labels(labels_path, num_frames=len(frames))
        except (ValueError, KeyError, pd.errors.ParserError) as e:
            raise DatasetLoadError(f"malformed labels: {e}", clip_id=clip_id, path=str(labels_path)) from e
    elif labels_path.exists():
        logger.warning(f"Ignoring labels.csv in training clip {clip_id}")

    return Clip(clip_id=clip_id, frames=frames, flows=flows, labels=labels)


def load_dataset(
        root: PathLike,
        split: Union[Split, str],
        target_size: int = 128,
        workers: int = 4
) -> ClipDataset:
    """
    Load one split of a dataset laid out as:

        root/palette.json
        root/{train|test}/<clip_id>/semantic/%06d.png
        root/{train|test}/<clip_id>/flow/%06d.flo
        root/test/<clip_id>/labels.csv
    """
    root = Path(root)
    split = Split(split)

    palette_path = root / "palette.json"
    if not palette_path.exists():
        raise DatasetLoadError("missing palette.json", path=str(palette_path))
    try:
        palette = load_palette(palette_path)
    except (ValueError, KeyError) as e:
        raise DatasetLoadError(f"malformed palette: {e}", path=str(palette_path)) from e

    split_dir = root / split.value
    if not split_dir.is_dir():
        raise DatasetLoadError(f"missing {split.value} directory", path=str(split_dir))
    clip_dirs = sorted(p for p in split_dir.iterdir() if p.is_dir())

    with ThreadPoolExecutor(max_workers=workers) as pool:
        clips = list(pool.map(lambda d: load_clip(d, split, target_size, palette), clip_dirs))

    logger.info(f"Loaded {len(clips)} {split.value} clips ({sum(c.num_frames for c in clips)} frames) from {root}")
    return ClipDataset(split=split, clips=clips, palette=palette)


# Training samples

def sample_indices(clip: Clip, horizon: int = 10) -> range:
    """Initial frames t with a preceding flow and `horizon` future frames."""
    return range(1, max(1, clip.num_frames - horizon))


def build_sample(
        clip: Clip,
        t: int,
        horizon: int = 10,
        eps_motion: float = DEFAULT_EPS_MOTION
) -> TrainingSample:
    flow = clip.flows[t - 1]
    target = np.stack([clip.frames[t + k].pixels for k in range(1, horizon + 1)])
    return TrainingSample(
        clip_id=clip.clip_id,
        index=t,
        initial=clip.frames[t],
        direction=compute_direction_map(flow, eps_motion),
        flow=flow,
        target=VideoTensor(frames=target),
    )


def make_training_samples(
        clip: Clip,
        horizon: int = 10,
        eps_motion: float = DEFAULT_EPS_MOTION
) -> List[TrainingSample]:
    return [build_sample(clip, t, horizon, eps_motion) for t in sample_indices(clip, horizon)]


def load_test_labels(root: PathLike) -> Dict[str, np.ndarray]:
    """labels.csv of every test clip, keyed by clip id, without loading frames or flows."""
    test_dir = Path(root) / Split.TEST.value
    if not test_dir.is_dir():
        raise DatasetLoadError("missing test directory", path=str(test_dir))

    labels = {}
    for clip_dir in sorted(p for p in test_dir.iterdir() if p.is_dir()):
        path = clip_dir / "labels.csv"
        if not path.exists():
            raise DatasetLoadError("missing labels.csv", clip_id=clip_dir.name, path=str(path))
        try:
            labels[clip_dir.name] = read_labels(path)
        except (ValueError, KeyError, pd.errors.ParserError) as e:
            raise DatasetLoadError(f"malformed labels: {e}", clip_id=clip_dir.name, path=str(path)) from e
    return labels
