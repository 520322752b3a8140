from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import (
    BaseModel, ConfigDict, Field, computed_field, field_validator, model_validator
)


class Split(str, Enum):
    """Dataset partitions"""
    TRAIN = "train"
    TEST = "test"


class AnomalyKind(str, Enum):
    """Anomalies the synthetic benchmark can inject"""
    NOVEL_CLASS = "novel_class"
    FAST_MOTION = "fast_motion"
    WRONG_DIRECTION = "wrong_direction"


class AgentShape(str, Enum):
    DISK = "disk"
    SQUARE = "square"


class Heading(str, Enum):
    """Initial heading of a scripted agent, in image coordinates (y grows downward)"""
    EAST = "east"
    WEST = "west"
    SOUTH = "south"
    NORTH = "north"


class HeadingPolicy(str, Enum):
    BOUNCE = "bounce"
    LANE = "lane"


class InferenceMode(str, Enum):
    SAMPLE = "sample"
    MEAN = "mean"


def _frozen_array(value: Any, dtype=np.float32) -> np.ndarray:
    array = np.array(value, dtype=dtype)
    array.flags.writeable = False
    return array


class ArrayModel(BaseModel):
    """Immutable value holding numpy payloads"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


# Palette

class PaletteEntry(BaseModel):
    """One semantic class and its display color (channels in [0, 1])"""
    model_config = ConfigDict(frozen=True)

    class_id: int = Field(ge=0)
    class_name: str
    color: Tuple[float, float, float]

    @field_validator("color")
    @classmethod
    def _color_range(cls, value):
        if any(c < 0.0 or c > 1.0 for c in value):
            raise ValueError(f"color channels must lie in [0, 1], got {value}")
        return value


class ClassPalette(BaseModel):
    """Ordered class palette; class 0 is the black background"""
    model_config = ConfigDict(frozen=True)

    entries: List[PaletteEntry] = Field(min_length=2)

    @model_validator(mode="after")
    def _check_entries(self):
        ids = [e.class_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate class ids in palette: {ids}")
        colors = [self.quantize(e.color) for e in self.entries]
        if len(set(colors)) != len(colors):
            raise ValueError("palette colors must be pairwise distinct")
        background = [e for e in self.entries if e.class_id == 0]
        if not background or background[0].color != (0.0, 0.0, 0.0):
            raise ValueError("palette must map class_id 0 to (0, 0, 0)")
        return self

    @staticmethod
    def quantize(color: Tuple[float, float, float]) -> Tuple[int, int, int]:
        return tuple(int(round(c * 255)) for c in color)

    @property
    def class_ids(self) -> List[int]:
        return [e.class_id for e in self.entries]

    def color_of(self, class_id: int) -> Tuple[float, float, float]:
        for entry in self.entries:
            if entry.class_id == class_id:
                return entry.color
        raise KeyError(class_id)

    def colors_array(self) -> np.ndarray:
        """Palette colors as an (n, 3) float32 array, ordered like `entries`"""
        return np.array([e.color for e in self.entries], dtype=np.float32)

    def to_records(self) -> List[Dict[str, Any]]:
        """palette.json records (colors as 0-255 integers)"""
        return [
            {"class_id": e.class_id, "class_name": e.class_name, "color": list(self.quantize(e.color))}
            for e in self.entries
        ]

    @classmethod
    def from_records(cls, records: List[Dict[str, Any]]) -> "ClassPalette":
        return cls(entries=[
            PaletteEntry(
                class_id=r["class_id"],
                class_name=r["class_name"],
                color=tuple(c / 255.0 for c in r["color"]),
            )
            for r in records
        ])

    @classmethod
    def default(cls) -> "ClassPalette":
        names_colors = [
            ("background", (0.0, 0.0, 0.0)),
            ("person", (0.0, 1.0, 0.0)),
            ("bicycle", (1.0, 0.0, 0.0)),
            ("car", (0.0, 0.0, 1.0)),
            ("cart", (1.0, 1.0, 0.0)),
            ("skateboard", (1.0, 0.0, 1.0)),
            ("dog", (0.0, 1.0, 1.0)),
            ("truck", (1.0, 1.0, 1.0)),
        ]
        return cls(entries=[
            PaletteEntry(class_id=i, class_name=name, color=color)
            for i, (name, color) in enumerate(names_colors)
        ])


# Per-frame payloads

class SemanticFrame(ArrayModel):
    """Palette-colored semantic map, (H, W, 3) float32 in [0, 1]"""
    pixels: np.ndarray
    frame_index: int = Field(default=0, ge=0)

    @field_validator("pixels", mode="before")
    @classmethod
    def _coerce(cls, value):
        return _frozen_array(value)

    @model_validator(mode="after")
    def _check_pixels(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"semantic frame must be (H, W, 3), got {self.pixels.shape}")
        if self.pixels.size and (self.pixels.min() < 0.0 or self.pixels.max() > 1.0):
            raise ValueError("semantic frame values must lie in [0, 1]")
        return self

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


class FlowField(ArrayModel):
    """Per-pixel (u, v) displacement in pixels/frame, stored as (H, W, 2) float32.

    Finiteness is enforced where the field is consumed (flow_to_polar, load_dataset).
    """
    uv: np.ndarray

    @field_validator("uv", mode="before")
    @classmethod
    def _coerce(cls, value):
        return _frozen_array(value)

    @model_validator(mode="after")
    def _check_shape(self):
        if self.uv.ndim != 3 or self.uv.shape[2] != 2:
            raise ValueError(f"flow field must be (H, W, 2), got {self.uv.shape}")
        return self

    @classmethod
    def from_components(cls, u: np.ndarray, v: np.ndarray) -> "FlowField":
        return cls(uv=np.stack([u, v], axis=-1))

    @classmethod
    def uniform(cls, u: float, v: float, height: int, width: int) -> "FlowField":
        uv = np.empty((height, width, 2), dtype=np.float32)
        uv[..., 0] = u
        uv[..., 1] = v
        return cls(uv=uv)

    @property
    def u(self) -> np.ndarray:
        return self.uv[..., 0]

    @property
    def v(self) -> np.ndarray:
        return self.uv[..., 1]

    @property
    def height(self) -> int:
        return self.uv.shape[0]

    @property
    def width(self) -> int:
        return self.uv.shape[1]


class DirectionMap(ArrayModel):
    """(|cos θ|, |sin θ|) per pixel, (H, W, 2) float32 in [0, 1]"""
    data: np.ndarray

    @field_validator("data", mode="before")
    @classmethod
    def _coerce(cls, value):
        return _frozen_array(value)

    @model_validator(mode="after")
    def _check_data(self):
        if self.data.ndim != 3 or self.data.shape[2] != 2:
            raise ValueError(f"direction map must be (H, W, 2), got {self.data.shape}")
        if self.data.size and (self.data.min() < 0.0 or self.data.max() > 1.0):
            raise ValueError("direction map values must lie in [0, 1]")
        return self

    @property
    def c0(self) -> np.ndarray:
        return self.data[..., 0]

    @property
    def c1(self) -> np.ndarray:
        return self.data[..., 1]


class VideoTensor(ArrayModel):
    """Stack of semantic frames, (N, H, W, 3) float32 in [0, 1]"""
    frames: np.ndarray

    @field_validator("frames", mode="before")
    @classmethod
    def _coerce(cls, value):
        return _frozen_array(value)

    @model_validator(mode="after")
    def _check_frames(self):
        if self.frames.ndim != 4 or self.frames.shape[3] != 3:
            raise ValueError(f"video must be (N, H, W, 3), got {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise ValueError("video must hold at least one frame")
        if self.frames.min() < 0.0 or self.frames.max() > 1.0:
            raise ValueError("video values must lie in [0, 1]")
        return self

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def frame(self, i: int, frame_index: int = 0) -> SemanticFrame:
        return SemanticFrame(pixels=self.frames[i], frame_index=frame_index)


# Model outputs

class LatentDistribution(ArrayModel):
    """Diagonal Gaussian over the motion latent, each grid (C, h, w)"""
    mu: np.ndarray
    logvar: np.ndarray

    @field_validator("mu", "logvar", mode="before")
    @classmethod
    def _coerce(cls, value):
        return _frozen_array(value)

    @model_validator(mode="after")
    def _check_latent(self):
        if self.mu.shape != self.logvar.shape:
            raise ValueError(f"mu {self.mu.shape} and logvar {self.logvar.shape} differ")
        if not (np.isfinite(self.mu).all() and np.isfinite(self.logvar).all()):
            raise ValueError("latent statistics must be finite")
        if self.logvar.size and (self.logvar.min() < -10.0 or self.logvar.max() > 10.0):
            raise ValueError("logvar must be clamped to [-10, 10]")
        return self


class PredictionOutput(ArrayModel):
    frames: VideoTensor
    latent: LatentDistribution
    sampled_z: np.ndarray

    @field_validator("sampled_z", mode="before")
    @classmethod
    def _coerce(cls, value):
        return _frozen_array(value)


# Datasets

class Clip(ArrayModel):
    """Ordered frames of one video with the flow between consecutive frames"""
    clip_id: str
    frames: List[SemanticFrame]
    flows: List[FlowField]
    labels: Optional[np.ndarray] = None

    @field_validator("labels", mode="before")
    @classmethod
    def _coerce_labels(cls, value):
        if value is None:
            return None
        return _frozen_array(value, dtype=np.int8)

    @model_validator(mode="after")
    def _check_clip(self):
        if not self.frames:
            raise ValueError(f"clip {self.clip_id} has no frames")
        indices = [f.frame_index for f in self.frames]
        if indices != list(range(len(self.frames))):
            raise ValueError(f"clip {self.clip_id}: frame indices must be contiguous from 0")
        if len(self.flows) != len(self.frames) - 1:
            raise ValueError(
                f"clip {self.clip_id}: {len(self.flows)} flows for {len(self.frames)} frames"
            )
        shape = self.frames[0].pixels.shape[:2]
        if any(f.pixels.shape[:2] != shape for f in self.frames):
            raise ValueError(f"clip {self.clip_id}: frames differ in size")
        if any(fl.uv.shape[:2] != shape for fl in self.flows):
            raise ValueError(f"clip {self.clip_id}: flow size does not match frames")
        if self.labels is not None:
            if self.labels.shape != (len(self.frames),):
                raise ValueError(
                    f"clip {self.clip_id}: {self.labels.shape[0]} labels for {len(self.frames)} frames"
                )
            if not np.isin(self.labels, (0, 1)).all():
                raise ValueError(f"clip {self.clip_id}: labels must be 0 or 1")
        return self

    @property
    def num_frames(self) -> int:
        return len(self.frames)


class ClipDataset(ArrayModel):
    split: Split
    clips: List[Clip]
    palette: ClassPalette

    @model_validator(mode="after")
    def _check_labels(self):
        for clip in self.clips:
            if self.split == Split.TRAIN and clip.labels is not None:
                raise ValueError(f"training clip {clip.clip_id} must not carry labels")
            if self.split == Split.TEST and clip.labels is None:
                raise ValueError(f"test clip {clip.clip_id} has no labels")
        return self


class TrainingSample(ArrayModel):
    """One Frame-to-Video example: initial frame t plus motion cues from t-1 -> t"""
    clip_id: str
    index: int
    initial: SemanticFrame
    direction: DirectionMap
    flow: FlowField
    target: VideoTensor


# Synthetic benchmark

class AgentSpec(BaseModel):
    class_id: int = Field(ge=1)
    shape: AgentShape = AgentShape.DISK
    size_px: int = Field(default=10, gt=0)
    speed_px_per_frame: float = Field(default=1.0, gt=0)
    heading: Heading = Heading.EAST
    heading_policy: HeadingPolicy = HeadingPolicy.BOUNCE


class AnomalySpec(BaseModel):
    """Anomaly injected into one agent; onset_frame is the 1-based ordinal of the first anomalous frame"""
    kind: AnomalyKind
    onset_frame: int = Field(ge=1)
    agent_index: int = Field(default=0, ge=0)
    speed_factor: float = Field(default=3.0, gt=0)

    @property
    def onset_index(self) -> int:
        return self.onset_frame - 1


class SceneScript(BaseModel):
    """Scripted clips sharing one agent layout; per-clip start positions come from the seed"""
    name: str
    split: Split = Split.TRAIN
    seed: int = 0
    num_clips: int = Field(default=1, ge=1)
    frames_per_clip: int = Field(default=40, ge=2)
    image_size: int = Field(default=128, gt=0)
    agents: List[AgentSpec] = Field(min_length=1)
    anomaly_spec: Optional[AnomalySpec] = None

    @model_validator(mode="after")
    def _check_anomaly(self):
        if self.anomaly_spec is None:
            return self
        if self.split == Split.TRAIN:
            raise ValueError(f"training script '{self.name}' must not contain an anomaly")
        if self.anomaly_spec.onset_frame >= self.frames_per_clip:
            raise ValueError(
                f"onset frame {self.anomaly_spec.onset_frame} outside {self.frames_per_clip} frames"
            )
        if self.anomaly_spec.agent_index >= len(self.agents):
            raise ValueError(f"anomaly agent index {self.anomaly_spec.agent_index} out of range")
        return self


class AgentPlacement(BaseModel):
    """Rendered position of one agent: top-left corner of its stamp"""
    model_config = ConfigDict(frozen=True)

    class_id: int
    shape: AgentShape
    size_px: int
    x: int
    y: int
    present: bool = True


class ClipRecord(BaseModel):
    split: Split
    clip_id: str
    num_frames: int
    anomaly_kind: Optional[AnomalyKind] = None
    anomaly_frames: Optional[Tuple[int, int]] = None
    checksum: str


class DatasetManifest(BaseModel):
    scripts: List[str]
    image_size: int
    clip_count: int
    frame_count: int
    clips: List[ClipRecord]

    def clip_kind(self, clip_id: str) -> Optional[AnomalyKind]:
        for record in self.clips:
            if record.clip_id == clip_id:
                return record.anomaly_kind
        return None


# Configuration

def _tiny_stage_channels(num_stages: int) -> List[int]:
    return [64 >> (num_stages - 1 - i) for i in range(num_stages)]


class ModelConfig(BaseModel):
    image_size: int = Field(default=128, gt=0)
    horizon: int = Field(default=10, ge=1)
    semantic_channels: int = 3
    direction_channels: int = 2
    of_input: Literal["uv", "magnitude"] = "uv"
    stage_channels: List[int] = Field(default_factory=lambda: [32, 64, 128, 256, 512], min_length=1)
    latent_spatial: int = Field(default=4, gt=0)
    leaky_slope: float = Field(default=0.1, gt=0.0, lt=1.0)
    logvar_clamp: float = Field(default=10.0, gt=0.0)
    tiny_mode: bool = False

    @model_validator(mode="before")
    @classmethod
    def _expand_tiny(cls, data):
        if isinstance(data, dict) and data.get("tiny_mode"):
            data = dict(data)
            data.setdefault("image_size", 32)
            size = int(data["image_size"])
            latent = int(data.get("latent_spatial", 4))
            stages = max(1, int(round(np.log2(size / latent))))
            data.setdefault("stage_channels", _tiny_stage_channels(stages))
        return data

    @model_validator(mode="after")
    def _check_halvings(self):
        if self.image_size != self.latent_spatial * 2 ** len(self.stage_channels):
            raise ValueError(
                f"image_size {self.image_size} must equal latent_spatial {self.latent_spatial} "
                f"* 2^{len(self.stage_channels)} stages"
            )
        return self

    @classmethod
    def tiny(cls, image_size: int = 32, **kwargs) -> "ModelConfig":
        return cls(tiny_mode=True, image_size=image_size, **kwargs)

    @property
    def num_stages(self) -> int:
        return len(self.stage_channels)

    @property
    def sm_in_channels(self) -> int:
        return self.semantic_channels + self.direction_channels

    @property
    def of_in_channels(self) -> int:
        return 2 if self.of_input == "uv" else 1

    @property
    def latent_channels(self) -> int:
        return self.stage_channels[-1]


class TrainConfig(BaseModel):
    batch_size: int = Field(default=16, ge=1)
    lr_initial: float = Field(default=1e-3, gt=0.0)
    lr_halve_every: int = Field(default=10, ge=1)
    epochs: int = Field(default=60, ge=1)
    beta: float = Field(default=1.0, ge=0.0)
    seed: int = 0
    checkpoint_every: int = Field(default=10, ge=1)
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = Field(default=1e-8, gt=0.0)
    clip_grad_norm: bool = False
    max_grad_norm: float = Field(default=5.0, gt=0.0)
    zero_noise: bool = False
    # start the output head at the training set's mean pixel value per channel
    output_prior: bool = True
    eps_motion: float = Field(default=1e-3, gt=0.0)
    device: str = "cpu"


class ScoreConfig(BaseModel):
    timestep_mode: Union[Literal["all"], int] = "all"
    smooth_window: int = 15
    smooth_polyorder: int = 3
    order: Literal["smooth_first", "normalize_first"] = "smooth_first"
    mode: InferenceMode = InferenceMode.MEAN
    seed: int = 0
    write_maps: bool = True
    batch_size: int = Field(default=16, ge=1)
    eps_motion: float = Field(default=1e-3, gt=0.0)

    @field_validator("timestep_mode", mode="before")
    @classmethod
    def _parse_timestep(cls, value):
        if isinstance(value, str) and value != "all":
            value = int(value)
        if isinstance(value, int) and value < 1:
            raise ValueError(f"timestep must be >= 1, got {value}")
        return value


class EvalConfig(BaseModel):
    aggregation: Literal["concat", "per_clip"] = "concat"
    plot_format: Literal["png", "svg"] = "png"


class BenchmarkConfig(BaseModel):
    seed: int = 0
    image_size: int = Field(default=128, gt=0)
    frames_per_clip: int = Field(default=40, ge=4)
    train_clips: int = Field(default=64, ge=1)
    normal_test_clips: int = Field(default=8, ge=0)
    novel_class_clips: int = Field(default=4, ge=0)
    fast_motion_clips: int = Field(default=2, ge=0)
    wrong_direction_clips: int = Field(default=2, ge=0)
    fast_factor: float = Field(default=3.0, gt=0.0)
    onset_frame: Optional[int] = None

    @property
    def effective_onset(self) -> int:
        return self.onset_frame if self.onset_frame is not None else self.frames_per_clip // 2


class RunConfig(BaseModel):
    data_root: Path = Path("data/bench")
    out_root: Path = Path("runs/default")
    seed: int = 0
    log_level: str = "INFO"
    enable_file_logging: bool = False
    workers: int = Field(default=4, ge=1)
    force: bool = False
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    score: ScoreConfig = Field(default_factory=ScoreConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    synth: BenchmarkConfig = Field(default_factory=BenchmarkConfig)


# Results

class LossReport(BaseModel):
    l_rec: float = Field(ge=0.0)
    l_tg: float = Field(ge=0.0)
    kl: float = Field(ge=0.0)
    beta: float = Field(ge=0.0)

    @computed_field
    @property
    def total(self) -> float:
        return self.l_rec + self.l_tg + self.beta * self.kl


class EpochRecord(BaseModel):
    epoch: int
    lr: float
    steps: int
    losses: LossReport


class TrainingSummary(BaseModel):
    epochs_run: int
    last_epoch: int
    history: List[EpochRecord] = Field(default_factory=list)
    checkpoint_path: Optional[Path] = None
    log_path: Optional[Path] = None


class AnomalyScoreSeries(ArrayModel):
    """Per-frame scores of one clip; rows of per_timestep_error align with frame_indices"""
    clip_id: str
    frame_indices: np.ndarray
    per_timestep_error: np.ndarray
    raw: np.ndarray
    smoothed: np.ndarray
    normalized: np.ndarray
    scored: np.ndarray
    timestep_mode: Union[Literal["all"], int] = "all"

    @field_validator("frame_indices", mode="before")
    @classmethod
    def _coerce_indices(cls, value):
        return _frozen_array(value, dtype=np.int64)

    @field_validator("scored", mode="before")
    @classmethod
    def _coerce_mask(cls, value):
        return _frozen_array(value, dtype=bool)

    @field_validator("per_timestep_error", "raw", "smoothed", "normalized", mode="before")
    @classmethod
    def _coerce_scores(cls, value):
        return _frozen_array(value, dtype=np.float64)

    @model_validator(mode="after")
    def _check_series(self):
        n = self.frame_indices.shape[0]
        for name in ("raw", "smoothed", "normalized", "scored"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} length does not match {n} frames")
        if self.per_timestep_error.ndim != 2 or self.per_timestep_error.shape[0] != n:
            raise ValueError("per_timestep_error must be (num_frames, horizon)")
        if n and (self.normalized.min() < 0.0 or self.normalized.max() > 1.0):
            raise ValueError("normalized scores must lie in [0, 1]")
        return self

    @property
    def horizon(self) -> int:
        return self.per_timestep_error.shape[1]


class EvalReport(BaseModel):
    auc_all: float = Field(ge=0.0, le=1.0)
    auc_per_timestep: List[float]
    num_frames: int
    num_anomalous: int
    roc_points: List[Tuple[float, float]]
    aggregation: str = "concat"
    breakdown: Dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_roc(self):
        if self.roc_points:
            if self.roc_points[0] != (0.0, 0.0) or self.roc_points[-1] != (1.0, 1.0):
                raise ValueError("ROC must run from (0, 0) to (1, 1)")
            fpr = np.array([p[0] for p in self.roc_points])
            tpr = np.array([p[1] for p in self.roc_points])
            if (np.diff(fpr) < 0).any() or (np.diff(tpr) < 0).any():
                raise ValueError("ROC points must be monotone non-decreasing")
        return self

    @property
    def columns(self) -> List[str]:
        return [f"ts_{k + 1}" for k in range(len(self.auc_per_timestep))] + ["All"]


class StageResult(BaseModel):
    """Outcome of one pipeline stage"""
    stage: str
    success: bool = True
    artifacts: Dict[str, str] = Field(default_factory=dict)
    warnings: List[str] = Field(default_factory=list)
    metadata: Dict[str, Any] = Field(default_factory=dict)
    exit_code: int = 0


class ClipScore(ArrayModel):
    """Scorer output for one clip; series is None when the clip was skipped"""
    clip_id: str
    series: Optional[AnomalyScoreSeries] = None
    maps: Optional[np.ndarray] = None
    warning: Optional[str] = None

    @property
    def skipped(self) -> bool:
        return self.series is None
