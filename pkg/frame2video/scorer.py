"""Prediction-error anomaly scoring: per-frame scores, smoothing, per-clip normalization, anomaly maps."""
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.polynomial.polynomial as P
import pandas as pd
import torch
from loguru import logger
from PIL import Image
from scipy.signal import savgol_filter

from frame2video.core import to_uint8
from frame2video.errors import InvalidInputError, ParameterError
from frame2video.ingest import build_sample, sample_indices
from frame2video.models import AnomalyScoreSeries, Clip, ClipDataset, ClipScore, InferenceMode, ScoreConfig
from frame2video.network import FrameToVideo, sample_to_tensors

SCORE_COLUMNS = ["clip_id", "frame_index", "raw", "smoothed", "normalized", "scored"]


def smooth_scores(raw: np.ndarray, window: int = 15, polyorder: int = 3) -> np.ndarray:
    """
    Savitzky-Golay smoothing with a symmetric window.

    Within half a window of either end, the polynomial is fitted to the truncated
    window [i - half, i + half] clipped to the series, and evaluated at i. The degree
    drops when the truncated window holds fewer than polyorder + 1 samples.
    Series shorter than the window pass through unchanged.
    """
    if window < 1 or window % 2 == 0:
        raise ParameterError(f"smoothing window must be a positive odd integer, got {window}")
    if polyorder < 0 or polyorder >= window:
        raise ParameterError(f"polyorder must lie in [0, {window - 1}], got {polyorder}")

    raw = np.asarray(raw, dtype=np.float64)
    n = raw.size
    if n < window:
        logger.warning(f"Series of {n} frames is shorter than window {window}; smoothing skipped")
        return raw.copy()

    smoothed = savgol_filter(raw, window, polyorder, mode="interp")
    half = window // 2
    for i in [*range(half), *range(n - half, n)]:
        lo, hi = max(0, i - half), min(n, i + half + 1)
        degree = min(polyorder, hi - lo - 1)
        # centred on i, so the constant coefficient is the fitted value at i
        coef = P.polyfit(np.arange(lo, hi) - i, raw[lo:hi], degree)
        smoothed[i] = coef[0]
    return smoothed


def normalize_scores(s: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant series maps to zeros."""
    s = np.asarray(s, dtype=np.float64)
    if s.size == 0:
        raise InvalidInputError("cannot normalize an empty score series")
    lo, hi = s.min(), s.max()
    if hi == lo:
        return np.zeros_like(s)
    return (s - lo) / (hi - lo)


def postprocess(raw: np.ndarray, cfg: ScoreConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (smoothed, normalized) in the configured order."""
    if cfg.order == "smooth_first":
        smoothed = smooth_scores(raw, cfg.smooth_window, cfg.smooth_polyorder)
        return smoothed, normalize_scores(smoothed)
    smoothed = smooth_scores(normalize_scores(raw), cfg.smooth_window, cfg.smooth_polyorder)
    return smoothed, np.clip(smoothed, 0.0, 1.0)


def select_raw(per_timestep_error: np.ndarray, timestep_mode: Union[str, int]) -> np.ndarray:
    if timestep_mode == "all":
        return per_timestep_error.mean(axis=1)
    return per_timestep_error[:, int(timestep_mode) - 1]


class Scorer:
    """Scores test clips against a frozen FrameToVideo model"""

    def __init__(self, model: FrameToVideo, cfg: ScoreConfig, device: str = "cpu"):
        self.model = model.to(device).eval()
        for p in self.model.parameters():
            p.requires_grad_(False)
        self.cfg = cfg
        self.device = device
        self.horizon = model.config.horizon

        if cfg.timestep_mode != "all" and cfg.timestep_mode > self.horizon:
            raise ParameterError(f"timestep {cfg.timestep_mode} exceeds horizon {self.horizon}")
        # Fail on bad smoothing parameters before any clip is scored
        smooth_scores(np.zeros(cfg.smooth_window), cfg.smooth_window, cfg.smooth_polyorder)

        logger.info(
            f"Scorer initialized: timestep {cfg.timestep_mode}, window {cfg.smooth_window}, "
            f"polyorder {cfg.smooth_polyorder}, order {cfg.order}, mode {cfg.mode.value}"
        )

    def score_clip(self, clip: Clip, seed_offset: int = 0) -> ClipScore:
        n = clip.num_frames
        if n < self.horizon + 2:
            message = f"clip {clip.clip_id} has {n} frames, needs {self.horizon + 2}; skipped"
            logger.warning(message)
            return ClipScore(clip_id=clip.clip_id, warning=message)

        generator = None
        if self.cfg.mode == InferenceMode.SAMPLE:
            generator = torch.Generator().manual_seed(self.cfg.seed + seed_offset)

        indices = list(sample_indices(clip, self.horizon))
        errors, maps = [], []
        with torch.inference_mode():
            for start in range(0, len(indices), self.cfg.batch_size):
                batch = [
                    sample_to_tensors(build_sample(clip, t, self.horizon, self.cfg.eps_motion))
                    for t in indices[start:start + self.cfg.batch_size]
                ]
                semantic, direction, flow, target = (torch.stack(x).to(self.device) for x in zip(*batch))
                out = self.model(semantic, direction, flow, mode=self.cfg.mode, generator=generator)
                squared = (out.frames - target) ** 2  # (B, horizon, 3, H, W)
                errors.append(squared.mean(dim=(2, 3, 4)).double().cpu().numpy())
                maps.append(squared.mean(dim=2).cpu().numpy())

        scored_error = np.concatenate(errors)
        first, last = indices[0], indices[-1]
        nearest = np.clip(np.arange(n), first, last) - first
        per_timestep_error = scored_error[nearest]

        raw = select_raw(per_timestep_error, self.cfg.timestep_mode)
        smoothed, normalized = postprocess(raw, self.cfg)
        series = AnomalyScoreSeries(
            clip_id=clip.clip_id,
            frame_indices=np.arange(n),
            per_timestep_error=per_timestep_error,
            raw=raw,
            smoothed=smoothed,
            normalized=normalized,
            scored=(np.arange(n) >= first) & (np.arange(n) <= last),
            timestep_mode=self.cfg.timestep_mode,
        )
        logger.debug(f"Scored {clip.clip_id}: frames {first}..{last}, raw max {raw.max():.5f}")
        return ClipScore(clip_id=clip.clip_id, series=series, maps=np.concatenate(maps))

    def score_dataset(
            self,
            dataset: ClipDataset,
            out_dir: Optional[Union[str, Path]] = None,
            workers: int = 1
    ) -> List[ClipScore]:
        """
        Score every clip. When out_dir is given and write_maps is on, anomaly maps are
        written per clip and dropped from the returned results.
        """
        def run(item):
            offset, clip = item
            result = self.score_clip(clip, seed_offset=offset)
            if out_dir is not None and self.cfg.write_maps and not result.skipped:
                write_maps(result, first_frame=int(np.argmax(result.series.scored)), out_dir=out_dir)
                result = result.model_copy(update={"maps": None})
            return result

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, enumerate(dataset.clips)))

        skipped = [r.clip_id for r in results if r.skipped]
        logger.info(f"Scored {len(results) - len(skipped)} clips, skipped {len(skipped)}")
        return results


def write_maps(result: ClipScore, first_frame: int, out_dir: Union[str, Path]) -> Path:
    """8-bit grayscale PNG per (initial frame, timestep) under out_dir/<clip>/maps/."""
    maps_dir = Path(out_dir) / result.clip_id / "maps"
    maps_dir.mkdir(parents=True, exist_ok=True)
    for i, frame_maps in enumerate(result.maps):
        for k, error_map in enumerate(frame_maps):
            path = maps_dir / f"{first_frame + i:06d}_ts{k + 1:02d}.png"
            Image.fromarray(to_uint8(np.clip(error_map, 0.0, 1.0))).save(path)
    return maps_dir


def write_scores(results: Sequence[ClipScore], path: Union[str, Path]) -> Path:
    """Scores CSV: clip_id, frame_index, raw, smoothed, normalized, scored, ts_1..ts_H."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tables = []
    for result in results:
        if result.skipped:
            continue
        s = result.series
        table = pd.DataFrame({
            "clip_id": s.clip_id,
            "frame_index": s.frame_indices,
            "raw": s.raw,
            "smoothed": s.smoothed,
            "normalized": s.normalized,
            "scored": s.scored.astype(int),
        })
        for k in range(s.horizon):
            table[f"ts_{k + 1}"] = s.per_timestep_error[:, k]
        tables.append(table)
    if not tables:
        raise InvalidInputError("no clip produced scores")

    pd.concat(tables, ignore_index=True).to_csv(path, index=False)
    logger.info(f"Wrote scores for {len(tables)} clips to {path}")
    return path


def read_scores(path: Union[str, Path], timestep_mode: Union[str, int] = "all") -> List[AnomalyScoreSeries]:
    table = pd.read_csv(path, dtype={"clip_id": str})
    missing = [c for c in SCORE_COLUMNS if c not in table.columns]
    if missing:
        raise InvalidInputError(f"scores file {path} lacks columns {missing}")
    ts_columns = [c for c in table.columns if c.startswith("ts_")]
    ts_columns.sort(key=lambda c: int(c[3:]))

    series = []
    for clip_id, rows in table.groupby("clip_id", sort=False):
        rows = rows.sort_values("frame_index")
        series.append(AnomalyScoreSeries(
            clip_id=clip_id,
            frame_indices=rows["frame_index"].to_numpy(),
            per_timestep_error=rows[ts_columns].to_numpy(dtype=np.float64),
            raw=rows["raw"].to_numpy(),
            smoothed=rows["smoothed"].to_numpy(),
            normalized=rows["normalized"].to_numpy(),
            scored=rows["scored"].to_numpy().astype(bool),
            timestep_mode=timestep_mode,
        ))
    return series
