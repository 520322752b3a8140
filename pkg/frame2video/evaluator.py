import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger
from sklearn.metrics import auc, roc_curve

from frame2video.errors import InvalidInputError, UndefinedMetricError
from frame2video.models import AnomalyKind, AnomalyScoreSeries, EvalConfig, EvalReport, ScoreConfig
from frame2video.scorer import postprocess


def _check_inputs(scores, labels) -> Tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise InvalidInputError(f"{scores.size} scores for {labels.size} labels")
    if not np.isfinite(scores).all():
        raise InvalidInputError("scores contain non-finite values")
    if not np.isin(labels, (0, 1)).all():
        raise InvalidInputError("labels must be 0 or 1")
    if np.unique(labels).size < 2:
        raise UndefinedMetricError("AUC is undefined when labels hold a single class")
    return scores, labels.astype(np.int64)


def roc_points(scores, labels) -> List[Tuple[float, float]]:
    """(fpr, tpr) at every distinct threshold, from (0, 0) to (1, 1)."""
    scores, labels = _check_inputs(scores, labels)
    fpr, tpr, _ = roc_curve(labels, scores, drop_intermediate=False)
    return [(float(f), float(t)) for f, t in zip(fpr, tpr)]


def frame_auc(scores, labels) -> float:
    """
    Frame-level AUC from a threshold sweep over distinct scores.

    Tied scores enter the positive set together, which gives half credit per tie
    under trapezoidal integration.
    """
    scores, labels = _check_inputs(scores, labels)
    fpr, tpr, _ = roc_curve(labels, scores, drop_intermediate=False)
    return float(auc(fpr, tpr))


def _aggregate_auc(scores: List[np.ndarray], labels: List[np.ndarray], aggregation: str) -> float:
    if aggregation == "concat":
        return frame_auc(np.concatenate(scores), np.concatenate(labels))

    per_clip = [frame_auc(s, y) for s, y in zip(scores, labels) if np.unique(y).size == 2]
    if not per_clip:
        raise UndefinedMetricError("no clip holds both normal and anomalous frames")
    return float(np.mean(per_clip))


def _align(
        series: Sequence[AnomalyScoreSeries],
        labels: Dict[str, np.ndarray]
) -> List[Tuple[AnomalyScoreSeries, np.ndarray]]:
    pairs = []
    for s in series:
        if s.clip_id not in labels:
            raise InvalidInputError(f"no labels for clip {s.clip_id}")
        y = np.asarray(labels[s.clip_id])
        if y.shape[0] != s.frame_indices.shape[0]:
            raise InvalidInputError(f"clip {s.clip_id}: {s.frame_indices.shape[0]} scores for {y.shape[0]} labels")
        pairs.append((s, y[s.frame_indices]))

    unscored = sorted(set(labels) - {s.clip_id for s in series})
    if unscored:
        logger.warning(f"{len(unscored)} labeled clips have no scores: {unscored}")
    return pairs


def evaluate(
        series: Sequence[AnomalyScoreSeries],
        labels: Dict[str, np.ndarray],
        score_cfg: Optional[ScoreConfig] = None,
        cfg: Optional[EvalConfig] = None,
        clip_kinds: Optional[Dict[str, Optional[AnomalyKind]]] = None
) -> EvalReport:
    """
    Frame-level AUC of the normalized scores plus one AUC per prediction timestep.

    Each timestep column goes through the same per-clip smoothing and normalization as the
    headline score. With clip_kinds, every anomaly kind is also scored against all normal clips.
    """
    score_cfg = score_cfg or ScoreConfig()
    cfg = cfg or EvalConfig()
    pairs = _align(series, labels)
    if not pairs:
        raise InvalidInputError("no scored clips to evaluate")

    normalized = [s.normalized for s, _ in pairs]
    frame_labels = [y for _, y in pairs]
    concat_labels = np.concatenate(frame_labels)

    auc_all = _aggregate_auc(normalized, frame_labels, cfg.aggregation)
    horizon = pairs[0][0].horizon
    auc_per_timestep = []
    for k in range(horizon):
        columns = [postprocess(s.per_timestep_error[:, k], score_cfg)[1] for s, _ in pairs]
        auc_per_timestep.append(_aggregate_auc(columns, frame_labels, cfg.aggregation))

    breakdown = {}
    if clip_kinds:
        breakdown = _kind_breakdown(pairs, clip_kinds, cfg.aggregation)

    report = EvalReport(
        auc_all=auc_all,
        auc_per_timestep=auc_per_timestep,
        num_frames=int(concat_labels.size),
        num_anomalous=int(concat_labels.sum()),
        roc_points=roc_points(np.concatenate(normalized), concat_labels),
        aggregation=cfg.aggregation,
        breakdown=breakdown,
    )
    logger.info(
        f"Evaluated {len(pairs)} clips ({report.num_frames} frames, {report.num_anomalous} anomalous): "
        f"AUC {report.auc_all:.4f}"
    )
    return report


def _kind_breakdown(
        pairs: List[Tuple[AnomalyScoreSeries, np.ndarray]],
        clip_kinds: Dict[str, Optional[AnomalyKind]],
        aggregation: str
) -> Dict[str, float]:
    normal = [(s, y) for s, y in pairs if clip_kinds.get(s.clip_id) is None]
    breakdown = {}
    for kind in AnomalyKind:
        subset = [(s, y) for s, y in pairs if clip_kinds.get(s.clip_id) == kind]
        if not subset:
            continue
        subset += normal
        try:
            breakdown[kind.value] = _aggregate_auc(
                [s.normalized for s, _ in subset], [y for _, y in subset], aggregation
            )
        except UndefinedMetricError as e:
            logger.warning(f"No AUC for {kind.value} clips: {e}")
    return breakdown


def write_report(report: EvalReport, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """report.json plus auc_table.csv with columns ts_1..ts_H, All."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    json_path = out_dir / "report.json"
    with open(json_path, "w") as f:
        json.dump(report.model_dump(mode="json"), f, indent=2)
        f.write("\n")

    table_path = out_dir / "auc_table.csv"
    pd.DataFrame([report.auc_per_timestep + [report.auc_all]], columns=report.columns).to_csv(
        table_path, index=False
    )
    logger.info(f"Wrote evaluation report to {json_path}")
    return {"report": json_path, "auc_table": table_path}


def read_report(path: Union[str, Path]) -> EvalReport:
    with open(path) as f:
        return EvalReport.model_validate(json.load(f))
