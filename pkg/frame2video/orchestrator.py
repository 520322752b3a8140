from pathlib import Path
from typing import Callable, Dict, Optional, Union

import numpy as np
from loguru import logger
from pydantic import ValidationError

from frame2video.errors import ConfigurationError, Frame2VideoError
from frame2video.evaluator import evaluate, read_report, write_report
from frame2video.ingest import load_dataset, load_test_labels
from frame2video.models import RunConfig, Split, StageResult
from frame2video.network import FrameToVideo, load_checkpoint
from frame2video.plots import (
    plot_prediction_panel, plot_roc, plot_timelines, plot_timestep_aucs, plot_training_curve
)
from frame2video.scorer import Scorer, read_scores, write_scores
from frame2video.synth import default_benchmark, gen_dataset, load_manifest
from frame2video.trainer import Trainer
from frame2video.utils import seed_everything

PathLike = Union[str, Path]


class Orchestrator:
    """Runs the synth -> train -> score -> eval -> plot pipeline over one RunConfig"""

    def __init__(self, config: RunConfig):
        self.config = config
        self.out_root = Path(config.out_root)
        self.data_root = Path(config.data_root)

        logger.info(f"Orchestrator initialized: data {self.data_root}, output {self.out_root}")

    @property
    def last_checkpoint(self) -> Path:
        return self.out_root / "checkpoints" / "last.pt"

    @property
    def scores_path(self) -> Path:
        return self.out_root / "scores.csv"

    def _run_stage(self, stage: str, fn: Callable[[StageResult], None]) -> StageResult:
        """Run one stage; failures come back as an unsuccessful StageResult."""
        result = StageResult(stage=stage)
        try:
            logger.info(f"Stage '{stage}' started")
            fn(result)
            logger.info(f"Stage '{stage}' finished")
            return result
        except Frame2VideoError as e:
            logger.error(f"Stage '{stage}' failed: {e}")
            error, code = str(e), e.exit_code
        except ValidationError as e:
            logger.error(f"Stage '{stage}' rejected its configuration: {e}")
            error, code = str(e), 2
        except Exception as e:
            logger.exception(f"Stage '{stage}' failed: {e}")
            error, code = str(e), 1
        return StageResult(
            stage=stage,
            success=False,
            artifacts=result.artifacts,
            warnings=result.warnings + [f"{stage} failed: {error}"],
            metadata={"error": error},
            exit_code=code,
        )

    # Stages

    def synth(self) -> StageResult:
        def stage(result: StageResult) -> None:
            cfg = self.config
            scripts = default_benchmark(cfg.synth)
            manifest = gen_dataset(scripts, self.data_root, force=cfg.force, workers=cfg.workers)
            result.artifacts["manifest"] = str(self.data_root / "manifest.json")
            result.metadata.update(clip_count=manifest.clip_count, frame_count=manifest.frame_count)

        return self._run_stage("synth", stage)

    def train(self, resume_from: Optional[PathLike] = None) -> StageResult:
        def stage(result: StageResult) -> None:
            cfg = self.config
            dataset = load_dataset(self.data_root, Split.TRAIN, cfg.model.image_size, cfg.workers)
            seed_everything(cfg.train.seed)
            model = FrameToVideo(cfg.model)
            summary = Trainer(model, cfg.train, self.out_root).fit(dataset, resume_from=resume_from)

            result.artifacts["log"] = str(summary.log_path)
            if summary.checkpoint_path is not None:
                result.artifacts["checkpoint"] = str(summary.checkpoint_path)
            result.metadata.update(epochs_run=summary.epochs_run, last_epoch=summary.last_epoch)
            if summary.history:
                result.metadata["final_losses"] = summary.history[-1].losses.model_dump()
            else:
                result.warnings.append("no epochs were run")

        return self._run_stage("train", stage)

    def score(self, checkpoint: Optional[PathLike] = None) -> StageResult:
        def stage(result: StageResult) -> None:
            cfg = self.config
            path = Path(checkpoint) if checkpoint else self.last_checkpoint
            if not path.exists():
                raise ConfigurationError(f"checkpoint not found: {path}")
            model, _ = load_checkpoint(path, device=cfg.train.device)
            dataset = load_dataset(self.data_root, Split.TEST, model.config.image_size, cfg.workers)

            scorer = Scorer(model, cfg.score, device=cfg.train.device)
            results = scorer.score_dataset(dataset, out_dir=self.out_root, workers=cfg.workers)
            write_scores(results, self.scores_path)

            result.artifacts["scores"] = str(self.scores_path)
            result.warnings.extend(r.warning for r in results if r.skipped)
            result.metadata["clips_scored"] = sum(1 for r in results if not r.skipped)

        return self._run_stage("score", stage)

    def evaluate(self, scores: Optional[PathLike] = None) -> StageResult:
        def stage(result: StageResult) -> None:
            cfg = self.config
            path = Path(scores) if scores else self.scores_path
            if not path.exists():
                raise ConfigurationError(f"scores file not found: {path}")
            series = read_scores(path, cfg.score.timestep_mode)
            labels = load_test_labels(self.data_root)

            manifest = load_manifest(self.data_root)
            clip_kinds = None
            if manifest is not None:
                clip_kinds = {r.clip_id: r.anomaly_kind for r in manifest.clips if r.split == Split.TEST}

            report = evaluate(series, labels, cfg.score, cfg.eval, clip_kinds)
            paths = write_report(report, self.out_root)
            result.artifacts.update({name: str(p) for name, p in paths.items()})
            result.metadata.update(auc_all=report.auc_all, breakdown=report.breakdown)

        return self._run_stage("eval", stage)

    def plot(self, checkpoint: Optional[PathLike] = None) -> StageResult:
        def stage(result: StageResult) -> None:
            cfg = self.config
            fmt = cfg.eval.plot_format
            plots_dir = self.out_root / "plots"
            report_path = self.out_root / "report.json"
            if not report_path.exists():
                raise ConfigurationError(f"no evaluation report at {report_path}; run eval first")
            report = read_report(report_path)

            result.artifacts["roc"] = str(plot_roc(report, plots_dir / f"roc.{fmt}"))
            result.artifacts["timestep_aucs"] = str(plot_timestep_aucs(report, plots_dir / f"timestep_auc.{fmt}"))

            labels = load_test_labels(self.data_root)
            if self.scores_path.exists():
                timelines = plot_timelines(read_scores(self.scores_path), labels, plots_dir / "timelines", fmt)
                result.metadata["timelines"] = len(timelines)

            log_path = self.out_root / "train_log.csv"
            if log_path.exists():
                result.artifacts["training"] = str(plot_training_curve(log_path, plots_dir / f"training.{fmt}"))

            path = Path(checkpoint) if checkpoint else self.last_checkpoint
            if path.exists():
                panel = self._prediction_panel(path, labels, plots_dir / f"prediction_panel.{fmt}")
                if panel is not None:
                    result.artifacts["prediction_panel"] = str(panel)
            else:
                result.warnings.append(f"no checkpoint at {path}; prediction panel skipped")

        return self._run_stage("plot", stage)

    def _prediction_panel(self, checkpoint: Path, labels: Dict[str, np.ndarray], path: Path) -> Optional[Path]:
        """Panel for the first anomalous test clip, starting a few frames before its onset."""
        anomalous = [clip_id for clip_id, y in labels.items() if y.any()]
        if not anomalous:
            return None
        model, _ = load_checkpoint(checkpoint, device=self.config.train.device)
        dataset = load_dataset(self.data_root, Split.TEST, model.config.image_size, self.config.workers)
        clip = next(c for c in dataset.clips if c.clip_id == anomalous[0])

        last_valid = clip.num_frames - model.config.horizon - 1
        if last_valid < 1:
            return None
        onset = int(np.argmax(labels[clip.clip_id]))
        t = min(max(1, onset - 3), last_valid)
        return plot_prediction_panel(model, clip, t, path, eps_motion=self.config.score.eps_motion)

    def run(self) -> StageResult:
        """Full pipeline; reuses an existing dataset unless force is set."""
        results = []
        if load_manifest(self.data_root) is None or self.config.force:
            results.append(self.synth())
        else:
            logger.info(f"Reusing dataset at {self.data_root}")

        for step in (self.train, self.score, self.evaluate, self.plot):
            if results and not results[-1].success:
                break
            results.append(step())

        artifacts, warnings = {}, []
        for r in results:
            artifacts.update(r.artifacts)
            warnings.extend(r.warnings)
        failed = next((r for r in results if not r.success), None)
        return StageResult(
            stage="run",
            success=failed is None,
            artifacts=artifacts,
            warnings=warnings,
            metadata={r.stage: r.metadata for r in results},
            exit_code=failed.exit_code if failed else 0,
        )
