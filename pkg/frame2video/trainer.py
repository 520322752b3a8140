from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
from loguru import logger
from torch.optim.lr_scheduler import LambdaLR
from torch.utils.data import DataLoader, Dataset

from frame2video.errors import ConfigurationError, ParameterError
from frame2video.ingest import build_sample, sample_indices
from frame2video.losses import total_loss
from frame2video.models import (
    Clip, ClipDataset, EpochRecord, InferenceMode, LossReport, Split, TrainConfig, TrainingSummary
)
from frame2video.network import FrameToVideo, sample_to_tensors, save_checkpoint

LOG_COLUMNS = ["epoch", "step", "lr", "l_rec", "l_tg", "kl", "total"]


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Step schedule: lr_initial halved every lr_halve_every epochs."""
    if epoch < 0:
        raise ParameterError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr_initial * 0.5 ** (epoch // cfg.lr_halve_every)


def channel_means(clips: Sequence[Clip]) -> np.ndarray:
    """Mean value of each semantic channel over every frame of the clips."""
    total = np.zeros(3, dtype=np.float64)
    count = 0
    for clip in clips:
        for frame in clip.frames:
            pixels = frame.pixels.reshape(-1, 3)
            total += pixels.sum(axis=0, dtype=np.float64)
            count += pixels.shape[0]
    return total / max(count, 1)


class ClipSamples(Dataset):
    """(clip, t) index over training samples; each sample is built on access"""

    def __init__(self, clips: Sequence[Clip], horizon: int, eps_motion: float):
        self.clips = list(clips)
        self.horizon = horizon
        self.eps_motion = eps_motion
        self.index: List[Tuple[int, int]] = [
            (ci, t) for ci, clip in enumerate(self.clips) for t in sample_indices(clip, horizon)
        ]

    def __len__(self) -> int:
        return len(self.index)

    def __getitem__(self, i: int):
        ci, t = self.index[i]
        return sample_to_tensors(build_sample(self.clips[ci], t, self.horizon, self.eps_motion))


class Trainer:
    """Optimizes a FrameToVideo model on normal training clips"""

    def __init__(self, model: FrameToVideo, cfg: TrainConfig, out_dir: Union[str, Path]):
        self.model = model.to(cfg.device)
        self.cfg = cfg
        self.out_dir = Path(out_dir)
        self.checkpoint_dir = self.out_dir / "checkpoints"
        self.log_path = self.out_dir / "train_log.csv"

        logger.info(
            f"Trainer initialized: batch {cfg.batch_size}, lr {cfg.lr_initial:g} "
            f"halved every {cfg.lr_halve_every} epochs, beta {cfg.beta:g}, {cfg.epochs} epochs"
        )

    def fit(self, dataset: ClipDataset, resume_from: Optional[Union[str, Path]] = None) -> TrainingSummary:
        cfg = self.cfg
        if dataset.split != Split.TRAIN:
            raise ConfigurationError(f"training needs the train split, got {dataset.split.value}")

        samples = ClipSamples(dataset.clips, self.model.config.horizon, cfg.eps_motion)
        if len(samples) == 0:
            raise ConfigurationError(
                f"no training samples: clips need at least {self.model.config.horizon + 2} frames"
            )
        logger.info(f"Training on {len(samples)} samples from {len(dataset.clips)} clips")

        if resume_from is None and cfg.output_prior:
            means = channel_means(dataset.clips)
            self.model.decoder.set_output_prior(means.tolist())
            logger.debug(f"Output head starts at channel means {np.round(means, 4).tolist()}")

        loader_rng = torch.Generator().manual_seed(cfg.seed)
        noise_rng = torch.Generator().manual_seed(cfg.seed + 1)
        loader = DataLoader(samples, batch_size=cfg.batch_size, shuffle=True, generator=loader_rng, num_workers=0)

        optimizer = torch.optim.Adam(
            self.model.parameters(), lr=cfg.lr_initial, betas=cfg.adam_betas, eps=cfg.adam_eps
        )
        scheduler = LambdaLR(optimizer, lambda epoch: lr_at(epoch, cfg) / cfg.lr_initial)

        start_epoch = 0
        if resume_from is not None:
            start_epoch = self._restore(resume_from, optimizer, scheduler, loader_rng, noise_rng)
        self._prepare_log(start_epoch)

        history: List[EpochRecord] = []
        checkpoint_path = None
        if start_epoch >= cfg.epochs:
            logger.warning(f"Checkpoint already at epoch {start_epoch}; nothing to train for {cfg.epochs} epochs")

        for epoch in range(start_epoch, cfg.epochs):
            record = self._run_epoch(epoch, loader, optimizer, noise_rng)
            scheduler.step()
            history.append(record)
            logger.info(
                f"Epoch {epoch + 1}/{cfg.epochs}: lr {record.lr:.2e} l_rec {record.losses.l_rec:.5f} "
                f"l_tg {record.losses.l_tg:.5f} kl {record.losses.kl:.4f} total {record.losses.total:.5f}"
            )

            done = epoch + 1
            if done % cfg.checkpoint_every == 0 or done == cfg.epochs:
                rng_state = {"loader": loader_rng.get_state(), "noise": noise_rng.get_state()}
                for name in (f"epoch_{done:04d}.pt", "last.pt"):
                    checkpoint_path = save_checkpoint(
                        self.checkpoint_dir / name, self.model, done, optimizer, scheduler,
                        cfg.model_dump(mode="json"), rng_state
                    )

        last = self.checkpoint_dir / "last.pt"
        return TrainingSummary(
            epochs_run=len(history),
            last_epoch=start_epoch + len(history),
            history=history,
            checkpoint_path=checkpoint_path or (last if last.exists() else None),
            log_path=self.log_path,
        )

    def _run_epoch(
            self,
            epoch: int,
            loader: DataLoader,
            optimizer: torch.optim.Optimizer,
            noise_rng: torch.Generator
    ) -> EpochRecord:
        cfg = self.cfg
        config = self.model.config
        latent_shape = (config.latent_channels, config.latent_spatial, config.latent_spatial)
        lr = optimizer.param_groups[0]["lr"]

        self.model.train()
        reports: List[LossReport] = []
        rows = []
        for step, (semantic, direction, flow, target) in enumerate(loader):
            semantic, direction, flow, target = (t.to(cfg.device) for t in (semantic, direction, flow, target))
            shape = (semantic.shape[0],) + latent_shape
            if cfg.zero_noise:
                noise = torch.zeros(shape)
            else:
                noise = torch.randn(shape, generator=noise_rng)

            out = self.model(semantic, direction, flow, mode=InferenceMode.SAMPLE, noise=noise.to(cfg.device))
            loss, report = total_loss(target, out.frames, out.mu, out.logvar, cfg.beta)
            optimizer.zero_grad()
            loss.backward()
            if cfg.clip_grad_norm:
                torch.nn.utils.clip_grad_norm_(self.model.parameters(), cfg.max_grad_norm)
            optimizer.step()

            reports.append(report)
            rows.append([epoch + 1, step, lr, report.l_rec, report.l_tg, report.kl, report.total])
            logger.debug(f"epoch {epoch + 1} step {step}: total {report.total:.6f}")

        pd.DataFrame(rows, columns=LOG_COLUMNS).to_csv(self.log_path, mode="a", header=False, index=False)

        n = len(reports)
        mean = LossReport(
            l_rec=sum(r.l_rec for r in reports) / n,
            l_tg=sum(r.l_tg for r in reports) / n,
            kl=sum(r.kl for r in reports) / n,
            beta=cfg.beta,
        )
        return EpochRecord(epoch=epoch + 1, lr=lr, steps=n, losses=mean)

    def _prepare_log(self, start_epoch: int) -> None:
        """Start a fresh log, or on resume drop rows past the restored epoch."""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        if start_epoch > 0 and self.log_path.exists():
            log = pd.read_csv(self.log_path)
            log[log["epoch"] <= start_epoch].to_csv(self.log_path, index=False)
        else:
            pd.DataFrame(columns=LOG_COLUMNS).to_csv(self.log_path, index=False)

    def _restore(
            self,
            path: Union[str, Path],
            optimizer: torch.optim.Optimizer,
            scheduler: LambdaLR,
            loader_rng: torch.Generator,
            noise_rng: torch.Generator
    ) -> int:
        payload = torch.load(path, map_location=self.cfg.device, weights_only=True)
        if payload.get("model_config") != self.model.config.model_dump(mode="json"):
            raise ConfigurationError(f"checkpoint {path} was trained with a different model configuration")

        self.model.load_state_dict(payload["state_dict"])
        if payload.get("optimizer") is not None:
            optimizer.load_state_dict(payload["optimizer"])
        if payload.get("scheduler") is not None:
            scheduler.load_state_dict(payload["scheduler"])
        rng_state = payload.get("rng_state") or {}
        if "loader" in rng_state:
            loader_rng.set_state(rng_state["loader"])
        if "noise" in rng_state:
            noise_rng.set_state(rng_state["noise"])

        logger.info(f"Resuming from {path} at epoch {payload['epoch']}")
        return int(payload["epoch"])
