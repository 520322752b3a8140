"""Frame-to-Video network: semantic-map encoder, variational flow encoder, shared decoder."""
import pickle
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
from loguru import logger

from frame2video.errors import ConfigurationError, ParameterError, ShapeError
from frame2video.models import (
    DirectionMap, FlowField, InferenceMode, LatentDistribution, ModelConfig, PredictionOutput,
    SemanticFrame, TrainingSample, VideoTensor
)

CHECKPOINT_FORMAT = "frame2video-checkpoint"


class Prediction(NamedTuple):
    frames: torch.Tensor  # (B, horizon, 3, H, W)
    mu: torch.Tensor
    logvar: torch.Tensor
    z: torch.Tensor


def init_weights(module: nn.Module, slope: float = 0.1) -> None:
    """Fan-in scaled uniform weights, zero biases."""
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
        nn.init.kaiming_uniform_(module.weight, a=slope, mode="fan_in", nonlinearity="leaky_relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)


class ConvStage(nn.Sequential):
    """Two 3x3 convolutions, each followed by LeakyReLU"""

    def __init__(self, in_channels: int, out_channels: int, slope: float):
        super().__init__(
            nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1),
            nn.LeakyReLU(slope),
            nn.Conv2d(out_channels, out_channels, kernel_size=3, padding=1),
            nn.LeakyReLU(slope),
        )


class ConvTrunk(nn.Module):
    """Stages of ConvStage + 2x2 max pooling; keeps each pre-pool activation as a skip"""

    def __init__(self, in_channels: int, stage_channels: List[int], slope: float):
        super().__init__()
        channels = [in_channels] + list(stage_channels)
        self.stages = nn.ModuleList(
            ConvStage(channels[i], channels[i + 1], slope) for i in range(len(stage_channels))
        )
        self.pool = nn.MaxPool2d(2)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, List[torch.Tensor]]:
        skips = []
        for stage in self.stages:
            x = stage(x)
            skips.append(x)
            x = self.pool(x)
        return x, skips


class OpticalFlowEncoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        latent = config.latent_channels
        self.trunk = ConvTrunk(config.of_in_channels, config.stage_channels, config.leaky_slope)
        self.mu_head = nn.Conv2d(latent, latent, kernel_size=3, padding=1)
        self.logvar_head = nn.Conv2d(latent, latent, kernel_size=3, padding=1)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        features, _ = self.trunk(x)
        return self.mu_head(features), self.logvar_head(features)


class SharedDecoder(nn.Module):
    """Transposed-conv upsampling with semantic-encoder skips, emitting all future frames jointly"""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.horizon = config.horizon
        self.semantic_channels = config.semantic_channels
        self.act = nn.LeakyReLU(config.leaky_slope)

        in_channels = 2 * config.latent_channels
        ups = []
        for out_channels in reversed(config.stage_channels):
            ups.append(nn.ConvTranspose2d(in_channels, out_channels, kernel_size=2, stride=2))
            in_channels = 2 * out_channels
        self.ups = nn.ModuleList(ups)
        self.head = nn.Conv2d(in_channels, config.horizon * config.semantic_channels, kernel_size=3, padding=1)

    def forward(self, features: torch.Tensor, z: torch.Tensor, skips: List[torch.Tensor]) -> torch.Tensor:
        x = torch.cat([features, z], dim=1)
        for up, skip in zip(self.ups, reversed(skips)):
            x = torch.cat([self.act(up(x)), skip], dim=1)
        out = torch.sigmoid(self.head(x))
        b, _, h, w = out.shape
        return out.view(b, self.horizon, self.semantic_channels, h, w)

    @torch.no_grad()
    def set_output_prior(self, channel_means: Sequence[float], eps: float = 1e-3) -> None:
        """Set the head bias to logit(mean) per semantic channel, repeated over the horizon."""
        means = torch.as_tensor(channel_means, dtype=self.head.bias.dtype, device=self.head.bias.device)
        if means.shape != (self.semantic_channels,):
            raise ShapeError("channel means", (self.semantic_channels,), tuple(means.shape))
        self.head.bias.copy_(torch.logit(means.clamp(eps, 1.0 - eps)).repeat(self.horizon))


class FrameToVideo(nn.Module):
    """Predicts `horizon` future semantic frames from one semantic frame plus its initial motion."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.sm_encoder = ConvTrunk(config.sm_in_channels, config.stage_channels, config.leaky_slope)
        self.of_encoder = OpticalFlowEncoder(config)
        self.decoder = SharedDecoder(config)
        self.apply(lambda m: init_weights(m, config.leaky_slope))

        params = sum(p.numel() for p in self.parameters())
        logger.debug(f"FrameToVideo initialized: {config.num_stages} stages, {params:,} parameters")

    def _check_input(self, x: torch.Tensor, channels: int, what: str) -> None:
        size = self.config.image_size
        expected = (channels, size, size)
        if x.dim() != 4 or tuple(x.shape[1:]) != expected:
            actual = tuple(x.shape[1:]) if x.dim() == 4 else tuple(x.shape)
            raise ShapeError(what, expected, actual)

    def sm_encode(
            self,
            semantic: torch.Tensor,
            direction: torch.Tensor
    ) -> Tuple[torch.Tensor, List[torch.Tensor]]:
        self._check_input(semantic, self.config.semantic_channels, "semantic frame")
        self._check_input(direction, self.config.direction_channels, "direction map")
        return self.sm_encoder(torch.cat([semantic, direction], dim=1))

    def of_encode(self, flow: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        self._check_input(flow, 2, "flow field")
        if self.config.of_input == "magnitude":
            flow = torch.linalg.vector_norm(flow, dim=1, keepdim=True)
        mu, logvar = self.of_encoder(flow)
        clamp = self.config.logvar_clamp
        return mu, torch.clamp(logvar, -clamp, clamp)

    @staticmethod
    def reparameterize(mu: torch.Tensor, logvar: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
        if noise.shape != mu.shape:
            raise ShapeError("reparameterization noise", tuple(mu.shape), tuple(noise.shape))
        return mu + torch.exp(0.5 * logvar) * noise

    def decode(self, features: torch.Tensor, z: torch.Tensor, skips: List[torch.Tensor]) -> torch.Tensor:
        c, s = self.config.latent_channels, self.config.latent_spatial
        for what, t in (("encoded features", features), ("motion latent", z)):
            if t.dim() != 4 or tuple(t.shape[1:]) != (c, s, s):
                raise ShapeError(what, (c, s, s), tuple(t.shape[1:]))
        if len(skips) != self.config.num_stages:
            raise ShapeError("skip connections", (self.config.num_stages,), (len(skips),))
        return self.decoder(features, z, skips)

    def forward(
            self,
            semantic: torch.Tensor,
            direction: torch.Tensor,
            flow: torch.Tensor,
            mode: Union[InferenceMode, str] = InferenceMode.MEAN,
            noise: Optional[torch.Tensor] = None,
            generator: Optional[torch.Generator] = None
    ) -> Prediction:
        mode = InferenceMode(mode)
        features, skips = self.sm_encode(semantic, direction)
        mu, logvar = self.of_encode(flow)

        if mode == InferenceMode.MEAN:
            z = mu
        else:
            if noise is None:
                if generator is None:
                    raise ParameterError("sample mode needs a seed/generator or explicit noise")
                noise = torch.randn(mu.shape, generator=generator, dtype=mu.dtype, device=mu.device)
            z = self.reparameterize(mu, logvar, noise)

        return Prediction(frames=self.decode(features, z, skips), mu=mu, logvar=logvar, z=z)


# numpy <-> torch

def _channels_first(array: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(np.moveaxis(array, -1, -3), dtype=np.float32))


def frame_to_tensor(frame: SemanticFrame) -> torch.Tensor:
    return _channels_first(frame.pixels)


def direction_to_tensor(direction: DirectionMap) -> torch.Tensor:
    return _channels_first(direction.data)


def flow_to_tensor(flow: FlowField) -> torch.Tensor:
    return _channels_first(flow.uv)


def video_to_tensor(video: VideoTensor) -> torch.Tensor:
    return _channels_first(video.frames)


def sample_to_tensors(sample: TrainingSample) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    return (
        frame_to_tensor(sample.initial),
        direction_to_tensor(sample.direction),
        flow_to_tensor(sample.flow),
        video_to_tensor(sample.target),
    )


@torch.no_grad()
def predict(
        model: FrameToVideo,
        initial: SemanticFrame,
        direction: DirectionMap,
        flow: FlowField,
        mode: Union[InferenceMode, str] = InferenceMode.MEAN,
        seed: Optional[int] = None,
        noise: Optional[np.ndarray] = None
) -> PredictionOutput:
    """Single-example forward pass returning numpy-backed domain types."""
    generator = torch.Generator().manual_seed(seed) if seed is not None else None
    noise_t = torch.from_numpy(np.asarray(noise, dtype=np.float32))[None] if noise is not None else None
    device = next(model.parameters()).device
    out = model(
        frame_to_tensor(initial)[None].to(device),
        direction_to_tensor(direction)[None].to(device),
        flow_to_tensor(flow)[None].to(device),
        mode=mode,
        noise=noise_t.to(device) if noise_t is not None else None,
        generator=generator,
    )
    frames = out.frames[0].permute(0, 2, 3, 1).cpu().numpy()
    return PredictionOutput(
        frames=VideoTensor(frames=frames),
        latent=LatentDistribution(mu=out.mu[0].cpu().numpy(), logvar=out.logvar[0].cpu().numpy()),
        sampled_z=out.z[0].cpu().numpy(),
    )


# Checkpoints

def save_checkpoint(
        path: Union[str, Path],
        model: FrameToVideo,
        epoch: int,
        optimizer: Optional[torch.optim.Optimizer] = None,
        scheduler: Optional[Any] = None,
        train_config: Optional[Dict[str, Any]] = None,
        rng_state: Optional[Dict[str, torch.Tensor]] = None
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "model_config": model.config.model_dump(mode="json"),
        "state_dict": {k: v.detach().to(torch.float32).cpu() for k, v in model.state_dict().items()},
        "epoch": epoch,
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "scheduler": scheduler.state_dict() if scheduler is not None else None,
        "train_config": train_config,
        "rng_state": rng_state,
    }
    torch.save(payload, path)
    logger.debug(f"Saved checkpoint for epoch {epoch} to {path}")
    return path


def load_checkpoint(
        path: Union[str, Path],
        device: str = "cpu"
) -> Tuple[FrameToVideo, Dict[str, Any]]:
    """Rebuild the model from a checkpoint; returns (model, raw payload)."""
    try:
        payload = torch.load(path, map_location=device, weights_only=True)
    except FileNotFoundError:
        raise ConfigurationError(f"checkpoint not found: {path}")
    except (pickle.UnpicklingError, RuntimeError, EOFError) as e:
        raise ConfigurationError(f"{path} is not a frame2video checkpoint: {e}") from e
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"{path} is not a frame2video checkpoint")
    model = FrameToVideo(ModelConfig.model_validate(payload["model_config"]))
    model.load_state_dict(payload["state_dict"])
    model.to(device)
    logger.info(f"Loaded checkpoint {path} (epoch {payload['epoch']})")
    return model, payload
