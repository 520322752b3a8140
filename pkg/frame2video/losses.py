from typing import Tuple

import torch
import torch.nn.functional as F

from frame2video.errors import ArityError, NumericError, ParameterError, ShapeError
from frame2video.models import LossReport


def _same_shape(y: torch.Tensor, y_hat: torch.Tensor) -> None:
    if y.shape != y_hat.shape:
        raise ShapeError("prediction", tuple(y.shape), tuple(y_hat.shape))


def l_rec(y: torch.Tensor, y_hat: torch.Tensor) -> torch.Tensor:
    """Mean squared error over every element."""
    _same_shape(y, y_hat)
    return F.mse_loss(y_hat, y, reduction="mean")


def temporal_gradient(video: torch.Tensor, dim: int = -4) -> torch.Tensor:
    """
    Consecutive frame differences F[t+1] - F[t] along `dim`.

    The default dim picks the frame axis of both (N, C, H, W) and (B, N, C, H, W);
    pass dim=0 for a 1-D series of scalar frames.
    """
    if video.dim() == 0 or video.shape[dim] < 2:
        frames = 0 if video.dim() == 0 else video.shape[dim]
        raise ArityError(f"temporal gradient needs at least 2 frames, got {frames}")
    return torch.diff(video, dim=dim)


def l_tg(y: torch.Tensor, y_hat: torch.Tensor, dim: int = -4) -> torch.Tensor:
    _same_shape(y, y_hat)
    return F.l1_loss(temporal_gradient(y_hat, dim), temporal_gradient(y, dim), reduction="mean")


def kl_divergence(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)); summed over latent elements, averaged over the batch (dim 0)."""
    if mu.shape != logvar.shape:
        raise ShapeError("logvar", tuple(mu.shape), tuple(logvar.shape))
    if not (torch.isfinite(mu).all() and torch.isfinite(logvar).all()):
        raise NumericError("latent statistics contain non-finite values")

    terms = -0.5 * (1 + logvar - mu.pow(2) - logvar.exp())
    if terms.dim() == 0:
        return terms
    return terms.reshape(terms.shape[0], -1).sum(dim=1).mean()


def total_loss(
        y: torch.Tensor,
        y_hat: torch.Tensor,
        mu: torch.Tensor,
        logvar: torch.Tensor,
        beta: float = 1.0
) -> Tuple[torch.Tensor, LossReport]:
    """
    l_rec + l_tg + beta * KL.

    Returns:
        The differentiable total and a LossReport of the detached components.
    """
    if beta < 0:
        raise ParameterError(f"beta must be >= 0, got {beta}")
    rec = l_rec(y, y_hat)
    tg = l_tg(y, y_hat)
    kl = kl_divergence(mu, logvar)
    total = rec + tg + beta * kl
    if not torch.isfinite(total):
        raise NumericError(f"loss is not finite: {float(total.detach())}")

    # KL is non-negative analytically; rounding can leave -1e-17
    report = LossReport(
        l_rec=float(rec.detach()),
        l_tg=float(tg.detach()),
        kl=max(0.0, float(kl.detach())),
        beta=beta,
    )
    return total, report
