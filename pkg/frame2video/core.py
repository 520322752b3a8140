"""Pure per-pixel math shared by every stage: polar flow, direction maps, palette colors."""
import hashlib
from typing import Iterable, Tuple

import numpy as np

from frame2video.errors import InvalidInputError, PaletteMissError, ParameterError
from frame2video.models import ClassPalette, DirectionMap, FlowField, SemanticFrame

DEFAULT_EPS_MOTION = 1e-3


def flow_to_polar(flow: FlowField) -> Tuple[np.ndarray, np.ndarray]:
    """
    Split a flow field into magnitude and angle.

    Returns:
        magnitude >= 0 and angle in (-pi, pi] per pixel; the angle of a zero
        vector is 0 and must be masked by the caller.
    """
    uv = flow.uv
    bad = ~np.isfinite(uv).all(axis=-1)
    if bad.any():
        raise InvalidInputError(f"flow field has {int(bad.sum())} non-finite pixels")

    u = uv[..., 0].astype(np.float64)
    v = uv[..., 1].astype(np.float64)
    magnitude = np.hypot(u, v)
    angle = np.arctan2(v, u)
    # signed zeros make atan2 return -pi
    angle[angle == -np.pi] = np.pi
    return magnitude, angle


def polar_to_flow(magnitude: np.ndarray, angle: np.ndarray) -> FlowField:
    return FlowField.from_components(magnitude * np.cos(angle), magnitude * np.sin(angle))


def compute_direction_map(flow: FlowField, eps_motion: float = DEFAULT_EPS_MOTION) -> DirectionMap:
    """(|cos|, |sin|) of the motion angle; pixels slower than eps_motion are zeroed."""
    if not eps_motion > 0:
        raise ParameterError(f"eps_motion must be > 0, got {eps_motion}")

    magnitude, angle = flow_to_polar(flow)
    moving = magnitude >= eps_motion
    data = np.zeros(flow.uv.shape, dtype=np.float32)
    data[..., 0] = np.where(moving, np.abs(np.cos(angle)), 0.0)
    data[..., 1] = np.where(moving, np.abs(np.sin(angle)), 0.0)
    return DirectionMap(data=data)


def colorize(class_map: np.ndarray, palette: ClassPalette, frame_index: int = 0) -> SemanticFrame:
    """Replace every class id with its palette color."""
    class_map = np.asarray(class_map)
    present = np.unique(class_map)
    missing = set(present.tolist()) - set(palette.class_ids)
    if missing:
        raise PaletteMissError(missing)

    lut = np.zeros((max(palette.class_ids) + 1, 3), dtype=np.float32)
    for entry in palette.entries:
        lut[entry.class_id] = entry.color
    return SemanticFrame(pixels=lut[class_map], frame_index=frame_index)


def decode_colors(frame: SemanticFrame, palette: ClassPalette) -> np.ndarray:
    """Nearest-palette-color decode back to a class id grid."""
    colors = palette.colors_array()
    distances = ((frame.pixels[:, :, None, :] - colors[None, None, :, :]) ** 2).sum(axis=-1)
    ids = np.array(palette.class_ids, dtype=np.int64)
    return ids[distances.argmin(axis=-1)]


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)


def off_palette_pixels(frame: SemanticFrame, palette: ClassPalette) -> int:
    """Count of pixels whose color is not an exact palette color (at 8-bit precision)."""
    rgb = to_uint8(frame.pixels).astype(np.int64)
    codes = (rgb[..., 0] << 16) | (rgb[..., 1] << 8) | rgb[..., 2]
    allowed = [(r << 16) | (g << 8) | b for r, g, b in (palette.quantize(e.color) for e in palette.entries)]
    return int((~np.isin(codes, allowed)).sum())


def content_checksum(frames: Iterable[np.ndarray], flows: Iterable[np.ndarray]) -> str:
    """sha256 over 8-bit frames followed by little-endian float32 flows."""
    digest = hashlib.sha256()
    for pixels in frames:
        digest.update(to_uint8(pixels).tobytes())
    for uv in flows:
        digest.update(np.ascontiguousarray(uv, dtype="<f4").tobytes())
    return digest.hexdigest()
