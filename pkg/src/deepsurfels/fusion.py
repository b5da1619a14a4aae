"""Deterministic online RGB fusion into a surfel-patch model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Camera, ChannelMismatchError, DeepSurfelsModel, FrameRGBD
from .projection import Selection, select_texels


@dataclass(frozen=True)
class FusionConfig:
    k: int = 2
    weight_cap: float | None = None
    back_face_reject: bool = True
    depth_gate: bool = True

    def __post_init__(self):
        if int(self.k) < 1:
            raise ValueError("k must be >= 1")
        if self.weight_cap is not None and not self.weight_cap > 0:
            raise ValueError("weight_cap must be positive")


@dataclass(frozen=True)
class FusionStats:
    texels_touched: int
    subpixels_valid: int
    subpixels_empty: int


def upsample_image(rgb: np.ndarray, k: int) -> np.ndarray:
    """Nearest-neighbour upsampling: every pixel becomes a k x k block."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return np.repeat(np.repeat(np.asarray(rgb), k, axis=0), k, axis=1)


def frame_contributions(selection: Selection, new_map: np.ndarray, num_texels: int):
    """Per-texel (sum, count) over all sub-pixels that selected it."""
    counts = selection.counts
    new_map = np.asarray(new_map, dtype=np.float64)
    c = new_map.shape[-1]
    flat = new_map.reshape(-1, c)
    if len(flat) != len(counts):
        raise ValueError(f"feature map has {len(flat)} entries, selection has {len(counts)}")
    owner = np.repeat(np.arange(len(counts)), counts)
    hits = np.bincount(selection.indices, minlength=num_texels)
    sums = np.stack([np.bincount(selection.indices, weights=flat[owner, ch], minlength=num_texels)
                     for ch in range(c)], axis=-1)
    return sums, hits


def integrate(model: DeepSurfelsModel, selection: Selection, new_map: np.ndarray,
              weight_cap: float | None = None) -> int:
    """Commit an updated feature map into the texels it was rendered from.

    Each observed texel moves to ``(tau * w + mean_contribution) / (w + 1)``
    and its weight grows by one per frame. Returns the number of texels
    touched.
    """
    new_map = np.asarray(new_map)
    if new_map.shape[-1] != model.channels:
        raise ChannelMismatchError(f"feature map has {new_map.shape[-1]} channels, "
                                   f"model has {model.channels}")
    sums, hits = frame_contributions(selection, new_map, model.num_texels)
    touched = np.nonzero(hits)[0]
    if touched.size == 0:
        return 0
    feats = model.features.reshape(-1, model.channels)
    weights = model.weights.reshape(-1)
    contrib = sums[touched] / hits[touched, None]
    w = weights[touched].astype(np.float64)
    if weight_cap is not None:
        w = np.minimum(w, weight_cap)
    blended = (feats[touched].astype(np.float64) * w[:, None] + contrib) / (w + 1.0)[:, None]
    w_new = w + 1.0
    if weight_cap is not None:
        w_new = np.minimum(w_new, weight_cap)
    feats[touched] = blended.astype(np.float32)
    weights[touched] = w_new.astype(np.float32)
    return int(touched.size)


def check_frame(model: DeepSurfelsModel, camera: Camera, frame: FrameRGBD) -> None:
    if frame.rgb.shape[:2] != (camera.height, camera.width):
        raise ValueError(f"frame {frame.rgb.shape[:2]} does not match camera "
                         f"{(camera.height, camera.width)}")
    if model.channels != frame.rgb.shape[2]:
        raise ChannelMismatchError(f"model has {model.channels} channels but the deterministic "
                                   f"fusion writes {frame.rgb.shape[2]} (RGB)")


def fuse_frame(model: DeepSurfelsModel, camera: Camera, frame: FrameRGBD,
               cfg: FusionConfig = FusionConfig(), threads: int = 1) -> FusionStats:
    """Fuse one RGB-D frame; the updated map is the upsampled input image."""
    check_frame(model, camera, frame)
    sel = select_texels(model, camera, frame.depth, cfg.k, cfg.back_face_reject,
                        cfg.depth_gate, threads)
    touched = integrate(model, sel, upsample_image(frame.rgb, cfg.k), cfg.weight_cap)
    valid = int(np.count_nonzero(np.isfinite(frame.depth) & (frame.depth > 0))) * cfg.k * cfg.k
    covered = int(np.count_nonzero(sel.counts))
    return FusionStats(touched, valid, valid - covered)
