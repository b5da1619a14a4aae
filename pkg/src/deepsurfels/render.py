"""Novel-view rendering of a fused model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Camera, ChannelMismatchError, DeepSurfelsModel
from .projection import project
from .sdf import ScalarField, default_eps, sphere_trace


@dataclass(frozen=True)
class RenderConfig:
    back_face_reject: bool = True
    depth_gate: bool = True
    background: tuple = (0.0, 0.0, 0.0)


@dataclass
class RenderedView:
    rgb: np.ndarray
    coverage: np.ndarray
    depth: np.ndarray


def pixel_rays(camera: Camera, offsets=((0.5, 0.5),)):
    """World-space origins and unit directions for rays through pixel
    positions ``(j + ox, i + oy)``; returns arrays shaped (S, H, W, 3)."""
    jj, ii = np.meshgrid(np.arange(camera.width), np.arange(camera.height))
    dirs = []
    for ox, oy in offsets:
        d = np.stack([(jj + ox - camera.cx) / camera.fx, (ii + oy - camera.cy) / camera.fy,
                      np.ones(jj.shape)], axis=-1)
        dirs.append(d / np.linalg.norm(d, axis=-1, keepdims=True))
    cam_dirs = np.stack(dirs)
    world_dirs = cam_dirs @ camera.R
    origins = np.broadcast_to(camera.center, world_dirs.shape)
    return origins, world_dirs, cam_dirs


def trace_limits(field: ScalarField, camera: Camera, eps: float | None):
    mid = 0.5 * (field.lo + field.hi)
    t_max = float(np.linalg.norm(camera.center - mid)) + field.scale
    return t_max, (default_eps(field) if eps is None else eps)


def raycast_depth(field: ScalarField, camera: Camera, eps: float | None = None) -> np.ndarray:
    """Camera z-depth of the first surface hit through each pixel center; 0 on a miss."""
    origins, dirs, cam_dirs = pixel_rays(camera)
    t_max, eps = trace_limits(field, camera, eps)
    hit, t, _ = sphere_trace(field, origins.reshape(-1, 3), dirs.reshape(-1, 3), t_max, eps)
    z = np.where(hit, t * cam_dirs[..., 2].reshape(-1), 0.0)
    return z.reshape(camera.height, camera.width)


def masked_avg_pool(data: np.ndarray, mask: np.ndarray, k: int):
    """k x k, stride-k average over mask-true entries only."""
    data = np.asarray(data, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    kh, kw = mask.shape
    if data.shape[:2] != mask.shape or kh % k or kw % k:
        raise ValueError(f"map {data.shape} / mask {mask.shape} not divisible by k={k}")
    c = data.shape[2]
    h, w = kh // k, kw // k
    m = mask.reshape(h, k, w, k)
    vals = np.where(mask[..., None], data, 0.0).reshape(h, k, w, k, c)
    total = vals.sum(axis=(1, 3))
    count = m.sum(axis=(1, 3))
    coverage = count > 0
    out = np.where(coverage[..., None], total / np.maximum(count, 1)[..., None], 0.0)
    return out, coverage


_NEIGHBORS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]


def hole_fill(rgb: np.ndarray, coverage: np.ndarray, background=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Grow covered colors into uncovered pixels one 8-neighborhood ring at a
    time; unreachable pixels get ``background``."""
    rgb = np.asarray(rgb, dtype=np.float64)
    filled = np.asarray(coverage, dtype=bool).copy()
    out = np.where(filled[..., None], rgb, 0.0)
    h, w = filled.shape
    while True:
        pad_c = np.pad(out, ((1, 1), (1, 1), (0, 0)))
        pad_m = np.pad(filled, 1)
        total = np.zeros_like(out)
        count = np.zeros(filled.shape, np.int64)
        for dy, dx in _NEIGHBORS:
            m = pad_m[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
            total += np.where(m[..., None], pad_c[1 + dy:1 + dy + h, 1 + dx:1 + dx + w], 0.0)
            count += m
        grow = ~filled & (count > 0)
        if not grow.any():
            break
        out[grow] = total[grow] / count[grow][:, None]
        filled |= grow
    out[~filled] = np.asarray(background, dtype=np.float64)
    return out


def render_view(model: DeepSurfelsModel, field: ScalarField, camera: Camera, k: int = 2,
                cfg: RenderConfig = RenderConfig(), threads: int = 1) -> RenderedView:
    """Raycast depth, project texels, pool to pixel resolution, fill holes."""
    if model.channels != 3:
        raise ChannelMismatchError(f"direct RGB rendering needs 3 channels, model has {model.channels}")
    depth = raycast_depth(field, camera)
    fmap, _ = project(model, camera, depth, k, cfg.back_face_reject, cfg.depth_gate, threads)
    rgb, coverage = masked_avg_pool(fmap.data, fmap.mask, k)
    rgb = hole_fill(rgb, coverage, cfg.background)
    rgb[depth <= 0] = np.asarray(cfg.background, dtype=np.float64)
    return RenderedView(np.clip(rgb, 0.0, 1.0), coverage, depth)
