"""Per-voxel running-mean color fusion (TSDF coloring baseline)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Camera, FrameRGBD
from .projection import unproject_map
from .render import hole_fill, pixel_rays, raycast_depth
from .sdf import ScalarField


@dataclass
class ColorVolume:
    dims: tuple
    origin: np.ndarray
    cell_size: float
    color: np.ndarray = None
    weight: np.ndarray = None

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        if self.color is None:
            self.color = np.zeros(self.dims + (3,), np.float64)
        if self.weight is None:
            self.weight = np.zeros(self.dims, np.float64)

    @classmethod
    def for_bounds(cls, lo, hi, resolution: int) -> "ColorVolume":
        lo = np.asarray(lo, np.float64)
        hi = np.asarray(hi, np.float64)
        cell = float((hi - lo).max() / resolution)
        dims = tuple(int(np.ceil((h - l) / cell - 1e-6)) for l, h in zip(lo, hi))
        return cls(dims, lo, cell)

    def voxel_of(self, points: np.ndarray):
        """Containing voxel indices (N, 3) and an in-volume mask."""
        idx = np.floor((points - self.origin) / self.cell_size).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < np.array(self.dims)), axis=-1)
        return idx, inside


def tsdf_color_fuse(vol: ColorVolume, camera: Camera, frame: FrameRGBD) -> int:
    """Average every valid pixel's color into the voxel holding its
    un-projected point. Returns the number of pixels fused."""
    pts, valid, _, _ = unproject_map(camera, frame.depth, 1)
    idx, inside = vol.voxel_of(pts.reshape(-1, 3))
    use = valid.reshape(-1) & inside
    if not use.any():
        return 0
    lin = np.ravel_multi_index(idx[use].T, vol.dims)
    rgb = frame.rgb.reshape(-1, 3)[use]
    n = int(np.prod(vol.dims))
    count = np.bincount(lin, minlength=n).astype(np.float64)
    sums = np.stack([np.bincount(lin, weights=rgb[:, c], minlength=n) for c in range(3)], axis=-1)
    color = vol.color.reshape(-1, 3)
    weight = vol.weight.reshape(-1)
    hit = count > 0
    color[hit] = (color[hit] * weight[hit, None] + sums[hit]) / (weight[hit] + count[hit])[:, None]
    weight[hit] += count[hit]
    return int(use.sum())


def _trilinear_color(vol: ColorVolume, pts: np.ndarray):
    g = (pts - vol.origin) / vol.cell_size - 0.5
    i0 = np.floor(g).astype(np.int64)
    f = g - i0
    total = np.zeros((len(pts), 3))
    wsum = np.zeros(len(pts))
    dims = np.array(vol.dims)
    for corner in range(8):
        off = np.array([(corner >> a) & 1 for a in range(3)])
        idx = i0 + off
        ok = np.all((idx >= 0) & (idx < dims), axis=-1)
        idx = np.clip(idx, 0, dims - 1)
        w = np.prod(np.where(off == 1, f, 1.0 - f), axis=-1)
        seen = vol.weight[idx[:, 0], idx[:, 1], idx[:, 2]] > 0
        w = np.where(ok & seen, w, 0.0)
        total += w[:, None] * vol.color[idx[:, 0], idx[:, 1], idx[:, 2]]
        wsum += w
    good = wsum > 0
    return np.where(good[:, None], total / np.where(good, wsum, 1.0)[:, None], 0.0), good


def tsdf_color_render(vol: ColorVolume, field: ScalarField, camera: Camera,
                      background=(0.0, 0.0, 0.0), trilinear: bool = False):
    """Color each raycast hit from its containing voxel, fill holes.
    Returns ``(rgb, coverage, depth)``."""
    depth = raycast_depth(field, camera)
    _, _, cam_dirs = pixel_rays(camera)
    hit = depth > 0
    cam_pts = cam_dirs[0] / cam_dirs[0][..., 2:3] * depth[..., None]
    pts = camera.camera_to_world(cam_pts).reshape(-1, 3)
    rgb = np.zeros((camera.height * camera.width, 3))
    if trilinear:
        colors, seen = _trilinear_color(vol, pts)
        cov = hit.reshape(-1) & seen
        rgb[cov] = colors[cov]
    else:
        idx, inside = vol.voxel_of(pts)
        idx = np.clip(idx, 0, np.array(vol.dims) - 1)
        w = vol.weight[idx[:, 0], idx[:, 1], idx[:, 2]]
        cov = hit.reshape(-1) & inside & (w > 0)
        rgb[cov] = vol.color[idx[cov, 0], idx[cov, 1], idx[cov, 2]]
    coverage = cov.reshape(depth.shape)
    out = hole_fill(rgb.reshape(depth.shape + (3,)), coverage, background)
    out[~hit] = np.asarray(background, np.float64)
    return np.clip(out, 0.0, 1.0), coverage, depth
