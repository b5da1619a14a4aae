"""Projection of stored texels into a super-resolved camera feature map."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import Camera, DeepSurfelsModel

CHUNK = 1 << 15
MAX_BUCKETS = 1 << 22


@dataclass
class Selection:
    """Per-sub-pixel texel sets in CSR form: the texels of sub-pixel ``s``
    are ``indices[offsets[s]:offsets[s + 1]]``, ascending."""

    offsets: np.ndarray
    indices: np.ndarray
    shape: tuple

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def mask(self) -> np.ndarray:
        return (self.counts > 0).reshape(self.shape)

    def texels_of(self, i: int, j: int | None = None) -> np.ndarray:
        s = i if j is None else i * self.shape[1] + j
        return self.indices[self.offsets[s]:self.offsets[s + 1]]


@dataclass
class FeatureMap:
    data: np.ndarray
    mask: np.ndarray
    selections: Selection


@dataclass
class MetaMaps:
    normals: np.ndarray
    depth_meta: np.ndarray


def subpixel_directions(camera: Camera, k: int) -> np.ndarray:
    """Camera-space ``K^-1 (u, v, 1)`` for every sub-pixel center, (kH, kW, 3)."""
    i = np.arange(camera.height * k)
    j = np.arange(camera.width * k)
    u = (j + 0.5) / k
    v = (i + 0.5) / k
    dirs = np.empty((len(i), len(j), 3))
    dirs[..., 0] = ((u - camera.cx) / camera.fx)[None, :]
    dirs[..., 1] = ((v - camera.cy) / camera.fy)[:, None]
    dirs[..., 2] = 1.0
    return dirs


def unproject_subpixel(camera: Camera, i: int, j: int, k: int, depth_value: float):
    """World point of sub-pixel (row i, column j) at z-depth ``depth_value``,
    or None for invalid depth."""
    if not (np.isfinite(depth_value) and depth_value > 0):
        return None
    u = (j + 0.5) / k
    v = (i + 0.5) / k
    cam = depth_value * np.array([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, 1.0])
    return camera.camera_to_world(cam)


def upsample_depth(depth: np.ndarray, k: int) -> np.ndarray:
    return np.repeat(np.repeat(np.asarray(depth, np.float64), k, axis=0), k, axis=1)


def unproject_map(camera: Camera, depth: np.ndarray, k: int):
    """World points (kH, kW, 3), validity, per-sub-pixel depth and unit
    world-space view rays for a depth map."""
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (camera.height, camera.width):
        raise ValueError(f"depth shape {depth.shape} does not match camera "
                         f"{(camera.height, camera.width)}")
    z = upsample_depth(depth, k)
    valid = np.isfinite(z) & (z > 0)
    z = np.where(valid, z, 0.0)
    dirs = subpixel_directions(camera, k)
    cam_pts = dirs * z[..., None]
    world = camera.camera_to_world(cam_pts)
    rays = (dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)) @ camera.R
    return world, valid, z, rays


def selection_radius(camera: Camera, k: int, depth_value, texel_spacing: float):
    """Half the world footprint of one sub-pixel along the coarser axis,
    floored at half the texel spacing."""
    footprint = 0.5 * np.asarray(depth_value, dtype=np.float64) * max(1.0 / camera.fx, 1.0 / camera.fy) / k
    r = np.maximum(footprint, 0.5 * texel_spacing)
    return float(r) if np.ndim(r) == 0 else r


def _texel_arrays(model: DeepSurfelsModel):
    cached = model._cache.get("tex64")
    if cached is None:
        cached = (np.ascontiguousarray(model.positions.reshape(-1, 3), dtype=np.float64),
                  np.ascontiguousarray(model.normals.reshape(-1, 3), dtype=np.float64),
                  np.ascontiguousarray(~model.flagged.reshape(-1)))
        model._cache["tex64"] = cached
    return cached


def _texel_buckets(model: DeepSurfelsModel):
    """Unflagged texels hashed into a uniform bucket grid: (lo, size, dims,
    dense bucket table, CSR starts, texel ids ascending per bucket).

    Buckets are one texel spacing wide unless that would need more than
    ``MAX_BUCKETS`` table entries, in which case they grow.
    """
    cached = model._cache.get("buckets")
    if cached is None:
        pos, _, ok = _texel_arrays(model)
        ids = np.nonzero(ok)[0]
        pts = pos[ids]
        lo = pts.min(axis=0) if len(ids) else np.zeros(3)
        extent = (pts.max(axis=0) - lo) if len(ids) else np.zeros(3)
        size = float(model.texel_spacing)
        size = max(size, float(np.cbrt(np.prod(extent + size) / MAX_BUCKETS)))
        ijk = np.floor((pts - lo) / size).astype(np.int64)
        dims = ijk.max(axis=0) + 1 if len(ids) else np.ones(3, np.int64)
        key = ijk[:, 0] + dims[0] * (ijk[:, 1] + dims[1] * ijk[:, 2])
        order = np.lexsort((ids, key))
        keys, starts = np.unique(key[order], return_index=True)
        table = np.full(int(np.prod(dims)), -1, np.int32)
        table[keys] = np.arange(len(keys), dtype=np.int32)
        cached = (lo, size, dims.astype(np.int64), table,
                  np.append(starts, len(ids)).astype(np.int64), ids[order].astype(np.int64))
        model._cache["buckets"] = cached
    return cached


def select_points(model: DeepSurfelsModel, points, radii, ray_dirs=None, depths=None,
                  tex_z=None, back_face: bool = False, depth_gate: bool = False,
                  valid=None, threads: int = 1, shape=None) -> Selection:
    """Texel selection for a flat batch of query points."""
    points = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    m = len(points)
    radii = np.ascontiguousarray(np.broadcast_to(np.asarray(radii, dtype=np.float64), (m,)))
    valid = np.ones(m, bool) if valid is None else np.ascontiguousarray(np.asarray(valid, bool).reshape(m))
    ray_dirs = np.zeros((m, 3)) if ray_dirs is None else np.ascontiguousarray(ray_dirs, dtype=np.float64).reshape(m, 3)
    depths = np.zeros(m) if depths is None else np.ascontiguousarray(depths, dtype=np.float64).reshape(m)
    shape = (m,) if shape is None else tuple(shape)
    if model.num_texels == 0 or m == 0:
        return Selection(np.zeros(m + 1, np.int64), np.zeros(0, np.int64), shape)
    tex_pos, tex_nrm, tex_ok = _texel_arrays(model)
    if tex_z is None:
        tex_z = np.zeros(len(tex_pos))
    aabb, _ = model.patch_bounds()
    args = (model.origin.astype(np.float64), model.cell_size, np.array(model.grid_dims, np.int64),
            model.cell_table(), aabb, model.cells, *_texel_buckets(model),
            tex_pos, tex_nrm, np.ascontiguousarray(tex_z, dtype=np.float64), tex_ok,
            model.texels_per_patch, back_face, depth_gate, 2.0 * model.cell_size)
    spans = [(a, min(a + CHUNK, m)) for a in range(0, m, CHUNK)]

    def run(span):
        a, b = span
        return _kernels.select_chunk(points[a:b], radii[a:b], valid[a:b], ray_dirs[a:b],
                                     depths[a:b], *args)

    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, spans))
    else:
        parts = [run(sp) for sp in spans]
    counts = np.concatenate([p[0] for p in parts])
    offsets = np.zeros(m + 1, np.int64)
    np.cumsum(counts, out=offsets[1:])
    return Selection(offsets, np.concatenate([p[1] for p in parts]), shape)


def select_texels(model: DeepSurfelsModel, camera: Camera, depth: np.ndarray, k: int,
                  back_face_reject: bool = True, depth_gate: bool = True,
                  threads: int = 1) -> Selection:
    """Texel sets T_ij for every sub-pixel of a depth map."""
    if k < 1:
        raise ValueError("k must be >= 1")
    world, valid, z, rays = unproject_map(camera, depth, k)
    radii = selection_radius(camera, k, z, model.texel_spacing)
    tex_z = None
    if depth_gate and model.num_texels:
        tex_z = camera.world_to_camera(_texel_arrays(model)[0])[:, 2]
    return select_points(model, world.reshape(-1, 3), radii.reshape(-1), rays.reshape(-1, 3),
                         z.reshape(-1), tex_z, back_face_reject, depth_gate,
                         valid.reshape(-1), threads, shape=z.shape)


def project(model: DeepSurfelsModel, camera: Camera, depth: np.ndarray, k: int,
            back_face_reject: bool = True, depth_gate: bool = True, threads: int = 1):
    """Render the (kH, kW, c) feature map as the uniform average of each
    sub-pixel's selected texels, plus averaged normals and depth meta maps."""
    sel = select_texels(model, camera, depth, k, back_face_reject, depth_gate, threads)
    kh, kw = sel.shape
    mask = sel.mask
    if model.num_texels:
        feats = _kernels.average_rows(sel.offsets, sel.indices,
                                      model.features.reshape(-1, model.channels))
        nrm = _kernels.average_rows(sel.offsets, sel.indices, model.normals.reshape(-1, 3))
    else:
        feats = np.zeros((kh * kw, model.channels))
        nrm = np.zeros((kh * kw, 3))
    nrm = nrm.reshape(kh, kw, 3)
    length = np.linalg.norm(nrm, axis=-1, keepdims=True)
    nrm = np.where(mask[..., None] & (length > 0), nrm / np.where(length > 0, length, 1.0), 0.0)
    z = np.where(mask, upsample_depth(depth, k), 0.0)
    return (FeatureMap(feats.reshape(kh, kw, model.channels), mask, sel),
            MetaMaps(nrm, z))
