"""Recursive fitting of texel patches to the zero level set of an SDF."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import DeepSurfelsModel
from .sdf import ScalarField, gradient

_AXES = np.eye(3)


@dataclass(frozen=True)
class FitConfig:
    grid_dims: tuple
    origin: tuple
    cell_size: float
    patch_res: int = 4
    channels: int = 3
    band: float = 1.0
    eps_fit: float = 1e-5

    def __post_init__(self):
        dims = tuple(int(d) for d in self.grid_dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError("grid_dims must be three positive integers")
        object.__setattr__(self, "grid_dims", dims)
        object.__setattr__(self, "origin", tuple(float(np.float32(o)) for o in self.origin))
        object.__setattr__(self, "cell_size", float(np.float32(self.cell_size)))
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        if self.patch_res < 1:
            raise ValueError("patch_res must be >= 1")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if not self.band > 0:
            raise ValueError("band must be positive")

    @classmethod
    def for_bounds(cls, lo, hi, resolution: int, **kw) -> "FitConfig":
        """Cubic cells of edge ``max extent / resolution`` covering ``[lo, hi]``."""
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        cell = float(np.float32((hi - lo).max() / resolution))
        dims = tuple(int(np.ceil((h - l) / cell - 1e-6)) for l, h in zip(lo, hi))
        return cls(dims, tuple(lo), cell, **kw)


def kappa(L: int) -> int:
    """Smallest divisor of ``L`` that is at least 2."""
    if L < 2:
        raise ValueError("kappa is defined for L >= 2")
    for k in range(2, int(np.sqrt(L)) + 1):
        if L % k == 0:
            return k
    return L


def divisor_chain(L: int) -> list[int]:
    chain = []
    while L > 1:
        k = kappa(L)
        chain.append(k)
        L //= k
    return chain


def _cell_points(cfg: FitConfig, offset: float, count) -> np.ndarray:
    axes = [np.asarray(cfg.origin[a], np.float64) + (np.arange(count[a]) + offset) * cfg.cell_size
            for a in range(3)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def allocation_mask(field: ScalarField, cfg: FitConfig) -> np.ndarray:
    """Boolean (X, Y, Z) mask of surface cells: a sign change across the
    eight corners, or a center closer than ``band * sqrt(3)/2 * cell_size``."""
    X, Y, Z = cfg.grid_dims
    corners = field(_cell_points(cfg, 0.0, (X + 1, Y + 1, Z + 1)))
    centers = field(_cell_points(cfg, 0.5, (X, Y, Z)))
    stack = np.stack([corners[dx:dx + X, dy:dy + Y, dz:dz + Z]
                      for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)])
    sign_change = (stack.min(axis=0) <= 0) & (stack.max(axis=0) >= 0)
    near = np.abs(centers) <= cfg.band * (np.sqrt(3.0) / 2.0) * cfg.cell_size
    return sign_change | near


def allocate_cells(field: ScalarField, cfg: FitConfig) -> np.ndarray:
    """Allocated cell indices (K, 3) sorted by linear index x + X*(y + Y*z)."""
    mask = allocation_mask(field, cfg)
    # transpose so that C-order nonzero walks x fastest
    z, y, x = np.nonzero(mask.transpose(2, 1, 0))
    return np.stack([x, y, z], axis=-1).astype(np.int64)


def align_element(field: ScalarField, pos):
    """One shift onto the surface along the gradient, then re-orient.

    Returns ``(new_pos, normal, degenerate)``. Degenerate elements stay put
    and get the +z fallback normal.
    """
    pos = np.asarray(pos, dtype=np.float64)
    n, bad = gradient(field, pos)
    d = field(pos)
    shifted = pos - np.asarray(d)[..., None] * n
    shifted = np.where(np.asarray(bad)[..., None], pos, shifted)
    n2, bad2 = gradient(field, shifted)
    return shifted, n2, np.asarray(bad) | np.asarray(bad2)


def _cross(a, b):
    return np.stack([a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
                     a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
                     a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]], axis=-1)


def _dot(a, b):
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def _normalize(v):
    n = np.sqrt(_dot(v, v))
    return v / np.where(n > 0, n, 1.0)[..., None], n


def tangent_frame(normal):
    """u = normalize(n x e) for the canonical axis e least aligned with n; v = n x u."""
    normal = np.asarray(normal, dtype=np.float64)
    e = _AXES[np.argmin(np.abs(normal), axis=-1)]
    u, _ = _normalize(_cross(normal, e))
    return u, _cross(normal, u)


def _carry_frame(u_parent, normal):
    """Project the parent's u into the child's tangent plane so sub-patch
    rows stay aligned with the top-level frame."""
    proj = u_parent - _dot(u_parent, normal)[..., None] * normal
    u, length = _normalize(proj)
    fallback, _ = tangent_frame(normal)
    u = np.where((length < 1e-6)[..., None], fallback, u)
    return u, _cross(normal, u)


def fit_patches(field: ScalarField, centers, normals, L: int, extent: float):
    """Vectorized recursive fit for N patches.

    ``centers``/``normals`` are (N, 3). Returns positions and normals shaped
    (N, L*L, 3) in row-major order of the top-level frame, plus an (N, L*L)
    degenerate flag array.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    if not extent > 0:
        raise ValueError("extent must be positive")
    pos = np.asarray(centers, dtype=np.float64).reshape(-1, 1, 1, 3)
    nrm = np.asarray(normals, dtype=np.float64).reshape(-1, 1, 1, 3)
    N = pos.shape[0]
    u, v = tangent_frame(nrm)
    size = float(extent)
    R = 1
    for k in divisor_chain(L):
        offs = ((np.arange(k) + 0.5) / k - 0.5) * size
        # (N, R, k, R, k): rows follow v, columns follow u
        row_off = offs[None, None, :, None, None, None]
        col_off = offs[None, None, None, None, :, None]
        sub = (pos[:, :, None, :, None, :] + col_off * u[:, :, None, :, None, :]
               + row_off * v[:, :, None, :, None, :])
        u_par = np.broadcast_to(u[:, :, None, :, None, :], sub.shape)
        R *= k
        sub = sub.reshape(N, R, R, 3)
        u_par = u_par.reshape(N, R, R, 3)
        pos, nrm, _ = align_element(field, sub)
        u, v = _carry_frame(u_par, nrm)
        size /= k
    pos, nrm, bad = align_element(field, pos)
    return pos.reshape(N, L * L, 3), nrm.reshape(N, L * L, 3), bad.reshape(N, L * L)


def fit_patch(field: ScalarField, center, normal, L: int, extent: float):
    """Fit one patch; returns (positions (L*L, 3), normals (L*L, 3), flags (L*L,))."""
    p, n, bad = fit_patches(field, np.asarray(center)[None], np.asarray(normal)[None], L, extent)
    return p[0], n[0], bad[0]


def _fit_chunk(field, cfg: FitConfig, cells: np.ndarray):
    centers = np.asarray(cfg.origin, np.float64) + (cells + 0.5) * cfg.cell_size
    c_aligned, c_normal, _ = align_element(field, centers)
    return fit_patches(field, c_aligned, c_normal, cfg.patch_res, cfg.cell_size)


def build(field: ScalarField, cfg: FitConfig, threads: int = 1, chunk: int = 512) -> DeepSurfelsModel:
    """Allocate surface cells and fit one patch per cell with zeroed appearance."""
    cells = allocate_cells(field, cfg)
    L, c = cfg.patch_res, cfg.channels
    if len(cells) == 0:
        return DeepSurfelsModel.empty(cfg.grid_dims, cfg.origin, cfg.cell_size, L, c)
    parts = [cells[i:i + chunk] for i in range(0, len(cells), chunk)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda cs: _fit_chunk(field, cfg, cs), parts))
    else:
        results = [_fit_chunk(field, cfg, cs) for cs in parts]
    pos = np.concatenate([r[0] for r in results])
    nrm = np.concatenate([r[1] for r in results])
    bad = np.concatenate([r[2] for r in results])
    n = L * L
    return DeepSurfelsModel(cfg.grid_dims, cfg.origin, cfg.cell_size, L, c, cells,
                            pos.astype(np.float32), nrm.astype(np.float32),
                            np.zeros((len(cells), n), np.float32),
                            np.zeros((len(cells), n, c), np.float32), bad)
