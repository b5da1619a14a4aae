"""Domain types for the surfel-patch grid, cell indexing and `.dsf` serialization.

A model stores its patches as dense per-patch arrays ordered by linear cell
index ``x + X * (y + Y * z)``. A texel reference is the flat integer
``patch_row * L * L + texel_in_patch``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DSF_MAGIC = b"DSRF"
DSF_VERSION = 1
_DSF_HEADER = struct.Struct("<4sIIIIffffIIQ")


class FormatError(ValueError):
    """Raised when a binary file has a bad magic, version or layout."""


class TruncatedFileError(FormatError):
    """Raised when a binary file ends before its declared payload."""


class ChannelMismatchError(ValueError):
    """Raised when feature channel counts disagree."""


@dataclass(frozen=True)
class Texel:
    position: np.ndarray
    normal: np.ndarray
    weight: float
    features: np.ndarray
    flagged: bool = False


@dataclass(frozen=True)
class SurfelPatch:
    cell: tuple[int, int, int]
    texels: list[Texel]


@dataclass
class Camera:
    """Pinhole camera. ``T_wc`` maps world points into the camera frame
    (x right, y down, z along the optical axis)."""

    K: np.ndarray
    T_wc: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=np.float64).reshape(3, 3)
        self.T_wc = np.asarray(self.T_wc, dtype=np.float64).reshape(4, 4)
        self.width = int(self.width)
        self.height = int(self.height)
        if self.width <= 0 or self.height <= 0:
            raise ValueError("camera width and height must be positive")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if abs(self.K[0, 1]) > 0:
            raise ValueError("camera skew must be zero")
        R = self.R
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValueError("rotation block of T_wc is not a proper rotation")

    @property
    def fx(self) -> float:
        return float(self.K[0, 0])

    @property
    def fy(self) -> float:
        return float(self.K[1, 1])

    @property
    def cx(self) -> float:
        return float(self.K[0, 2])

    @property
    def cy(self) -> float:
        return float(self.K[1, 2])

    @property
    def R(self) -> np.ndarray:
        return self.T_wc[:3, :3]

    @property
    def t(self) -> np.ndarray:
        return self.T_wc[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.R.T @ self.t

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.R.T + self.t

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        return (points - self.t) @ self.R


@dataclass
class FrameRGBD:
    rgb: np.ndarray
    depth: np.ndarray

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float64)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise ValueError(f"rgb must be HxWx3, got {self.rgb.shape}")
        if self.depth.shape != self.rgb.shape[:2]:
            raise ValueError(f"depth shape {self.depth.shape} does not match rgb {self.rgb.shape[:2]}")
        if not np.all(np.isfinite(self.rgb)) or self.rgb.min(initial=0.0) < 0 or self.rgb.max(initial=0.0) > 1:
            raise ValueError("rgb values must be finite and in [0, 1]")

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.depth) & (self.depth > 0)


@dataclass
class DeepSurfelsModel:
    """Sparse grid of L x L texel patches.

    Per-patch arrays share the leading axis; ``cells`` is kept sorted by
    linear cell index so equal patch sets always have identical layouts.
    """

    grid_dims: tuple[int, int, int]
    origin: np.ndarray
    cell_size: float
    patch_res: int
    channels: int
    cells: np.ndarray
    positions: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    features: np.ndarray
    flagged: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.grid_dims = tuple(int(d) for d in self.grid_dims)
        if len(self.grid_dims) != 3 or min(self.grid_dims) < 1:
            raise ValueError("grid_dims must be three positive integers")
        self.origin = np.asarray(self.origin, dtype=np.float32).reshape(3)
        self.cell_size = float(np.float32(self.cell_size))
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        if self.patch_res < 1 or self.channels < 1:
            raise ValueError("patch_res and channels must be >= 1")
        n = self.patch_res * self.patch_res
        p = len(self.cells)
        self.cells = np.asarray(self.cells, dtype=np.int64).reshape(p, 3)
        self.positions = np.asarray(self.positions, dtype=np.float32).reshape(p, n, 3)
        self.normals = np.asarray(self.normals, dtype=np.float32).reshape(p, n, 3)
        self.weights = np.asarray(self.weights, dtype=np.float32).reshape(p, n)
        self.features = np.asarray(self.features, dtype=np.float32).reshape(p, n, self.channels)
        self.flagged = np.asarray(self.flagged, dtype=bool).reshape(p, n)
        if p:
            if np.any(self.cells < 0) or np.any(self.cells >= np.array(self.grid_dims)):
                raise ValueError("patch cell index outside grid_dims")
            lin = self.linear_index(self.cells)
            if np.any(np.diff(lin) <= 0):
                order = np.argsort(lin, kind="stable")
                if np.any(np.diff(lin[order]) == 0):
                    raise ValueError("duplicate patch cells")
                for name in ("cells", "positions", "normals", "weights", "features", "flagged"):
                    setattr(self, name, getattr(self, name)[order])

    @classmethod
    def empty(cls, grid_dims, origin, cell_size, patch_res, channels) -> "DeepSurfelsModel":
        n = patch_res * patch_res
        return cls(
            grid_dims, origin, cell_size, patch_res, channels,
            cells=np.zeros((0, 3), np.int64),
            positions=np.zeros((0, n, 3), np.float32),
            normals=np.zeros((0, n, 3), np.float32),
            weights=np.zeros((0, n), np.float32),
            features=np.zeros((0, n, channels), np.float32),
            flagged=np.zeros((0, n), bool),
        )

    def __len__(self) -> int:
        return len(self.cells)

    @property
    def texels_per_patch(self) -> int:
        return self.patch_res * self.patch_res

    @property
    def num_texels(self) -> int:
        return len(self.cells) * self.texels_per_patch

    @property
    def texel_spacing(self) -> float:
        return self.cell_size / self.patch_res

    def linear_index(self, cells: np.ndarray) -> np.ndarray:
        X, Y, _ = self.grid_dims
        cells = np.asarray(cells, dtype=np.int64)
        return cells[..., 0] + X * (cells[..., 1] + Y * cells[..., 2])

    def cell_table(self) -> np.ndarray:
        """Dense int32 map from linear cell index to patch row (-1 = empty)."""
        table = self._cache.get("cell_table")
        if table is None:
            table = np.full(int(np.prod(self.grid_dims)), -1, dtype=np.int32)
            table[self.linear_index(self.cells)] = np.arange(len(self.cells), dtype=np.int32)
            self._cache["cell_table"] = table
        return table

    def patch_bounds(self) -> tuple[np.ndarray, float]:
        """Per-patch texel AABBs (P, 6) and the largest overhang of any
        AABB past its own cell, both in world units."""
        cached = self._cache.get("bounds")
        if cached is None:
            pos = self.positions.astype(np.float64)
            if len(pos):
                lo, hi = pos.min(axis=1), pos.max(axis=1)
                cell_lo = self.origin.astype(np.float64) + self.cells * self.cell_size
                over = max(float((cell_lo - lo).max()), float((hi - cell_lo - self.cell_size).max()), 0.0)
            else:
                lo = hi = np.zeros((0, 3))
                over = 0.0
            cached = (np.concatenate([lo, hi], axis=1), over)
            self._cache["bounds"] = cached
        return cached

    def invalidate(self) -> None:
        """Drop cached acceleration data after geometry edits."""
        self._cache.clear()

    def patch(self, cell) -> SurfelPatch | None:
        row = self.row_of(cell)
        if row is None:
            return None
        return SurfelPatch(tuple(int(c) for c in self.cells[row]),
                           [self.texel(row * self.texels_per_patch + t) for t in range(self.texels_per_patch)])

    def row_of(self, cell) -> int | None:
        cell = np.asarray(cell, dtype=np.int64)
        if np.any(cell < 0) or np.any(cell >= np.array(self.grid_dims)):
            return None
        row = int(self.cell_table()[int(self.linear_index(cell))])
        return None if row < 0 else row

    def texel(self, ref: int) -> Texel:
        p, t = divmod(int(ref), self.texels_per_patch)
        return Texel(self.positions[p, t].copy(), self.normals[p, t].copy(), float(self.weights[p, t]),
                     self.features[p, t].copy(), bool(self.flagged[p, t]))

    def copy(self) -> "DeepSurfelsModel":
        return DeepSurfelsModel(self.grid_dims, self.origin.copy(), self.cell_size, self.patch_res,
                                self.channels, self.cells.copy(), self.positions.copy(),
                                self.normals.copy(), self.weights.copy(), self.features.copy(),
                                self.flagged.copy())

    def state_equal(self, other: "DeepSurfelsModel") -> bool:
        """Bit-exact comparison of every stored field."""
        if (self.grid_dims, self.cell_size, self.patch_res, self.channels) != (
                other.grid_dims, other.cell_size, other.patch_res, other.channels):
            return False
        pairs = [(self.origin, other.origin), (self.cells, other.cells),
                 (self.positions, other.positions), (self.normals, other.normals),
                 (self.weights, other.weights), (self.features, other.features),
                 (self.flagged, other.flagged)]
        return all(a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in pairs)


def cell_of(model: DeepSurfelsModel, point) -> tuple[int, int, int] | None:
    """Index of the half-open cell containing ``point``, or None outside the grid."""
    rel = (np.asarray(point, dtype=np.float64) - model.origin.astype(np.float64)) / model.cell_size
    idx = np.floor(rel).astype(np.int64)
    if np.any(idx < 0) or np.any(idx >= np.array(model.grid_dims)):
        return None
    return tuple(int(i) for i in idx)


def texels_near(model: DeepSurfelsModel, point, radius: float) -> np.ndarray:
    """Closest texel in the 3x3x3 cell neighborhood plus every texel inside
    the world-axis-aligned max-norm ball of ``radius``.

    Returns sorted texel references; flagged texels are never selected.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    from .projection import select_points

    sel = select_points(model, np.asarray(point, dtype=np.float64).reshape(1, 3),
                        np.array([float(radius)]))
    return sel.indices.copy()


def validate_model(model: DeepSurfelsModel, unit_tol: float = 1e-6) -> list[str]:
    """Check texel and patch invariants; returns a list of violations."""
    problems = []
    ok = ~model.flagged
    if not np.all(np.isfinite(model.positions)):
        problems.append("non-finite texel position")
    norms = np.linalg.norm(model.normals.astype(np.float64), axis=-1)
    if np.any(np.abs(norms[ok] - 1.0) > unit_tol):
        problems.append(f"non-unit normal (max error {np.abs(norms[ok] - 1.0).max():.3g})")
    if np.any(model.weights < 0):
        problems.append("negative texel weight")
    if np.any((model.weights == 0) & np.any(model.features != 0, axis=-1)):
        problems.append("texel with zero weight carries features")
    if model.channels == 3 and (np.any(model.features < 0) or np.any(model.features > 1)):
        problems.append("RGB feature outside [0, 1]")
    if len(model):
        lo = model.origin.astype(np.float64) + (model.cells[:, None, :] - 1) * model.cell_size
        hi = lo + 3 * model.cell_size
        pos = model.positions.astype(np.float64)
        if np.any(pos < lo) or np.any(pos > hi):
            problems.append("texel escaped its dilated cell")
    return problems


def _texel_dtype(channels: int) -> np.dtype:
    return np.dtype([("position", "<f4", (3,)), ("normal", "<f4", (3,)),
                     ("weight", "<f4"), ("features", "<f4", (channels,))])


def _patch_dtype(patch_res: int, channels: int) -> np.dtype:
    return np.dtype([("cell", "<u4", (3,)),
                     ("texels", _texel_dtype(channels), (patch_res * patch_res,))])


def model_to_bytes(model: DeepSurfelsModel) -> bytes:
    X, Y, Z = model.grid_dims
    header = _DSF_HEADER.pack(DSF_MAGIC, DSF_VERSION, X, Y, Z, model.cell_size,
                              *model.origin.tolist(), model.patch_res, model.channels, len(model))
    rec = np.zeros(len(model), dtype=_patch_dtype(model.patch_res, model.channels))
    rec["cell"] = model.cells
    tex = rec["texels"]
    tex["position"] = model.positions
    tex["normal"] = model.normals
    # flagged texels have no field of their own in the format: weight -1 marks them
    tex["weight"] = np.where(model.flagged, np.float32(-1.0), model.weights)
    tex["features"] = model.features
    return header + rec.tobytes()


def model_from_bytes(data: bytes) -> DeepSurfelsModel:
    if data[:4] != DSF_MAGIC[:len(data[:4])] or not data:
        raise FormatError("bad magic: not a .dsf file")
    if len(data) < _DSF_HEADER.size:
        raise TruncatedFileError(f"file too short for header ({len(data)} bytes)")
    magic, version, X, Y, Z, cs, ox, oy, oz, L, c, count = _DSF_HEADER.unpack_from(data)
    if magic != DSF_MAGIC:
        raise FormatError(f"bad magic {magic!r}: not a .dsf file")
    if version != DSF_VERSION:
        raise FormatError(f"unsupported .dsf version {version}")
    if L < 1 or c < 1:
        raise FormatError("patch resolution and channels must be >= 1")
    dt = _patch_dtype(L, c)
    need = _DSF_HEADER.size + count * dt.itemsize
    if len(data) < need:
        raise TruncatedFileError(f"expected {need} bytes, got {len(data)}")
    if len(data) > need:
        raise FormatError(f"{len(data) - need} trailing bytes after patch records")
    rec = np.frombuffer(data, dtype=dt, count=count, offset=_DSF_HEADER.size)
    tex = rec["texels"]
    raw_w = tex["weight"]
    flagged = raw_w < 0
    cells = rec["cell"].astype(np.int64)
    origin = np.array([ox, oy, oz], dtype=np.float32)
    return DeepSurfelsModel((X, Y, Z), origin, cs, L, c, cells,
                            tex["position"].copy(), tex["normal"].copy(),
                            np.where(flagged, np.float32(0.0), raw_w), tex["features"].copy(), flagged)


def save_model(model: DeepSurfelsModel, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> DeepSurfelsModel:
    return model_from_bytes(Path(path).read_bytes())
