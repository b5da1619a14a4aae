"""Signed distance fields: analytic primitives, dense trilinear grids,
central-difference gradients and sphere tracing.

All evaluation functions are vectorized over a leading batch of points
shaped (..., 3).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import FormatError, TruncatedFileError

SDFG_MAGIC = b"SDFG"
SDFG_VERSION = 1
_SDFG_HEADER = struct.Struct("<4sI3I3ff")

MAX_TRACE_STEPS = 512


def _vec3(v) -> np.ndarray:
    return np.asarray(v, dtype=np.float64).reshape(3)


def _length(v: np.ndarray) -> np.ndarray:
    # explicit component sums keep results independent of batch layout
    return np.sqrt(v[..., 0] * v[..., 0] + v[..., 1] * v[..., 1] + v[..., 2] * v[..., 2])


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float

    def distance(self, p: np.ndarray) -> np.ndarray:
        return _length(p - _vec3(self.center)) - self.radius


@dataclass(frozen=True)
class Box:
    center: tuple
    half_extents: tuple

    def distance(self, p: np.ndarray) -> np.ndarray:
        q = np.abs(p - _vec3(self.center)) - _vec3(self.half_extents)
        outside = _length(np.maximum(q, 0.0))
        inside = np.minimum(np.maximum(np.maximum(q[..., 0], q[..., 1]), q[..., 2]), 0.0)
        return outside + inside


@dataclass(frozen=True)
class Torus:
    """Ring in the xz-plane around the y axis through ``center``."""

    center: tuple
    major: float
    minor: float

    def distance(self, p: np.ndarray) -> np.ndarray:
        d = p - _vec3(self.center)
        ring = np.sqrt(d[..., 0] * d[..., 0] + d[..., 2] * d[..., 2]) - self.major
        return np.sqrt(ring * ring + d[..., 1] * d[..., 1]) - self.minor


@dataclass(frozen=True)
class Plane:
    normal: tuple
    offset: float

    def distance(self, p: np.ndarray) -> np.ndarray:
        n = _vec3(self.normal)
        n = n / np.linalg.norm(n)
        return p[..., 0] * n[0] + p[..., 1] * n[1] + p[..., 2] * n[2] - self.offset


SHAPES = {"sphere": Sphere, "box": Box, "torus": Torus, "plane": Plane}


@dataclass(frozen=True)
class AnalyticField:
    """Union (pointwise minimum) of analytic primitives inside ``bounds``."""

    shapes: tuple
    bounds: tuple = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))

    def __post_init__(self):
        if not self.shapes:
            raise ValueError("analytic field needs at least one shape")
        object.__setattr__(self, "shapes", tuple(self.shapes))

    @property
    def lo(self) -> np.ndarray:
        return _vec3(self.bounds[0])

    @property
    def hi(self) -> np.ndarray:
        return _vec3(self.bounds[1])

    @property
    def scale(self) -> float:
        """Scene diagonal."""
        return float(np.linalg.norm(self.hi - self.lo))

    def __call__(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        out = self.shapes[0].distance(p)
        for shape in self.shapes[1:]:
            out = np.minimum(out, shape.distance(p))
        return out

    def to_dict(self) -> dict:
        shapes = []
        for s in self.shapes:
            kind = next(k for k, v in SHAPES.items() if isinstance(s, v))
            d = {"type": kind}
            for name in s.__dataclass_fields__:
                val = getattr(s, name)
                d[name] = list(map(float, val)) if isinstance(val, (tuple, list, np.ndarray)) else float(val)
            shapes.append(d)
        return {"shapes": shapes, "bounds": [list(map(float, self.bounds[0])), list(map(float, self.bounds[1]))]}

    @classmethod
    def from_dict(cls, d: dict) -> "AnalyticField":
        shapes = []
        for s in d["shapes"]:
            s = dict(s)
            kind = SHAPES[s.pop("type")]
            shapes.append(kind(**{k: tuple(v) if isinstance(v, list) else v for k, v in s.items()}))
        return cls(tuple(shapes), (tuple(d["bounds"][0]), tuple(d["bounds"][1])))


@dataclass(frozen=True, eq=False)
class GridField:
    """Dense grid of samples; ``values[i, j, k]`` sits at ``origin + (i, j, k) * spacing``."""

    values: np.ndarray
    origin: np.ndarray
    spacing: float

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float32)
        if vals.ndim != 3:
            raise ValueError("grid values must be a 3-D array")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid values must be finite")
        spacing = float(np.float32(self.spacing))
        if not spacing > 0:
            raise ValueError("grid spacing must be positive")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float32).reshape(3))
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.values.shape)

    @property
    def lo(self) -> np.ndarray:
        return self.origin.astype(np.float64)

    @property
    def hi(self) -> np.ndarray:
        return self.lo + (np.array(self.dims) - 1) * self.spacing

    @property
    def scale(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def __call__(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        dims = np.array(self.dims)
        g = (np.clip(p, self.lo, self.hi) - self.lo) / self.spacing
        # snap coordinates that are within rounding of a node so nodes sample exactly
        r = np.round(g)
        g = np.where(np.abs(g - r) < 1e-9, r, g)
        i0 = np.clip(np.floor(g), 0, np.maximum(dims - 2, 0)).astype(np.int64)
        f = g - i0
        i1 = np.minimum(i0 + 1, dims - 1)
        v = self.values
        x0, y0, z0 = i0[..., 0], i0[..., 1], i0[..., 2]
        x1, y1, z1 = i1[..., 0], i1[..., 1], i1[..., 2]
        fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]

        def lerp(a, b, t):
            return a * (1.0 - t) + b * t

        c00 = lerp(v[x0, y0, z0].astype(np.float64), v[x1, y0, z0], fx)
        c10 = lerp(v[x0, y1, z0].astype(np.float64), v[x1, y1, z0], fx)
        c01 = lerp(v[x0, y0, z1].astype(np.float64), v[x1, y0, z1], fx)
        c11 = lerp(v[x0, y1, z1].astype(np.float64), v[x1, y1, z1], fx)
        return lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz)


ScalarField = AnalyticField | GridField


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        d = _vec3(self.direction)
        if abs(np.linalg.norm(d) - 1.0) > 1e-6:
            raise ValueError("ray direction must be unit length")
        object.__setattr__(self, "origin", _vec3(self.origin))
        object.__setattr__(self, "direction", d)


def sample(field: ScalarField, p):
    """Signed distance at ``p``; grids are sampled trilinearly with edge clamping."""
    out = field(p)
    return float(out) if np.ndim(out) == 0 else out


def gradient_step(field: ScalarField) -> float:
    if isinstance(field, GridField):
        return 0.5 * field.spacing
    return 1e-4 * field.scale


def gradient(field: ScalarField, p):
    """Normalized central-difference gradient.

    Returns ``(normal, degenerate)``; where the raw gradient magnitude is
    below 1e-9 the normal falls back to +z and ``degenerate`` is True.
    """
    p = np.asarray(p, dtype=np.float64)
    h = gradient_step(field)
    offsets = np.eye(3) * h
    probes = np.stack([p + o for o in offsets] + [p - o for o in offsets])
    vals = field(probes)
    g = np.stack([(vals[i] - vals[i + 3]) / (2.0 * h) for i in range(3)], axis=-1)
    mag = _length(g)
    degenerate = mag < 1e-9
    safe = np.where(degenerate, 1.0, mag)
    n = g / safe[..., None]
    n = np.where(degenerate[..., None], np.array([0.0, 0.0, 1.0]), n)
    if n.ndim == 1:
        return n, bool(degenerate)
    return n, degenerate


def bake_grid(field: AnalyticField, dims, origin, spacing) -> GridField:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 2:
        raise ValueError("bake_grid needs at least 2 samples per axis")
    origin32 = np.asarray(origin, dtype=np.float32).reshape(3).astype(np.float64)
    spacing32 = float(np.float32(spacing))
    idx = np.stack(np.meshgrid(*[np.arange(d) for d in dims], indexing="ij"), axis=-1)
    nodes = origin32 + idx * spacing32
    return GridField(field(nodes).astype(np.float32), origin32, spacing32)


def default_eps(field: ScalarField) -> float:
    return 1e-4 * field.scale


def _box_entry(lo, hi, origins, dirs):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (lo - origins) * inv
        t2 = (hi - origins) * inv
    tmin = np.nanmax(np.minimum(t1, t2), axis=-1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=-1)
    return np.maximum(tmin, 0.0), tmax


def sphere_trace(field: ScalarField, origins, directions, t_max: float, eps: float | None = None,
                 max_steps: int = MAX_TRACE_STEPS):
    """March rays by the sampled distance until ``|field| <= eps``.

    Returns ``(hit, t, points)`` for a batch of rays shaped (N, 3). Grid
    fields start marching where the ray enters the grid box because clamped
    samples outside the box are not distance bounds.
    """
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    eps = default_eps(field) if eps is None else float(eps)
    if not eps > 0:
        raise ValueError("eps must be positive")
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    n = len(origins)
    t = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    if isinstance(field, GridField):
        t_in, t_out = _box_entry(field.lo, field.hi, origins, dirs)
        alive = t_in <= t_out
        t = np.where(alive, t_in, 0.0)
    hit = np.zeros(n, dtype=bool)
    active = np.nonzero(alive)[0]
    for _ in range(max_steps):
        if active.size == 0:
            break
        p = origins[active] + t[active, None] * dirs[active]
        d = field(p)
        done = np.abs(d) <= eps
        hit[active[done]] = True
        step = np.maximum(d, 0.25 * eps)
        keep = ~done
        t[active[keep]] += step[keep]
        active = active[keep]
        active = active[t[active] <= t_max]
    points = origins + t[:, None] * dirs
    return hit, np.where(hit, t, np.inf), points


def trace_ray(field: ScalarField, ray: Ray, t_max: float, eps: float | None = None):
    """Single-ray sphere trace; returns ``(hit_point, t)`` or None."""
    hit, t, pts = sphere_trace(field, ray.origin[None], ray.direction[None], t_max, eps)
    if not hit[0]:
        return None
    return pts[0], float(t[0])


def grid_to_bytes(grid: GridField) -> bytes:
    X, Y, Z = grid.dims
    header = _SDFG_HEADER.pack(SDFG_MAGIC, SDFG_VERSION, X, Y, Z, *grid.origin.tolist(), grid.spacing)
    # file order is x fastest: x + X * (y + Y * z)
    return header + np.ascontiguousarray(grid.values.transpose(2, 1, 0)).astype("<f4").tobytes()


def grid_from_bytes(data: bytes) -> GridField:
    if data[:4] != SDFG_MAGIC[:len(data[:4])] or not data:
        raise FormatError("bad magic: not a .sdfg file")
    if len(data) < _SDFG_HEADER.size:
        raise TruncatedFileError("file too short for .sdfg header")
    magic, version, X, Y, Z, ox, oy, oz, spacing = _SDFG_HEADER.unpack_from(data)
    if version != SDFG_VERSION:
        raise FormatError(f"unsupported .sdfg version {version}")
    need = _SDFG_HEADER.size + 4 * X * Y * Z
    if len(data) < need:
        raise TruncatedFileError(f"expected {need} bytes, got {len(data)}")
    if len(data) > need:
        raise FormatError("trailing bytes after grid values")
    vals = np.frombuffer(data, dtype="<f4", count=X * Y * Z, offset=_SDFG_HEADER.size)
    return GridField(vals.reshape(Z, Y, X).transpose(2, 1, 0).copy(), (ox, oy, oz), spacing)


def save_grid(grid: GridField, path) -> None:
    Path(path).write_bytes(grid_to_bytes(grid))


def load_grid(path) -> GridField:
    return grid_from_bytes(Path(path).read_bytes())
