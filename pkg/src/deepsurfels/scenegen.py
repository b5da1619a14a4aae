"""Synthetic ground truth: analytic scenes with procedural paint, orbit
cameras and an exact RGB-D reference renderer. Nothing here is random."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Camera, FrameRGBD
from .formats import write_frame
from .render import pixel_rays, trace_limits
from .sdf import AnalyticField, Box, Sphere, Torus, sphere_trace


@dataclass(frozen=True)
class ConstantPaint:
    rgb: tuple = (0.5, 0.5, 0.5)

    def __call__(self, p: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.rgb, np.float64), p.shape).copy()


@dataclass(frozen=True)
class CheckerPaint:
    """Checker over spherical coordinates about ``center``: polar angle
    from +y, azimuth atan2(z, x) in [0, 2pi). Even cells get ``rgb_a``."""

    scale: float = 4.0
    rgb_a: tuple = (0.9, 0.85, 0.2)
    rgb_b: tuple = (0.1, 0.25, 0.6)
    center: tuple = (0.0, 0.0, 0.0)

    def cells(self, p: np.ndarray):
        d = np.asarray(p, np.float64) - np.asarray(self.center, np.float64)
        r = np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])
        theta = np.arccos(np.clip(d[..., 1] / np.where(r > 0, r, 1.0), -1.0, 1.0))
        phi = np.mod(np.arctan2(d[..., 2], d[..., 0]), 2.0 * np.pi)
        return (np.floor(self.scale * theta / np.pi).astype(np.int64),
                np.floor(self.scale * phi / np.pi).astype(np.int64))

    def __call__(self, p: np.ndarray) -> np.ndarray:
        a, b = self.cells(p)
        odd = ((a + b) % 2 == 1)[..., None]
        return np.where(odd, np.asarray(self.rgb_b, np.float64), np.asarray(self.rgb_a, np.float64))


@dataclass(frozen=True)
class AxisGradientPaint:
    """Linear blend from ``rgb_a`` at ``lo`` to ``rgb_b`` at ``hi`` along one axis."""

    axis: int = 0
    lo: float = -1.0
    hi: float = 1.0
    rgb_a: tuple = (0.1, 0.2, 0.8)
    rgb_b: tuple = (0.9, 0.6, 0.1)

    def __call__(self, p: np.ndarray) -> np.ndarray:
        t = np.clip((np.asarray(p, np.float64)[..., self.axis] - self.lo) / (self.hi - self.lo), 0.0, 1.0)
        a = np.asarray(self.rgb_a, np.float64)
        b = np.asarray(self.rgb_b, np.float64)
        return a * (1.0 - t[..., None]) + b * t[..., None]


PAINTS = {"constant": ConstantPaint, "checker": CheckerPaint, "axis-gradient": AxisGradientPaint}


@dataclass(frozen=True)
class SyntheticScene:
    name: str
    field: AnalyticField
    paint: object
    background: tuple = (0.0, 0.0, 0.0)

    @property
    def bounds(self):
        return self.field.bounds

    def to_dict(self) -> dict:
        kind = next(k for k, v in PAINTS.items() if isinstance(self.paint, v))
        paint = {"type": kind}
        for key in self.paint.__dataclass_fields__:
            val = getattr(self.paint, key)
            paint[key] = list(map(float, val)) if isinstance(val, tuple) else val
        return {"name": self.name, **self.field.to_dict(), "paint": paint,
                "background": list(map(float, self.background))}

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticScene":
        paint = dict(d["paint"])
        kind = PAINTS[paint.pop("type")]
        paint = kind(**{k: tuple(v) if isinstance(v, list) else v for k, v in paint.items()})
        return cls(d.get("name", "scene"), AnalyticField.from_dict(d), paint,
                   tuple(d.get("background", (0.0, 0.0, 0.0))))


SCENES = ("constant-sphere", "checker-sphere", "checker-box", "gradient-torus")


def make_scene(name: str, checker_scale: float = 4.0) -> SyntheticScene:
    if name == "constant-sphere":
        return SyntheticScene(name, AnalyticField((Sphere((0.0, 0.0, 0.0), 0.6),)), ConstantPaint())
    if name == "checker-sphere":
        return SyntheticScene(name, AnalyticField((Sphere((0.0, 0.0, 0.0), 0.6),)),
                              CheckerPaint(scale=checker_scale))
    if name == "checker-box":
        return SyntheticScene(name, AnalyticField((Box((0.0, 0.0, 0.0), (0.45, 0.45, 0.45)),)),
                              CheckerPaint(scale=checker_scale))
    if name == "gradient-torus":
        return SyntheticScene(name, AnalyticField((Torus((0.0, 0.0, 0.0), 0.55, 0.2),)),
                              AxisGradientPaint())
    raise ValueError(f"unknown scene {name!r}; choose from {', '.join(SCENES)}")


def write_scene(path, scene: SyntheticScene) -> None:
    Path(path).write_text(json.dumps(scene.to_dict(), indent=2) + "\n")


def read_scene(path) -> SyntheticScene:
    return SyntheticScene.from_dict(json.loads(Path(path).read_text()))


def paint_color(scene: SyntheticScene, p) -> np.ndarray:
    return scene.paint(np.asarray(p, np.float64))


def intrinsics(width: int, height: int, fov_deg: float = 40.0) -> np.ndarray:
    """Square-pixel K with the horizontal field of view ``fov_deg``."""
    f = 0.5 * width / math.tan(math.radians(fov_deg) / 2.0)
    return np.array([[f, 0.0, width / 2.0], [0.0, f, height / 2.0], [0.0, 0.0, 1.0]])


def look_at(position, target, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """World-to-camera transform with +z toward ``target`` and image-down
    opposite ``up``. Falls back to +z as up when looking along ``up``."""
    pos = np.asarray(position, np.float64)
    fwd = np.asarray(target, np.float64) - pos
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, np.float64))
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, np.array([0.0, 0.0, 1.0]))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    T = np.eye(4)
    T[:3, :3] = np.stack([right, down, fwd])
    T[:3, 3] = -T[:3, :3] @ pos
    return T


def orbit_cameras(n: int, radius: float, target=(0.0, 0.0, 0.0), elevation_deg: float = 25.0,
                  K=None, width: int = 128, height: int = 128,
                  azimuth_offset: float = 0.0) -> list[Camera]:
    """``n`` cameras evenly spaced in azimuth (shifted by ``azimuth_offset``
    steps) at a fixed elevation, all looking at ``target``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not radius > 0:
        raise ValueError("radius must be positive")
    K = intrinsics(width, height) if K is None else np.asarray(K, np.float64)
    target = np.asarray(target, np.float64)
    el = math.radians(elevation_deg)
    cams = []
    for i in range(n):
        az = 2.0 * math.pi * (i + azimuth_offset) / n
        offset = np.array([math.cos(el) * math.sin(az), math.sin(el), math.cos(el) * math.cos(az)])
        cams.append(Camera(K, look_at(target + radius * offset, target), width, height))
    return cams


def render_gt(scene: SyntheticScene, camera: Camera, supersample: int = 1) -> FrameRGBD:
    """Reference RGB-D frame.

    Depth is the camera z of the pixel-center hit. A pixel whose center ray
    misses is background; otherwise its color is the mean paint over the
    stratified sub-rays that hit.
    """
    if supersample < 1:
        raise ValueError("supersample must be >= 1")
    s = supersample
    offsets = [((b + 0.5) / s, (a + 0.5) / s) for a in range(s) for b in range(s)]
    t_max, eps = trace_limits(scene.field, camera, None)
    h, w = camera.height, camera.width

    def trace(offs):
        origins, dirs, cam_dirs = pixel_rays(camera, offs)
        hit, t, pts = sphere_trace(scene.field, origins.reshape(-1, 3), dirs.reshape(-1, 3), t_max, eps)
        return hit.reshape(len(offs), h, w), t.reshape(len(offs), h, w), pts.reshape(len(offs), h, w, 3), cam_dirs

    c_hit, c_t, c_pts, c_dirs = trace([(0.5, 0.5)])
    c_hit, c_t, c_pts = c_hit[0], c_t[0], c_pts[0]
    depth = np.where(c_hit, c_t * c_dirs[0, ..., 2], 0.0)
    if s == 1:
        color = paint_color(scene, c_pts)
    else:
        hit, _, pts, _ = trace(offsets)
        paint = paint_color(scene, pts)
        n = hit.sum(axis=0)
        total = np.where(hit[..., None], paint, 0.0).sum(axis=0)
        color = np.where((n > 0)[..., None], total / np.maximum(n, 1)[..., None],
                         paint_color(scene, c_pts))
        # keep flat regions bit-identical to single sampling (a float mean of
        # equal values need not round back to that value)
        first = np.take_along_axis(paint, np.argmax(hit, axis=0)[None, ..., None], axis=0)[0]
        flat = np.all(~hit[..., None] | (paint == first), axis=(0, 3)) & (n > 0)
        color = np.where(flat[..., None], first, color)
    rgb = np.where(c_hit[..., None], color, np.asarray(scene.background, np.float64))
    return FrameRGBD(np.clip(rgb, 0.0, 1.0), depth)


def generate_dataset(scene: SyntheticScene, cameras: list[Camera], out_dir, supersample: int = 1,
                     progress=None) -> Path:
    """Write ``scene.json`` and ``frames/NNNN.{ppm,pfm,json}``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_scene(out / "scene.json", scene)
    for i, cam in enumerate(cameras):
        write_frame(out / "frames", f"{i:04d}", cam, render_gt(scene, cam, supersample))
        if progress:
            progress(i + 1, len(cameras))
    return out
