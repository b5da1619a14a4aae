"""PPM / PFM image I/O, camera JSON and RGB-D frame directories."""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .core import Camera, FormatError, FrameRGBD, TruncatedFileError

_HEADER_TOKEN = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)")


def _tokens(data: bytes, count: int):
    pos, out = 0, []
    for _ in range(count):
        m = _HEADER_TOKEN.match(data, pos)
        if not m:
            raise FormatError("malformed image header")
        out.append(m.group(2))
        pos = m.end()
    return out, pos


def to_bytes8(rgb: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(rgb, np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def ppm_bytes(rgb: np.ndarray) -> bytes:
    img = to_bytes8(rgb)
    h, w = img.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + img.tobytes()


def write_ppm(path, rgb: np.ndarray) -> None:
    Path(path).write_bytes(ppm_bytes(rgb))


def read_ppm(path) -> np.ndarray:
    """Binary P6 image as float64 (H, W, 3) in [0, 1]."""
    data = Path(path).read_bytes()
    if data[:2] != b"P6":
        raise FormatError(f"{path}: not a binary PPM (P6)")
    (magic, w, h, maxval), pos = _tokens(data, 4)
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported")
    pos += 1
    need = w * h * 3
    if len(data) - pos < need:
        raise TruncatedFileError(f"{path}: pixel data truncated")
    img = np.frombuffer(data, np.uint8, count=need, offset=pos).reshape(h, w, 3)
    return img.astype(np.float64) / 255.0


def write_image(path, rgb: np.ndarray) -> None:
    """PPM by default, PNG when the suffix asks for it."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(to_bytes8(rgb), "RGB").save(path)
    else:
        write_ppm(path, rgb)


def pfm_bytes(image: np.ndarray) -> bytes:
    img = np.asarray(image, dtype=np.float32)
    color = img.ndim == 3
    h, w = img.shape[:2]
    header = b"%s\n%d %d\n-1.0\n" % (b"PF" if color else b"Pf", w, h)
    # PFM rows run bottom to top
    return header + np.ascontiguousarray(img[::-1]).astype("<f4").tobytes()


def write_pfm(path, image: np.ndarray) -> None:
    Path(path).write_bytes(pfm_bytes(image))


def read_pfm(path) -> np.ndarray:
    """PFM image as float32, top row first; grayscale maps come back (H, W)."""
    data = Path(path).read_bytes()
    (kind, w, h, scale), pos = _tokens(data, 4)
    if kind not in (b"PF", b"Pf"):
        raise FormatError(f"{path}: not a PFM file")
    channels = 3 if kind == b"PF" else 1
    w, h = int(w), int(h)
    scale = float(scale)
    pos += 1
    need = w * h * channels * 4
    if len(data) - pos < need:
        raise TruncatedFileError(f"{path}: PFM data truncated")
    dtype = "<f4" if scale < 0 else ">f4"
    img = np.frombuffer(data, dtype, count=w * h * channels, offset=pos).astype(np.float32)
    img = img.reshape(h, w, channels)[::-1]
    return np.ascontiguousarray(img[..., 0] if channels == 1 else img)


def camera_to_dict(camera: Camera) -> dict:
    return {"K": camera.K.tolist(), "T_wc": camera.T_wc.tolist(),
            "width": camera.width, "height": camera.height}


def camera_from_dict(d: dict) -> Camera:
    try:
        return Camera(np.array(d["K"], np.float64), np.array(d["T_wc"], np.float64),
                      int(d["width"]), int(d["height"]))
    except KeyError as exc:
        raise FormatError(f"camera JSON missing {exc}") from None


def write_camera(path, camera: Camera) -> None:
    Path(path).write_text(json.dumps(camera_to_dict(camera), indent=2) + "\n")


def read_camera(path) -> Camera:
    try:
        return camera_from_dict(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid camera JSON ({exc})") from None


def frames_dir(path) -> Path:
    """Accept either a dataset root or its ``frames/`` directory."""
    path = Path(path)
    if (path / "frames").is_dir():
        return path / "frames"
    return path


def list_frames(path) -> list[str]:
    """Frame stems in filename order."""
    root = frames_dir(path)
    if not root.is_dir():
        raise FileNotFoundError(f"frame directory {root} does not exist")
    return sorted(p.stem for p in root.glob("*.json"))


def write_frame(root, name: str, camera: Camera, frame: FrameRGBD) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    write_ppm(root / f"{name}.ppm", frame.rgb)
    write_pfm(root / f"{name}.pfm", frame.depth)
    write_camera(root / f"{name}.json", camera)


def read_frame(root, name: str) -> tuple[Camera, FrameRGBD]:
    root = frames_dir(root)
    camera = read_camera(root / f"{name}.json")
    rgb = read_ppm(root / f"{name}.ppm")
    depth = read_pfm(root / f"{name}.pfm").astype(np.float64)
    depth = np.where(np.isfinite(depth), depth, 0.0)
    return camera, FrameRGBD(rgb, depth)
