"""Image quality metrics and evaluation reports."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, mask=None) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1], optionally
    restricted to mask-true pixels. Exact matches report ``PSNR_CAP``."""
    a, b = _check_pair(a, b)
    diff = (a - b) ** 2
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ValueError("PSNR mask selects no pixels")
        diff = diff[mask]
    mse = float(diff.mean())
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable 'valid' correlation over the first two axes
    n = len(g)
    h, w = img.shape[:2]
    rows = sum(g[i] * img[i:h - n + 1 + i] for i in range(n))
    return sum(g[i] * rows[:, i:w - n + 1 + i] for i in range(n))


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), per channel."""
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ValueError(f"images smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    g = gaussian_window()
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.clip((num / den).mean(), -1.0, 1.0))


def reprojection_loss(a, b) -> float:
    """L1 plus half the per-pixel Euclidean distance, normalized by C*H*W."""
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    d = a - b
    h, w, c = d.shape
    l1 = np.abs(d).sum()
    l2 = np.sqrt((d * d).sum(axis=-1)).sum()
    return float((l1 + 0.5 * l2) / (c * h * w))


@dataclass
class ViewResult:
    name: str
    psnr: float
    ssim: float
    loss: float
    covered_fraction: float
    psnr_masked: float | None = None
    psnr_unmasked: float | None = None


@dataclass
class ImageReport:
    views: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([v.psnr for v in self.views])) if self.views else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([v.ssim for v in self.views])) if self.views else float("nan")

    def to_dict(self) -> dict:
        out = {"views": [asdict(v) for v in self.views],
               "mean_psnr": self.mean_psnr, "mean_ssim": self.mean_ssim}
        if self.config:
            out["config"] = self.config
        return out

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def evaluate_view(name: str, rendered, gt, foreground, coverage, use_mask: bool = True) -> ViewResult:
    """Score one rendered view; masked PSNR uses the ground-truth foreground."""
    foreground = np.asarray(foreground, bool)
    masked = psnr(rendered, gt, foreground) if foreground.any() else PSNR_CAP
    unmasked = psnr(rendered, gt)
    fg = int(foreground.sum())
    covered = float((np.asarray(coverage, bool) & foreground).sum() / fg) if fg else 0.0
    return ViewResult(name, masked if use_mask else unmasked, ssim(rendered, gt),
                      reprojection_loss(gt, rendered), covered, masked, unmasked)
