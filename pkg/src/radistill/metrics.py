"""Image quality metrics and the held-out evaluation harness."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .renderer import RenderConfig, render_image

PSNR_CAP = 99.0


def psnr(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    err = float(np.mean((a - b) ** 2))
    if err < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, -10.0 * np.log10(err))


def _gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2
    w = np.exp(-x ** 2 / (2 * sigma ** 2))
    return w / w.sum()


def ssim(a, b, win_size: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
         data_range: float = 1.0) -> float:
    """Mean structural similarity on the channel-mean grey images.

    Local statistics use a separable Gaussian window; the border where the
    window does not fit is excluded from the mean.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a, b = a.mean(axis=-1), b.mean(axis=-1)
    if min(a.shape) < win_size:
        raise ValueError(f"images of shape {a.shape} are smaller than the {win_size}px window")
    w = _gaussian_window(win_size, sigma)

    def blur(img):
        return correlate1d(correlate1d(img, w, axis=0, mode="reflect"), w, axis=1, mode="reflect")

    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a ** 2
    var_b = blur(b * b) - mu_b ** 2
    cov = blur(a * b) - mu_a * mu_b
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    smap = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    pad = (win_size - 1) // 2
    return float(smap[pad:-pad, pad:-pad].mean())


@dataclass
class MetricReport:
    psnr: list
    ssim: list
    mean_psnr: float
    mean_ssim: float

    @classmethod
    def from_lists(cls, p, s):
        return cls(list(map(float, p)), list(map(float, s)), float(np.mean(p)), float(np.mean(s)))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def evaluate(field, viewset, cfg: RenderConfig | None = None) -> MetricReport:
    """Render every view of ``viewset`` and score against its images."""
    if viewset.images is None:
        raise ValueError("viewset has no ground-truth images")
    cfg = cfg or RenderConfig()
    ps, ss = [], []
    for cam, gt in zip(viewset.cameras, viewset.images):
        img, _ = render_image(field, cam, cfg)
        ps.append(psnr(img, gt))
        ss.append(ssim(img, gt))
    return MetricReport.from_lists(ps, ss)
