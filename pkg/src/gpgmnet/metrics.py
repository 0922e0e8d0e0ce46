"""Image quality metrics: PSNR, SSIM, MS-SSIM, mPSNR, L*a*b* error and color histograms."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import colorimetry as cm
from .errors import ShapeError

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MPSNR_STOPS = tuple(range(-3, 4))


@dataclass
class MetricReport:
    name: str
    value: float
    channel_space: str = "YUV"
    params: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"{self.name}\t{format_value(self.value)}"


def format_value(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.6f}"


def write_report(reports: list[MetricReport], path) -> None:
    payload = [{**asdict(r), "value": format_value(r.value) if math.isinf(r.value) else r.value} for r in reports]
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"metric inputs differ in shape: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    """PSNR over all samples jointly; identical inputs give ``math.inf``."""
    a, b = _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10 * math.log10(peak * peak / mse)


def psnr_per_plane(a, b, peak: float = 1.0) -> list[float]:
    """PSNR of each channel of (n, 3, h, w) inputs."""
    a, b = _same_shape(a, b)
    return [psnr(a[:, i], b[:, i], peak) for i in range(a.shape[1])]


def _luma_plane(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 4:
        if x.shape[0] != 1:
            raise ShapeError("ssim takes a single frame")
        return x[0, 0]
    if x.ndim == 3:
        return x[0]
    if x.ndim == 2:
        return x
    raise ShapeError(f"cannot take a luma plane from shape {x.shape}")


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    t = np.arange(size) - (size - 1) / 2
    g = np.exp(-t * t / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x, g):
    k = g.size
    rows = np.lib.stride_tricks.sliding_window_view(x, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def _check_window(a, window):
    if min(a.shape) < window:
        raise ShapeError(f"ssim needs planes of at least {window}x{window}, got {a.shape}")


def _ssim_maps(a, b, peak, k1, k2, window, sigma):
    _check_window(a, window)
    g = gaussian_window(window, sigma)
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a * mu_a
    sbb = _filter_valid(b * b, g) - mu_b * mu_b
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    lum = (2 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    cs = (2 * sab + c2) / (saa + sbb + c2)
    return lum * cs, cs


def ssim(a, b, peak: float = 1.0, k1: float = 0.01, k2: float = 0.03,
         window: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM over valid Gaussian windows of the luma (first) plane."""
    a, b = _same_shape(_luma_plane(a), _luma_plane(b))
    _check_window(a, window)
    if np.array_equal(a, b):
        return 1.0
    smap, _ = _ssim_maps(a, b, peak, k1, k2, window, sigma)
    return float(smap.mean())


def ms_ssim_scales(h: int, w: int, window: int = 11, max_scales: int = 5) -> int:
    scales = 1
    while scales < max_scales and min(h, w) // 2 ** scales >= window:
        scales += 1
    return scales


def ms_ssim(a, b, peak: float = 1.0, weights=MS_SSIM_WEIGHTS, k1: float = 0.01, k2: float = 0.03,
            window: int = 11, sigma: float = 1.5, scales: int | None = None) -> float:
    """Multi-scale SSIM on the luma plane.

    Contrast-structure terms at every scale but the coarsest, full SSIM at
    the coarsest; 2x2 mean downsampling between scales.  Small inputs use
    fewer scales with the leading weights renormalized to sum to one.
    """
    a, b = _same_shape(_luma_plane(a), _luma_plane(b))
    if scales is None:
        scales = ms_ssim_scales(*a.shape, window=window, max_scales=len(weights))
    w = np.asarray(weights[:scales], dtype=np.float64)
    w = w / w.sum()
    _check_window(a, window)
    if np.array_equal(a, b):
        return 1.0
    value = 1.0
    for s in range(scales):
        smap, cs = _ssim_maps(a, b, peak, k1, k2, window, sigma)
        term = smap.mean() if s == scales - 1 else cs.mean()
        value *= max(float(term), 0.0) ** w[s]
        if s < scales - 1:
            h2, w2 = a.shape[0] // 2 * 2, a.shape[1] // 2 * 2
            a = a[:h2, :w2].reshape(h2 // 2, 2, w2 // 2, 2).mean(axis=(1, 3))
            b = b[:h2, :w2].reshape(h2 // 2, 2, w2 // 2, 2).mean(axis=(1, 3))
    return float(value)


def exposure_map(linear, stop: float, gamma: float = 2.2) -> np.ndarray:
    """8-bit display rendering ``clamp(255 * (2^stop * x)^(1/gamma), 0, 255)``."""
    x = np.maximum(np.asarray(linear, dtype=np.float64), 0.0)
    return np.clip(255.0 * np.power(2.0 ** stop * x, 1.0 / gamma), 0.0, 255.0)


def mpsnr(a, b, stops=MPSNR_STOPS, gamma: float = 2.2) -> float:
    """Multi-exposure PSNR of two linear-light frames (MSE averaged over stops)."""
    a, b = _same_shape(a, b)
    mses = []
    informative = False
    for c in stops:
        ta, tb = exposure_map(a, c, gamma), exposure_map(b, c, gamma)
        if np.any((ta > 0) & (ta < 255)) or np.any((tb > 0) & (tb < 255)):
            informative = True
        mses.append(np.mean((ta - tb) ** 2))
    if not informative:
        raise ValueError("mpsnr: every pixel is clipped at every exposure stop")
    mse = float(np.mean(mses))
    if mse == 0:
        return math.inf
    return 10 * math.log10(255.0 ** 2 / mse)


def lab_mse(a, b, mode: str = "LAB", gamut=cm.Gamut.BT2020, white_scale: float = 1.0) -> float:
    """Mean squared L*a*b* distance (``LAB``) or squared L* distance (``L_ONLY``) of linear RGB frames."""
    a, b = _same_shape(a, b)
    la = cm.rgb_to_lab(a, gamut, white_scale)
    lb = cm.rgb_to_lab(b, gamut, white_scale)
    ax = cm._color_axis(a)
    diff = np.moveaxis(la - lb, ax, 0)
    mode = mode.upper()
    if mode == "LAB":
        return float(np.mean(np.sum(diff ** 2, axis=0)))
    if mode == "L_ONLY":
        return float(np.mean(diff[0] ** 2))
    raise ValueError(f"lab_mse mode must be LAB or L_ONLY, got {mode!r}")


def pq_yuv_to_linear(yuv, white_nits: float = 100.0) -> np.ndarray:
    """Normalized BT.2020 PQ Y'CbCr -> linear RGB with 1.0 = ``white_nits``."""
    rgb = np.clip(cm.yuv_to_rgb(yuv, cm.Gamut.BT2020), 0.0, 1.0)
    return cm.pq_eotf(rgb) * (10000.0 / white_nits)


def color_histogram(frame, bins: int = 128) -> np.ndarray:
    """Per-channel counts over ``bins`` equal-width bins of [0, 1]; shape (channels, bins)."""
    x = np.asarray(frame, dtype=np.float64)
    if x.ndim == 4:
        x = x[0]
    idx = np.clip(np.floor(x * bins).astype(np.int64), 0, bins - 1)
    return np.stack([np.bincount(plane.ravel(), minlength=bins) for plane in idx])


def normalize_histogram(counts, reference_counts) -> np.ndarray:
    """Counts divided by a reference histogram's counts (0 where the reference bin is empty)."""
    counts = np.asarray(counts, dtype=np.float64)
    ref = np.asarray(reference_counts, dtype=np.float64)
    out = np.zeros_like(counts)
    np.divide(counts, ref, out=out, where=ref > 0)
    return out


def row_smoothness(x) -> np.ndarray:
    """Per-row mean absolute second difference along the last axis, averaged over channels.

    Accepts (h, w), (c, h, w) or (1, c, h, w); returns one value per row.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 4:
        x = x[0]
    if x.ndim == 2:
        x = x[None]
    if x.shape[-1] < 3:
        raise ShapeError("smoothness needs at least 3 samples per row")
    d2 = np.abs(np.diff(x, n=2, axis=-1))
    return d2.mean(axis=(0, 2))
