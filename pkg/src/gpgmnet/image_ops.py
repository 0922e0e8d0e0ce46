"""Classical image operators: box / guided filtering and cubic resampling."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import ConfigError, NumericalError, ShapeError

CUBIC_A = -0.5


@dataclass(frozen=True)
class FilterConfig:
    radius: int = 5
    eps: float = 0.01

    def __post_init__(self):
        if self.radius < 1:
            raise ConfigError(f"guided filter radius must be >= 1, got {self.radius}")
        if not self.eps > 0:
            raise ConfigError(f"guided filter eps must be > 0, got {self.eps}")


def box_filter(plane: np.ndarray, radius: int) -> np.ndarray:
    """Mean over a (2r+1)^2 window with replicate edges, via running sums.

    Works on the last two axes, so stacked planes are filtered independently.
    """
    plane = np.asarray(plane)
    if plane.ndim < 2 or plane.shape[-1] == 0 or plane.shape[-2] == 0:
        raise ShapeError(f"box_filter needs a non-empty plane, got shape {plane.shape}")
    if radius < 1:
        raise ConfigError("box_filter radius must be >= 1")
    width = 2 * radius + 1
    lead = [(0, 0)] * (plane.ndim - 2)
    padded = np.pad(plane.astype(np.float64), lead + [(radius, radius), (radius, radius)], mode="edge")
    c = np.cumsum(padded, axis=-2)
    c = np.concatenate([np.zeros_like(c[..., :1, :]), c], axis=-2)
    rows = c[..., width:, :] - c[..., :-width, :]
    c = np.cumsum(rows, axis=-1)
    c = np.concatenate([np.zeros_like(c[..., :1]), c], axis=-1)
    sums = c[..., width:] - c[..., :-width]
    return (sums / (width * width)).astype(plane.dtype, copy=False)


def guided_filter(x: np.ndarray, cfg: FilterConfig = FilterConfig()) -> np.ndarray:
    """Self-guided filter, applied to every (sample, channel) plane.

    Returns the edge-aware base layer ``mean(a) * I + mean(b)``.
    """
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise NumericalError("guided_filter: non-finite input")
    I = x.astype(np.float64)
    r = cfg.radius
    mean_i = box_filter(I, r)
    var_i = box_filter(I * I, r) - mean_i * mean_i
    # self-guided: cov(I, p) == var(I)
    a = var_i / (var_i + cfg.eps)
    b = mean_i - a * mean_i
    q = box_filter(a, r) * I + box_filter(b, r)
    return q.astype(x.dtype, copy=False)


def _cubic(t: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    t = np.abs(t)
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


@lru_cache(maxsize=128)
def resample_matrix(in_len: int, out_len: int, scale: Fraction, antialias: bool = True) -> np.ndarray:
    """Dense (out_len, in_len) cubic resampling operator.

    Center-aligned grid ``src = (dst + 0.5) / scale - 0.5``, replicate edges.
    When shrinking with ``antialias`` the kernel is stretched by ``1/scale``.
    """
    s = float(scale)
    support = 2.0
    stretch = 1.0
    if s < 1 and antialias:
        stretch = 1.0 / s
    src = (np.arange(out_len) + 0.5) / s - 0.5
    reach = int(np.ceil(support * stretch))
    base = np.floor(src).astype(int)
    taps = base[:, None] + np.arange(-reach + 1, reach + 1)[None, :]
    w = _cubic((src[:, None] - taps) / stretch)
    w /= w.sum(axis=1, keepdims=True)
    mat = np.zeros((out_len, in_len))
    rows = np.repeat(np.arange(out_len), taps.shape[1])
    np.add.at(mat, (rows, np.clip(taps, 0, in_len - 1).ravel()), w.ravel())
    return mat


def _as_fraction(scale) -> Fraction:
    try:
        f = Fraction(scale).limit_denominator(1000)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scale {scale!r}") from exc
    if f <= 0:
        raise ConfigError(f"scale must be positive, got {scale}")
    return f


def bicubic_resize(x: np.ndarray, scale, antialias: bool = True) -> np.ndarray:
    """Separable cubic (a = -0.5) resize of the last two axes by ``scale``.

    Output size is ``floor(size * scale)``.  ``scale == 1`` returns an exact copy.
    """
    x = np.asarray(x)
    f = _as_fraction(scale)
    if x.ndim < 2:
        raise ShapeError("bicubic_resize needs at least a 2-D array")
    if f == 1:
        return x.copy()
    h, w = x.shape[-2:]
    ho, wo = int(h * f), int(w * f)
    if ho < 1 or wo < 1:
        raise ShapeError(f"bicubic_resize output would be {ho}x{wo}")
    mh = resample_matrix(h, ho, f, antialias).astype(x.dtype)
    mw = resample_matrix(w, wo, f, antialias).astype(x.dtype)
    out = np.matmul(np.matmul(mh, x), mw.T)
    return np.ascontiguousarray(out)
