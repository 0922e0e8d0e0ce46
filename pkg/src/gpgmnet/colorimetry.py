"""Transfer functions, gamut matrices and color-space conversions.

Linear light is normalized so that 1.0 = 10000 cd/m^2 on the HDR side.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import ConfigError


class Gamut(str, Enum):
    BT709 = "BT709"
    BT2020 = "BT2020"


class Transfer(str, Enum):
    GAMMA_SDR = "GAMMA_SDR"
    PQ = "PQ"
    LINEAR = "LINEAR"


class Chroma(str, Enum):
    YUV444 = "YUV444"
    YUV420 = "YUV420"
    RGB = "RGB"


@dataclass
class Frame:
    """An image plus the colorimetric tags describing how to read it.

    ``planes`` holds three 2-D float arrays in [0, 1].  For 4:4:4 and RGB they
    share one size and :attr:`pixels` stacks them as (1, 3, h, w).
    """
    planes: list
    gamut: Gamut = Gamut.BT709
    transfer: Transfer = Transfer.GAMMA_SDR
    bit_depth: int = 8
    chroma: Chroma = Chroma.YUV444
    range: str = "FULL"
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_pixels(cls, pixels: np.ndarray, **tags) -> "Frame":
        pixels = np.asarray(pixels)
        if pixels.ndim == 4:
            pixels = pixels[0]
        if pixels.ndim != 3 or pixels.shape[0] != 3:
            raise ConfigError(f"Frame pixels must be (1, 3, h, w) or (3, h, w), got {pixels.shape}")
        return cls([pixels[i] for i in range(3)], **tags)

    @property
    def pixels(self) -> np.ndarray:
        if self.chroma == Chroma.YUV420:
            raise ConfigError("4:2:0 frame has unequal plane sizes; convert to 4:4:4 first")
        return np.stack(self.planes)[None]

    @property
    def height(self) -> int:
        return self.planes[0].shape[0]

    @property
    def width(self) -> int:
        return self.planes[0].shape[1]

    def with_pixels(self, pixels: np.ndarray, **tags) -> "Frame":
        pixels = np.asarray(pixels)
        if pixels.ndim == 4:
            pixels = pixels[0]
        return replace(self, planes=[pixels[i] for i in range(3)], meta=dict(self.meta), **tags)


# ---------------------------------------------------------------------------
# transfer functions
# ---------------------------------------------------------------------------

# the rounded 1.099 / 0.018 leave a 2.5e-4 jump at the toe; these values make the curve continuous
_G_ALPHA, _G_BETA, _G_TOE, _G_POW = 1.09929682680944, 0.018053968510807, 4.5, 0.45
_G_TOE_OUT = _G_TOE * _G_BETA


def _clip01(x, what):
    x = np.asarray(x, dtype=np.float64)
    if np.any((x < 0) | (x > 1)):
        x = np.clip(x, 0.0, 1.0)
    return x


def gamma_oetf(linear, pure_power: bool = False):
    """BT.709 camera curve (or a bare 1/2.2 power when ``pure_power``)."""
    x = _clip01(linear, "gamma_oetf")
    if pure_power:
        return x ** (1 / 2.2)
    return np.where(x < _G_BETA, _G_TOE * x, _G_ALPHA * np.power(x, _G_POW) - (_G_ALPHA - 1))


def gamma_eotf(encoded, pure_power: bool = False):
    y = _clip01(encoded, "gamma_eotf")
    if pure_power:
        return y ** 2.2
    return np.where(y < _G_TOE_OUT, y / _G_TOE,
                    np.power((y + (_G_ALPHA - 1)) / _G_ALPHA, 1 / _G_POW))


PQ_M1 = 2610 / 16384
PQ_M2 = 2523 / 4096 * 128
PQ_C1 = 3424 / 4096
PQ_C2 = 2413 / 4096 * 32
PQ_C3 = 2392 / 4096 * 32


def pq_oetf(linear_norm):
    """SMPTE ST 2084 inverse EOTF; input is luminance / 10000 nits."""
    y = np.power(_clip01(linear_norm, "pq_oetf"), PQ_M1)
    return np.power((PQ_C1 + PQ_C2 * y) / (1 + PQ_C3 * y), PQ_M2)


def pq_eotf(encoded):
    e = np.power(_clip01(encoded, "pq_eotf"), 1 / PQ_M2)
    return np.power(np.maximum(e - PQ_C1, 0) / (PQ_C2 - PQ_C3 * e), 1 / PQ_M1)


# ---------------------------------------------------------------------------
# gamut
# ---------------------------------------------------------------------------

PRIMARIES = {
    Gamut.BT709: ((0.640, 0.330), (0.300, 0.600), (0.150, 0.060)),
    Gamut.BT2020: ((0.708, 0.292), (0.170, 0.797), (0.131, 0.046)),
}
D65 = (0.3127, 0.3290)


def _xy_to_xyz(xy):
    x, y = xy
    return np.array([x / y, 1.0, (1 - x - y) / y])


def rgb_to_xyz_matrix(gamut) -> np.ndarray:
    """RGB -> XYZ matrix from the gamut's primaries, scaled so white has Y = 1."""
    prim = np.stack([_xy_to_xyz(p) for p in PRIMARIES[Gamut(gamut)]], axis=1)
    s = np.linalg.solve(prim, _xy_to_xyz(D65))
    return prim * s[None, :]


M_709_TO_2020 = np.linalg.solve(rgb_to_xyz_matrix(Gamut.BT2020), rgb_to_xyz_matrix(Gamut.BT709))
M_2020_TO_709 = np.linalg.inv(M_709_TO_2020)


def _apply_matrix(m: np.ndarray, rgb, axis: int):
    rgb = np.asarray(rgb, dtype=np.float64)
    moved = np.moveaxis(rgb, axis, -1)
    return np.moveaxis(moved @ m.T, -1, axis)


def _color_axis(rgb) -> int:
    """Channel axis: 1 for (n, 3, h, w) tensors, 0 for (3, h, w), else last."""
    shape = np.shape(rgb)
    if len(shape) == 4 and shape[1] == 3:
        return 1
    if len(shape) == 3 and shape[0] == 3:
        return 0
    return -1


def gamut_709_to_2020(rgb_linear, axis: int | None = None):
    return _apply_matrix(M_709_TO_2020, rgb_linear, _color_axis(rgb_linear) if axis is None else axis)


def gamut_2020_to_709(rgb_linear, axis: int | None = None, clamp: bool = False):
    out = _apply_matrix(M_2020_TO_709, rgb_linear, _color_axis(rgb_linear) if axis is None else axis)
    return np.clip(out, 0.0, 1.0) if clamp else out


# ---------------------------------------------------------------------------
# Y'CbCr
# ---------------------------------------------------------------------------

LUMA_COEFFS = {Gamut.BT709: (0.2126, 0.0722), Gamut.BT2020: (0.2627, 0.0593)}


def _luma_coeffs(gamut):
    try:
        return LUMA_COEFFS[Gamut(gamut)]
    except ValueError as exc:
        raise ConfigError(f"unknown gamut {gamut!r}") from exc


def rgb_to_yuv(rgb, gamut, axis: int | None = None):
    """Full-range non-constant-luminance Y'CbCr with chroma offset by 0.5."""
    kr, kb = _luma_coeffs(gamut)
    kg = 1 - kr - kb
    ax = _color_axis(rgb) if axis is None else axis
    r, g, b = np.moveaxis(np.asarray(rgb, dtype=np.float64), ax, 0)
    y = kr * r + kg * g + kb * b
    u = (b - y) / (2 * (1 - kb)) + 0.5
    v = (r - y) / (2 * (1 - kr)) + 0.5
    return np.moveaxis(np.stack([y, u, v]), 0, ax)


def yuv_to_rgb(yuv, gamut, axis: int | None = None):
    kr, kb = _luma_coeffs(gamut)
    kg = 1 - kr - kb
    ax = _color_axis(yuv) if axis is None else axis
    y, u, v = np.moveaxis(np.asarray(yuv, dtype=np.float64), ax, 0)
    r = y + 2 * (1 - kr) * (v - 0.5)
    b = y + 2 * (1 - kb) * (u - 0.5)
    g = (y - kr * r - kb * b) / kg
    return np.moveaxis(np.stack([r, g, b]), 0, ax)


# ---------------------------------------------------------------------------
# quantization
# ---------------------------------------------------------------------------

def quantize(x, bits: int) -> np.ndarray:
    """Full-range code values ``floor(x * (2^bits - 1) + 0.5)``, clamped."""
    if bits not in (8, 10, 16):
        raise ConfigError(f"bit depth must be 8, 10 or 16, got {bits}")
    peak = (1 << bits) - 1
    codes = np.floor(np.asarray(x, dtype=np.float64) * peak + 0.5)
    return np.clip(codes, 0, peak).astype(np.uint16 if bits > 8 else np.uint8)


def dequantize(samples, bits: int) -> np.ndarray:
    if bits not in (8, 10, 16):
        raise ConfigError(f"bit depth must be 8, 10 or 16, got {bits}")
    return np.asarray(samples, dtype=np.float64) / ((1 << bits) - 1)


# ---------------------------------------------------------------------------
# CIE L*a*b*
# ---------------------------------------------------------------------------

_LAB_DELTA = 6 / 29


def _lab_f(t):
    return np.where(t > _LAB_DELTA ** 3, np.cbrt(t), t / (3 * _LAB_DELTA ** 2) + 4 / 29)


def rgb_to_lab(rgb_linear, gamut=Gamut.BT709, white_scale: float = 1.0, axis: int | None = None):
    """Linear RGB -> L*a*b* relative to D65; ``white_scale`` is the linear value of reference white."""
    ax = _color_axis(rgb_linear) if axis is None else axis
    m = rgb_to_xyz_matrix(gamut)
    xyz = _apply_matrix(m, np.asarray(rgb_linear, dtype=np.float64) / white_scale, ax)
    white = m.sum(axis=1)
    X, Y, Z = np.moveaxis(xyz, ax, 0)
    fx, fy, fz = _lab_f(X / white[0]), _lab_f(Y / white[1]), _lab_f(Z / white[2])
    return np.moveaxis(np.stack([116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)]), 0, ax)


# ---------------------------------------------------------------------------
# synthetic forward tone mapping (HDR -> SDR)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ToneMapConfig:
    k: float = 0.01
    white_nits: float = 100.0
    white_target: float = 0.92
    knee: float = 0.9


def soft_clip(x, knee: float = 0.9):
    """Identity below ``knee``, tanh roll-off into 1 above; negatives clamp to 0."""
    x = np.maximum(np.asarray(x, dtype=np.float64), 0.0)
    span = 1.0 - knee
    return np.where(x <= knee, x, knee + span * np.tanh((x - knee) / span))


def tone_map_forward(hdr_linear, cfg: ToneMapConfig = ToneMapConfig(), axis: int | None = None):
    """BT.2020 linear HDR (1.0 = 10000 nits) -> BT.709 linear SDR in [0, 1].

    Per-channel Reinhard ``e*x / (e*x + k)`` with exposure ``e`` chosen so
    ``white_nits`` lands on ``white_target``, then gamut conversion and soft clip.
    """
    x = np.maximum(np.asarray(hdr_linear, dtype=np.float64), 0.0)
    exposure = cfg.white_target / (1 - cfg.white_target) * cfg.k / (cfg.white_nits / 10000.0)
    ex = exposure * x
    sdr2020 = ex / (ex + cfg.k)
    ax = _color_axis(hdr_linear) if axis is None else axis
    return soft_clip(gamut_2020_to_709(sdr2020, axis=ax), cfg.knee)


def soft_clip_inverse(y, knee: float = 0.9, limit: float = 0.999):
    """Inverse of :func:`soft_clip` for ``y`` in [0, ``limit``]."""
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, limit)
    span = 1.0 - knee
    return np.where(y <= knee, y, knee + span * np.arctanh(np.clip((y - knee) / span, 0.0, 1.0 - 1e-12)))


def tone_map_inverse(sdr_linear, cfg: ToneMapConfig = ToneMapConfig(), axis: int | None = None):
    """Invert :func:`tone_map_forward`: BT.709 linear SDR -> BT.2020 linear HDR, clipped to [0, 1].

    Exact wherever the forward curve is invertible (SDR below the soft-clip
    asymptote, gamut-converted values inside [0, 1)).
    """
    ax = _color_axis(sdr_linear) if axis is None else axis
    s2020 = np.clip(gamut_709_to_2020(soft_clip_inverse(sdr_linear, cfg.knee), axis=ax), 0.0, 1.0 - 1e-9)
    exposure = cfg.white_target / (1 - cfg.white_target) * cfg.k / (cfg.white_nits / 10000.0)
    return np.clip(cfg.k * s2020 / ((1.0 - s2020) * exposure), 0.0, 1.0)
