"""Frame and weight files, synthetic SDR/HDR pairs, patch sampling, test patterns.

File layouts (all little-endian):

YUV frame file::

    "GPYV" | version u32 | width u32 | height u32 | bit_depth u8 | chroma u8
    | gamut u8 | transfer u8 | frame_count u32 | planar Y, U, V per frame

8-bit samples are single bytes, 10-bit samples are u16 containers holding
0..1023.  Chroma 0 = 4:4:4, 1 = 4:2:0 (quarter-size U/V planes).

Weights file::

    "GPGM" | version u32 | tensor_count u32 | per tensor:
    name_len u16 | name utf-8 | rank u8 | dims u32 * rank | float32 payload
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import colorimetry as cm
from .colorimetry import Chroma, Frame, Gamut, Transfer
from .errors import ConfigError, DataError, ShapeError
from .image_ops import bicubic_resize
from .model import ModelConfig, ModelParams, validate_params

YUV_MAGIC = b"GPYV"
YUV_VERSION = 1
_YUV_HEADER = struct.Struct("<4sIIIBBBBI")
MAX_DIM = 1 << 15

WEIGHTS_MAGIC = b"GPGM"
WEIGHTS_VERSION = 1

_CHROMA_CODES = {Chroma.YUV444: 0, Chroma.YUV420: 1}
_GAMUT_CODES = {Gamut.BT709: 0, Gamut.BT2020: 1}
_TRANSFER_CODES = {Transfer.GAMMA_SDR: 0, Transfer.PQ: 1}


def _decode(table: dict, code: int, what: str):
    for key, value in table.items():
        if value == code:
            return key
    raise DataError(f"unknown {what} code {code}")


# ---------------------------------------------------------------------------
# YUV frames
# ---------------------------------------------------------------------------

def plane_shapes(width: int, height: int, chroma: Chroma) -> list[tuple[int, int]]:
    if chroma == Chroma.YUV420:
        return [(height, width), (height // 2, width // 2), (height // 2, width // 2)]
    return [(height, width)] * 3


def write_yuv(frames, path) -> None:
    """Write one Frame or a list of Frames (all with identical tags and size)."""
    frames = [frames] if isinstance(frames, Frame) else list(frames)
    if not frames:
        raise DataError("write_yuv needs at least one frame")
    first = frames[0]
    if first.bit_depth not in (8, 10):
        raise DataError(f"YUV files store 8- or 10-bit samples, got {first.bit_depth}")
    if first.chroma not in _CHROMA_CODES:
        raise DataError(f"YUV files store YUV444 or YUV420, got {first.chroma}")
    if first.transfer not in _TRANSFER_CODES:
        raise DataError(f"YUV files store gamma or PQ frames, got {first.transfer}")
    header = _YUV_HEADER.pack(YUV_MAGIC, YUV_VERSION, first.width, first.height, first.bit_depth,
                              _CHROMA_CODES[first.chroma], _GAMUT_CODES[Gamut(first.gamut)],
                              _TRANSFER_CODES[first.transfer], len(frames))
    expected = plane_shapes(first.width, first.height, first.chroma)
    dtype = "<u2" if first.bit_depth > 8 else "u1"
    chunks = [header]
    for f in frames:
        if (f.bit_depth, f.chroma, f.gamut, f.transfer) != (first.bit_depth, first.chroma, first.gamut, first.transfer):
            raise DataError("all frames in one file must share their tags")
        for plane, shape in zip(f.planes, expected):
            if plane.shape != shape:
                raise ShapeError(f"plane shape {plane.shape} != {shape} for a {f.chroma.value} frame")
            chunks.append(cm.quantize(plane, f.bit_depth).astype(dtype).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_yuv_frames(path) -> list[Frame]:
    data = Path(path).read_bytes()
    if len(data) < _YUV_HEADER.size:
        raise DataError(f"{path}: truncated header ({len(data)} bytes)")
    magic, version, width, height, depth, chroma, gamut, transfer, count = _YUV_HEADER.unpack_from(data)
    if magic != YUV_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != YUV_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    if depth not in (8, 10):
        raise DataError(f"{path}: unsupported bit depth {depth}")
    if not (0 < width <= MAX_DIM and 0 < height <= MAX_DIM) or count > MAX_DIM:
        raise DataError(f"{path}: dimensions out of range ({width}x{height}, {count} frames)")
    chroma_tag = _decode(_CHROMA_CODES, chroma, "chroma")
    if chroma_tag == Chroma.YUV420 and (width % 2 or height % 2):
        raise DataError(f"{path}: 4:2:0 frame with odd dimensions {width}x{height}")
    shapes = plane_shapes(width, height, chroma_tag)
    bytes_per = 2 if depth > 8 else 1
    frame_bytes = sum(h * w for h, w in shapes) * bytes_per
    payload = len(data) - _YUV_HEADER.size
    if payload != frame_bytes * count:
        raise DataError(f"{path}: payload is {payload} bytes, header implies {frame_bytes * count}")
    dtype = "<u2" if depth > 8 else "u1"
    tags = dict(gamut=_decode(_GAMUT_CODES, gamut, "gamut"), transfer=_decode(_TRANSFER_CODES, transfer, "transfer"),
                bit_depth=depth, chroma=chroma_tag)
    frames = []
    offset = _YUV_HEADER.size
    peak = (1 << depth) - 1
    for _ in range(count):
        planes = []
        for h, w in shapes:
            samples = np.frombuffer(data, dtype=dtype, count=h * w, offset=offset).reshape(h, w)
            if samples.max(initial=0) > peak:
                raise DataError(f"{path}: sample exceeds {depth}-bit range")
            planes.append((samples / np.float32(peak)).astype(np.float32))
            offset += h * w * bytes_per
        frames.append(Frame(planes, **tags))
    return frames


def read_yuv(path, index: int = 0) -> Frame:
    frames = read_yuv_frames(path)
    if not 0 <= index < len(frames):
        raise DataError(f"{path}: frame {index} requested, file holds {len(frames)}")
    return frames[index]


def read_samples(path, index: int = 0) -> list[np.ndarray]:
    """Integer code values of each plane, exactly as stored."""
    f = read_yuv(path, index)
    return [cm.quantize(p, f.bit_depth) for p in f.planes]


def chroma_444_to_420(frame: Frame) -> Frame:
    """2x2 mean of the chroma planes."""
    if frame.chroma != Chroma.YUV444:
        raise ConfigError(f"expected a YUV444 frame, got {frame.chroma}")
    if frame.height % 2 or frame.width % 2:
        raise ShapeError(f"4:2:0 needs even dimensions, got {frame.width}x{frame.height}")
    y, u, v = frame.planes
    h, w = y.shape

    def down(p):
        return p.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3)).astype(p.dtype)
    return Frame([y, down(u), down(v)], frame.gamut, frame.transfer, frame.bit_depth, Chroma.YUV420)


def _bilinear_up2(p: np.ndarray) -> np.ndarray:
    # center-aligned: output i samples source (i + 0.5) / 2 - 0.5, replicate edges
    def axis_weights(n):
        src = (np.arange(2 * n) + 0.5) / 2 - 0.5
        lo = np.floor(src).astype(int)
        frac = src - lo
        return np.clip(lo, 0, n - 1), np.clip(lo + 1, 0, n - 1), frac

    h, w = p.shape
    r0, r1, fr = axis_weights(h)
    c0, c1, fc = axis_weights(w)
    p64 = p.astype(np.float64)
    rows = p64[r0] * (1 - fr)[:, None] + p64[r1] * fr[:, None]
    out = rows[:, c0] * (1 - fc)[None, :] + rows[:, c1] * fc[None, :]
    return out.astype(p.dtype)


def chroma_420_to_444(frame: Frame) -> Frame:
    """Bilinear chroma upsampling on the grid implied by 2x2-mean downsampling."""
    if frame.chroma != Chroma.YUV420:
        raise ConfigError(f"expected a YUV420 frame, got {frame.chroma}")
    y, u, v = frame.planes
    return Frame([y, _bilinear_up2(u), _bilinear_up2(v)], frame.gamut, frame.transfer, frame.bit_depth, Chroma.YUV444)


def to_yuv444(frame: Frame) -> Frame:
    return chroma_420_to_444(frame) if frame.chroma == Chroma.YUV420 else frame


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------

class WeightsError(DataError):
    def __init__(self, message: str, missing=(), extra=(), mismatched=()):
        super().__init__(message)
        self.missing = list(missing)
        self.extra = list(extra)
        self.mismatched = list(mismatched)


def save_weights(params: dict, path) -> None:
    chunks = [WEIGHTS_MAGIC, struct.pack("<II", WEIGHTS_VERSION, len(params))]
    for name, value in params.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(value, dtype="<f4")
        chunks.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_weights(path, cfg: ModelConfig | None = None) -> ModelParams:
    """Read a weights file; with ``cfg`` also check names and shapes against its layout."""
    data = Path(path).read_bytes()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise WeightsError(f"{path}: truncated while reading {what}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != WEIGHTS_MAGIC:
        raise WeightsError(f"{path}: bad magic")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != WEIGHTS_VERSION:
        raise WeightsError(f"{path}: unsupported version {version}")
    params = ModelParams()
    for i in range(count):
        (name_len,) = struct.unpack("<H", take(2, f"name length of tensor #{i}"))
        try:
            name = take(name_len, f"name of tensor #{i}").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WeightsError(f"{path}: tensor #{i} has an undecodable name") from exc
        (rank,) = struct.unpack("<B", take(1, f"rank of tensor {name!r}"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"dims of tensor {name!r}"))
        size = int(np.prod(dims, dtype=np.int64))
        payload = take(4 * size, f"payload of tensor {name!r}")
        if name in params:
            raise WeightsError(f"{path}: duplicate tensor {name!r}")
        params[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    if pos != len(data):
        raise WeightsError(f"{path}: {len(data) - pos} trailing bytes after {count} tensors")
    if cfg is not None:
        problems = validate_params(params, cfg)
        if problems:
            missing = [p.split()[1] for p in problems if p.startswith("missing")]
            extra = [p.split()[1] for p in problems if p.startswith("extra")]
            shape = [p.split()[1].rstrip(":") for p in problems if p.startswith("shape")]
            raise WeightsError(f"{path}: weights do not match config: " + "; ".join(problems),
                               missing, extra, shape)
    return params


# ---------------------------------------------------------------------------
# synthetic HDR scenes and the SDR/HDR degradation chain
# ---------------------------------------------------------------------------

NITS = 1.0 / 10000.0


def _value_noise(rng, h, w, cells: int) -> np.ndarray:
    """Smooth noise in roughly [-1, 1]: a random grid upsampled with the cubic kernel."""
    gh, gw = max(2, h // cells + 3), max(2, w // cells + 3)
    grid = rng.uniform(-1, 1, (gh, gw))
    big = bicubic_resize(grid, cells)
    return big[:h, :w]


def synth_scene(seed: int, w: int, h: int) -> Frame:
    """Linear BT.2020 test scene (1.0 = 10000 nits).

    Bright sky-like gradient, multi-octave texture, saturated hard-edged color
    patches reaching the BT.2020 primaries (textured or clean ramps), and
    sparse specular highlights.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    theta = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(theta) * xx + np.sin(theta) * yy)
    ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-9)
    lum = 3.0 * (250.0 / 3.0) ** ramp          # 3 .. 250 nits
    texture = sum(_value_noise(rng, h, w, c) * a for c, a in ((4, 0.25), (8, 0.35), (16, 0.4)))
    lum = lum * np.exp(0.6 * texture)
    tint = np.stack([1.0 + 0.25 * _value_noise(rng, h, w, 32) for _ in range(3)])
    rgb = lum[None] * tint * NITS

    colors = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 1, 1], [1, 0, 1], [1, 1, 0],
                       [1, 0.5, 0], [0.3, 1, 0.2], [0.2, 0.4, 1]], dtype=np.float64)
    for _ in range(int(rng.integers(4, 9))):
        ph, pw = int(rng.integers(max(2, h // 10), max(3, h // 3))), int(rng.integers(max(2, w // 10), max(3, w // 3)))
        y0, x0 = int(rng.integers(0, max(1, h - ph))), int(rng.integers(0, max(1, w - pw)))
        color = colors[rng.integers(len(colors))]
        nits = rng.uniform(10, 400)
        if rng.uniform() < 0.5:
            shade = 1.0 + 0.3 * texture[y0:y0 + ph, x0:x0 + pw]
        else:
            # clean ramp from near black, the case where banding and sub-pixel artifacts show
            a = rng.uniform(0, 2 * np.pi)
            t = np.cos(a) * np.arange(pw)[None, :] + np.sin(a) * np.arange(ph)[:, None]
            shade = 0.02 + 0.98 * (t - t.min()) / max(np.ptp(t), 1e-9)
        rgb[:, y0:y0 + ph, x0:x0 + pw] = color[:, None, None] * nits * NITS * shade

    for _ in range(int(rng.integers(2, 5))):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        radius = rng.uniform(1.0, max(1.5, min(h, w) / 24))
        peak = rng.uniform(1000, 4000) * NITS
        spot = np.exp(-(((yy * max(h, w) - cy) ** 2 + (xx * max(h, w) - cx) ** 2) / (2 * radius ** 2)))
        rgb += peak * spot[None] * rng.uniform(0.7, 1.0, (3, 1, 1))

    rgb = np.clip(rgb, 0.0, 1.0).astype(np.float32)
    return Frame.from_pixels(rgb, gamut=Gamut.BT2020, transfer=Transfer.LINEAR, bit_depth=16, chroma=Chroma.RGB)


def encode_hdr(rgb_linear_2020) -> np.ndarray:
    """Linear BT.2020 -> normalized PQ Y'CbCr (not yet quantized)."""
    return np.clip(cm.rgb_to_yuv(cm.pq_oetf(rgb_linear_2020), Gamut.BT2020), 0.0, 1.0)


def _quantized(yuv: np.ndarray, bits: int) -> np.ndarray:
    return cm.dequantize(cm.quantize(yuv, bits), bits).astype(np.float32)


def degrade(hdr: Frame, scale: int, tone_map: cm.ToneMapConfig = cm.ToneMapConfig()) -> tuple[Frame, Frame]:
    """Build the (LR 8-bit BT.709 gamma, HR 10-bit BT.2020 PQ) training pair.

    HR dimensions are cropped to a multiple of ``scale`` so HR = scale x LR exactly.
    """
    if scale not in (2, 4):
        raise ConfigError(f"scale must be 2 or 4, got {scale}")
    if hdr.transfer != Transfer.LINEAR or Gamut(hdr.gamut) != Gamut.BT2020:
        raise ConfigError("degrade expects a linear BT.2020 frame")
    rgb = np.asarray(hdr.pixels[0], dtype=np.float64)
    h, w = (rgb.shape[1] // scale) * scale, (rgb.shape[2] // scale) * scale
    if h == 0 or w == 0:
        raise ShapeError(f"frame smaller than the scale factor {scale}")
    rgb = rgb[:, :h, :w]
    hr = _quantized(encode_hdr(rgb), 10)
    sdr = cm.gamma_oetf(cm.tone_map_forward(rgb, tone_map, axis=0))
    lr_rgb = np.clip(bicubic_resize(sdr, 1 / scale), 0.0, 1.0)
    lr = _quantized(np.clip(cm.rgb_to_yuv(lr_rgb, Gamut.BT709), 0.0, 1.0), 8)
    lr_frame = Frame.from_pixels(lr, gamut=Gamut.BT709, transfer=Transfer.GAMMA_SDR, bit_depth=8, chroma=Chroma.YUV444)
    hr_frame = Frame.from_pixels(hr, gamut=Gamut.BT2020, transfer=Transfer.PQ, bit_depth=10, chroma=Chroma.YUV444)
    return lr_frame, hr_frame


def sample_patches(pair: tuple[Frame, Frame], patch_lr: int, count: int, rng: np.random.Generator):
    """Aligned random crops: ``(lr (count, 3, p, p), hr (count, 3, p*s, p*s))`` float32 arrays."""
    lr_frame, hr_frame = pair
    lr = to_yuv444(lr_frame).pixels[0]
    hr = to_yuv444(hr_frame).pixels[0]
    h, w = lr.shape[1:]
    scale = hr.shape[1] // h
    if hr.shape[1:] != (h * scale, w * scale) or scale < 1:
        raise ShapeError(f"HR {hr.shape[1:]} is not an integer multiple of LR {lr.shape[1:]}")
    if h < patch_lr or w < patch_lr:
        raise ShapeError(f"image {w}x{h} smaller than patch {patch_lr}")
    ys = rng.integers(0, h - patch_lr + 1, count)
    xs = rng.integers(0, w - patch_lr + 1, count)
    ph = patch_lr * scale
    lr_b = np.stack([lr[:, y:y + patch_lr, x:x + patch_lr] for y, x in zip(ys, xs)]).astype(np.float32)
    hr_b = np.stack([hr[:, y * scale:y * scale + ph, x * scale:x * scale + ph] for y, x in zip(ys, xs)]).astype(np.float32)
    return lr_b, hr_b


COLOR_BAR_HUES = (("red", (1, 0, 0)), ("yellow", (1, 1, 0)), ("green", (0, 1, 0)), ("cyan", (0, 1, 1)),
                  ("blue", (0, 0, 1)), ("magenta", (1, 0, 1)), ("white", (1, 1, 1)))


def color_bar(w: int, h: int) -> Frame:
    """Stacked horizontal bars of saturated hues, each ramping from black (left) to full (right).

    Encoded 8-bit BT.709 gamma Y'CbCr.  ``meta['bars']`` lists ``(name, row0, row1)``.
    """
    n = len(COLOR_BAR_HUES)
    if h < n or w < 2:
        raise ShapeError(f"color bar needs at least {n} rows and 2 columns")
    ramp = np.linspace(0.0, 1.0, w)
    rgb = np.zeros((3, h, w))
    bars = []
    edges = np.linspace(0, h, n + 1).round().astype(int)
    for (name, color), r0, r1 in zip(COLOR_BAR_HUES, edges[:-1], edges[1:]):
        rgb[:, r0:r1, :] = np.asarray(color, dtype=np.float64)[:, None, None] * ramp[None, None, :]
        bars.append((name, int(r0), int(r1)))
    yuv = _quantized(np.clip(cm.rgb_to_yuv(rgb, Gamut.BT709), 0.0, 1.0), 8)
    frame = Frame.from_pixels(yuv, gamut=Gamut.BT709, transfer=Transfer.GAMMA_SDR, bit_depth=8, chroma=Chroma.YUV444)
    frame.meta["bars"] = bars
    return frame


def color_bar_reference(w: int, h: int, scale: int, tone_map: cm.ToneMapConfig = cm.ToneMapConfig()) -> Frame:
    """Ground-truth HDR rendering of the color bar at ``scale`` x resolution.

    The bar is rendered directly at the output size, decoded to linear light,
    passed through the inverse of the synthetic tone curve and encoded as
    10-bit BT.2020 PQ.  ``meta['bars']`` rows are in output coordinates.
    """
    sdr = color_bar(w * scale, h * scale)
    rgb709 = cm.gamma_eotf(np.clip(cm.yuv_to_rgb(sdr.pixels[0], Gamut.BT709), 0, 1))
    linear = cm.tone_map_inverse(rgb709, tone_map, axis=0)
    hr = _quantized(encode_hdr(linear), 10)
    frame = Frame.from_pixels(hr, gamut=Gamut.BT2020, transfer=Transfer.PQ, bit_depth=10, chroma=Chroma.YUV444)
    frame.meta["bars"] = list(sdr.meta["bars"])
    return frame


def write_ppm16(rgb, path) -> None:
    """Binary 16-bit PPM (P6, maxval 65535, big-endian samples) from (3, h, w) values in [0, 1]."""
    rgb = np.asarray(rgb)
    if rgb.ndim == 4:
        rgb = rgb[0]
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ShapeError(f"PPM needs (3, h, w) RGB, got {rgb.shape}")
    _, h, w = rgb.shape
    samples = cm.quantize(np.clip(rgb, 0.0, 1.0), 16).transpose(1, 2, 0).astype(">u2")
    Path(path).write_bytes(f"P6\n{w} {h}\n65535\n".encode("ascii") + samples.tobytes())


def read_ppm16(path) -> np.ndarray:
    """Inverse of :func:`write_ppm16`; returns (3, h, w) float64 in [0, 1]."""
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P6" or parts[2] != b"65535":
        raise DataError(f"{path}: not a 16-bit binary PPM written by this package")
    w, h = (int(t) for t in parts[1].split())
    body = parts[3]
    if len(body) != w * h * 6:
        raise DataError(f"{path}: payload is {len(body)} bytes, expected {w * h * 6}")
    samples = np.frombuffer(body, dtype=">u2").reshape(h, w, 3).transpose(2, 0, 1)
    return cm.dequantize(samples, 16)


def frame_to_display_rgb(frame: Frame) -> np.ndarray:
    """Encoded R'G'B' (gamma or PQ code values, not linear) of a Y'CbCr frame, (3, h, w)."""
    f = to_yuv444(frame)
    return np.clip(cm.yuv_to_rgb(f.pixels[0], f.gamut, axis=0), 0.0, 1.0)


def frame_to_linear(frame: Frame, white_nits: float = 100.0) -> np.ndarray:
    """Linear-light RGB (1, 3, h, w) of a Y'CbCr frame, 1.0 = ``white_nits`` for PQ and SDR white for gamma."""
    rgb = frame_to_display_rgb(frame)
    if frame.transfer == Transfer.PQ:
        return (cm.pq_eotf(rgb) * (10000.0 / white_nits))[None]
    if frame.transfer == Transfer.GAMMA_SDR:
        return cm.gamma_eotf(rgb)[None]
    return rgb[None]


# ---------------------------------------------------------------------------
# dataset manifests
# ---------------------------------------------------------------------------

@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)   # (lr_path, hr_path, seed)
    scale: int = 4
    patch_lr: int = 40
    root: Path = Path(".")

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.root / p

    def load_pairs(self) -> list[tuple[Frame, Frame]]:
        pairs = []
        for lr_path, hr_path, _ in self.entries:
            lr, hr = read_yuv(self.resolve(lr_path)), read_yuv(self.resolve(hr_path))
            if (hr.height, hr.width) != (lr.height * self.scale, lr.width * self.scale):
                raise DataError(f"{hr_path}: {hr.width}x{hr.height} is not {self.scale}x {lr_path}")
            pairs.append((lr, hr))
        return pairs


def write_manifest(manifest: DatasetManifest, path) -> None:
    lines = [f"# scale={manifest.scale}", f"# patch_lr={manifest.patch_lr}"]
    lines += [f"{lr}\t{hr}\t{seed}" for lr, hr, seed in manifest.entries]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest {path} not found")
    m = DatasetManifest(root=path.parent)
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            if key.strip() in ("scale", "patch_lr"):
                setattr(m, key.strip(), int(value))
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected lr_path<TAB>hr_path<TAB>seed")
        try:
            m.entries.append((parts[0], parts[1], int(parts[2])))
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: bad seed {parts[2]!r}") from exc
    return m


def scene_seed(seed: int, index: int) -> int:
    return seed * 100_003 + index


def generate_dataset(out_dir, scenes: int, width: int, height: int, scale: int, seed: int,
                     patch_lr: int = 40) -> Path:
    """Write ``scenes`` LR/HR pairs plus ``manifest.txt`` into ``out_dir``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest(scale=scale, patch_lr=patch_lr, root=out)
    for i in range(scenes):
        s = scene_seed(seed, i)
        lr, hr = degrade(synth_scene(s, width, height), scale)
        lr_name, hr_name = f"scene{i:04d}_lr.yuv", f"scene{i:04d}_hr.yuv"
        write_yuv(lr, out / lr_name)
        write_yuv(hr, out / hr_name)
        manifest.entries.append((lr_name, hr_name, s))
    path = out / "manifest.txt"
    write_manifest(manifest, path)
    return path
