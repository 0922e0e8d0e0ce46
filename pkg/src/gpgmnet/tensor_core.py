"""Dense rank-4 tensor primitives with hand-written backward passes.

Tensors are plain ``numpy.ndarray`` objects in ``(n, c, h, w)`` layout.  Storage
is float32; every op keeps the dtype of its input so the same code runs in
float64 inside :func:`grad_check`.

Each differentiable op ``foo`` has a companion ``foo_backward`` that takes the
upstream gradient (plus whatever the forward needed) and returns a
:class:`LayerGrad`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Mapping

import numpy as np

from .errors import NumericalError, ShapeError

DTYPE = np.float32

LEAKY_SLOPE = 0.1
NORM_EPS = 1e-5
BN_MOMENTUM = 0.1
DROPOUT_P = 0.5
DROPBLOCK_KEEP = 0.9
DROPBLOCK_SIZE = 3


@dataclass
class LayerGrad:
    input_grad: np.ndarray | None
    param_grads: dict[str, np.ndarray] = field(default_factory=dict)


def as_tensor(x, dtype=DTYPE) -> np.ndarray:
    """Return ``x`` as a contiguous rank-4 array of ``dtype``."""
    arr = np.ascontiguousarray(x, dtype=dtype)
    if arr.ndim != 4:
        raise ShapeError(f"expected rank-4 (n, c, h, w) tensor, got shape {arr.shape}")
    return arr


def check_finite(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        bad = int(np.size(x) - np.count_nonzero(np.isfinite(x)))
        raise NumericalError(f"{name}: {bad} non-finite value(s)")
    return x


def _require_rank4(x: np.ndarray, name: str = "input") -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name} must be rank-4 (n, c, h, w), got shape {x.shape}")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    # layout (c, k, k, n, ho, wo) so the gemm operand is a free reshape
    n, c = xp.shape[:2]
    cols = np.empty((c, k, k, n, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            patch = xp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]
            cols[:, i, j] = patch.transpose(1, 0, 2, 3)
    return cols


def _conv_checks(x, weight, bias, stride, pad):
    _require_rank4(x)
    if weight.ndim != 4:
        raise ShapeError(f"conv weight must be (co, ci, k, k), got {weight.shape}")
    co, ci, kh, kw = weight.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv kernel must be square and odd, got {kh}x{kw}")
    if ci != x.shape[1]:
        raise ShapeError(f"conv expects {ci} input channels, got {x.shape[1]}")
    if bias is not None and np.shape(bias) != (co,):
        raise ShapeError(f"conv bias must have shape ({co},), got {np.shape(bias)}")
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    if pad is None:
        pad = (kh - 1) // 2
    ho = conv_output_size(x.shape[2], kh, stride, pad)
    wo = conv_output_size(x.shape[3], kh, stride, pad)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv output would be {ho}x{wo} for input {x.shape[2:]} (k={kh}, stride={stride}, pad={pad})")
    return co, ci, kh, pad, ho, wo


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None,
           stride: int = 1, pad: int | None = None) -> np.ndarray:
    """Zero-padded 2-D cross-correlation.

    ``pad=None`` selects "same" padding ``(k - 1) // 2``.
    """
    co, ci, k, pad, ho, wo = _conv_checks(x, weight, bias, stride, pad)
    n = x.shape[0]
    if k == 1 and stride == 1 and pad == 0:
        out = np.einsum("oc,nchw->nohw", weight.reshape(co, ci), x, optimize=True)
    else:
        cols = _im2col(_pad(x, pad), k, stride, ho, wo)
        out = weight.reshape(co, -1) @ cols.reshape(ci * k * k, -1)
        out = out.reshape(co, n, ho, wo).transpose(1, 0, 2, 3)
    out = np.ascontiguousarray(out, dtype=x.dtype)
    if bias is not None:
        out += bias.astype(x.dtype, copy=False).reshape(1, co, 1, 1)
    return out


def conv2d_backward(dout: np.ndarray, x: np.ndarray, weight: np.ndarray,
                    stride: int = 1, pad: int | None = None, need_input_grad: bool = True) -> LayerGrad:
    co, ci, k, pad, ho, wo = _conv_checks(x, weight, None, stride, pad)
    n, _, h, w = x.shape
    if dout.shape != (n, co, ho, wo):
        raise ShapeError(f"upstream gradient shape {dout.shape} != conv output {(n, co, ho, wo)}")
    d2 = dout.transpose(1, 0, 2, 3).reshape(co, -1)
    grads = {"bias": d2.sum(axis=1)}
    if k == 1 and stride == 1 and pad == 0:
        x2 = x.transpose(1, 0, 2, 3).reshape(ci, -1)
        grads["weight"] = (d2 @ x2.T).reshape(weight.shape)
        dx = None
        if need_input_grad:
            dx = np.einsum("oc,nohw->nchw", weight.reshape(co, ci), dout, optimize=True)
        return LayerGrad(dx, grads)
    cols = _im2col(_pad(x, pad), k, stride, ho, wo).reshape(ci * k * k, -1)
    grads["weight"] = (d2 @ cols.T).reshape(weight.shape)
    dx = None
    if need_input_grad:
        dcols = (weight.reshape(co, -1).T @ d2).reshape(ci, k, k, n, ho, wo)
        dxp = np.zeros((n, ci, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += \
                    dcols[:, i, j].transpose(1, 0, 2, 3)
        dx = dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp
        dx = np.ascontiguousarray(dx)
    return LayerGrad(dx, grads)


# ---------------------------------------------------------------------------
# fully connected
# ---------------------------------------------------------------------------

def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """``weight @ x + bias`` for a vector ``x`` of shape (d_in,) or a batch (n, d_in)."""
    x = np.asarray(x)
    d_out, d_in = weight.shape
    if x.shape[-1] != d_in or x.ndim not in (1, 2):
        raise ShapeError(f"linear expects input (..., {d_in}), got {x.shape}")
    if bias is not None and np.shape(bias) != (d_out,):
        raise ShapeError(f"linear bias must have shape ({d_out},), got {np.shape(bias)}")
    out = x @ weight.T.astype(x.dtype, copy=False)
    if bias is not None:
        out = out + bias.astype(x.dtype, copy=False)
    return out


def linear_backward(dout: np.ndarray, x: np.ndarray, weight: np.ndarray) -> LayerGrad:
    x2 = np.atleast_2d(x)
    d2 = np.atleast_2d(dout)
    grads = {"weight": d2.T @ x2, "bias": d2.sum(axis=0)}
    dx = d2 @ weight.astype(d2.dtype, copy=False)
    return LayerGrad(dx.reshape(np.shape(x)), grads)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def relu_backward(dout: np.ndarray, x: np.ndarray) -> LayerGrad:
    return LayerGrad(dout * (x > 0))


def leaky_relu(x: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    if not 0 < slope < 1:
        raise ValueError(f"leaky slope must lie in (0, 1), got {slope}")
    return np.where(x < 0, x * x.dtype.type(slope), x)


def leaky_relu_backward(dout: np.ndarray, x: np.ndarray, slope: float = LEAKY_SLOPE) -> LayerGrad:
    return LayerGrad(np.where(x < 0, dout * dout.dtype.type(slope), dout))


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def _affine(xhat, gamma, beta):
    c = xhat.shape[1]
    return xhat * gamma.astype(xhat.dtype, copy=False).reshape(1, c, 1, 1) \
        + beta.astype(xhat.dtype, copy=False).reshape(1, c, 1, 1)


def _check_affine(x, gamma, beta):
    _require_rank4(x)
    c = x.shape[1]
    if np.shape(gamma) != (c,) or np.shape(beta) != (c,):
        raise ShapeError(f"norm affine parameters must have shape ({c},)")


def instance_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = NORM_EPS) -> np.ndarray:
    """Per-(sample, channel) standardization over the spatial plane, then affine."""
    _check_affine(x, gamma, beta)
    mean = x.mean(axis=(2, 3), keepdims=True)
    var = x.var(axis=(2, 3), keepdims=True)
    xhat = (x - mean) / np.sqrt(var + eps)
    return _affine(xhat, gamma, beta).astype(x.dtype, copy=False)


def _standardize_backward(dxhat, xhat, inv_std, axes):
    m = 1
    for a in axes:
        m *= xhat.shape[a]
    s1 = dxhat.sum(axis=axes, keepdims=True)
    s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
    return inv_std / m * (m * dxhat - s1 - xhat * s2)


def instance_norm_backward(dout: np.ndarray, x: np.ndarray, gamma: np.ndarray, eps: float = NORM_EPS) -> LayerGrad:
    c = x.shape[1]
    mean = x.mean(axis=(2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(x.var(axis=(2, 3), keepdims=True) + eps)
    xhat = (x - mean) * inv_std
    dxhat = dout * gamma.astype(dout.dtype, copy=False).reshape(1, c, 1, 1)
    dx = _standardize_backward(dxhat, xhat, inv_std, (2, 3))
    grads = {"gamma": (dout * xhat).sum(axis=(0, 2, 3)), "beta": dout.sum(axis=(0, 2, 3))}
    return LayerGrad(dx.astype(x.dtype, copy=False), grads)


@dataclass
class RunningStats:
    """Batch-norm running statistics; ``None`` until the first training update."""
    mean: np.ndarray | None = None
    var: np.ndarray | None = None

    @classmethod
    def initialized(cls, channels: int, dtype=DTYPE) -> "RunningStats":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


def batch_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, stats: RunningStats,
               mode: str = "train", momentum: float = BN_MOMENTUM, eps: float = NORM_EPS,
               update_stats: bool = True) -> np.ndarray:
    """Batch normalization over (n, h, w) per channel.

    Train mode normalizes with the batch's population variance and blends the
    unbiased variance into ``stats`` in place.  Eval mode uses ``stats``.
    """
    _check_affine(x, gamma, beta)
    n, c, h, w = x.shape
    if mode == "train":
        m = n * h * w
        if m < 2:
            raise ShapeError("batch_norm in train mode needs at least 2 values per channel")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        if update_stats:
            if stats.mean is None or stats.var is None:
                stats.mean = np.zeros(c, dtype=x.dtype)
                stats.var = np.ones(c, dtype=x.dtype)
            stats.mean[...] = (1 - momentum) * stats.mean + momentum * mean
            stats.var[...] = (1 - momentum) * stats.var + momentum * var * (m / (m - 1))
    elif mode == "eval":
        if stats.mean is None or stats.var is None:
            raise ValueError("batch_norm eval mode requires running statistics; run a training step first")
        mean, var = stats.mean.astype(x.dtype), stats.var.astype(x.dtype)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    xhat = (x - mean.reshape(1, c, 1, 1)) / np.sqrt(var.reshape(1, c, 1, 1) + eps)
    return _affine(xhat, gamma, beta).astype(x.dtype, copy=False)


def batch_norm_backward(dout: np.ndarray, x: np.ndarray, gamma: np.ndarray, stats: RunningStats | None = None,
                        mode: str = "train", eps: float = NORM_EPS) -> LayerGrad:
    c = x.shape[1]
    g = gamma.astype(dout.dtype, copy=False).reshape(1, c, 1, 1)
    if mode == "train":
        mean = x.mean(axis=(0, 2, 3), keepdims=True)
        inv_std = 1.0 / np.sqrt(x.var(axis=(0, 2, 3), keepdims=True) + eps)
        xhat = (x - mean) * inv_std
        dx = _standardize_backward(dout * g, xhat, inv_std, (0, 2, 3))
    else:
        inv_std = 1.0 / np.sqrt(stats.var.astype(x.dtype).reshape(1, c, 1, 1) + eps)
        xhat = (x - stats.mean.astype(x.dtype).reshape(1, c, 1, 1)) * inv_std
        dx = dout * g * inv_std
    grads = {"gamma": (dout * xhat).sum(axis=(0, 2, 3)), "beta": dout.sum(axis=(0, 2, 3))}
    return LayerGrad(dx.astype(x.dtype, copy=False), grads)


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

def avg_pool(x: np.ndarray, k: int = 2, stride: int = 2) -> np.ndarray:
    _require_rank4(x)
    n, c, h, w = x.shape
    ho, wo = (h - k) // stride + 1, (w - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"avg_pool(k={k}) needs spatial dims >= {k}, got {h}x{w}")
    out = np.zeros((n, c, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            out += x[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]
    return out / x.dtype.type(k * k)


def avg_pool_backward(dout: np.ndarray, input_shape: tuple, k: int = 2, stride: int = 2) -> LayerGrad:
    n, c, h, w = input_shape
    ho, wo = dout.shape[2:]
    dx = np.zeros(input_shape, dtype=dout.dtype)
    share = dout / dout.dtype.type(k * k)
    for i in range(k):
        for j in range(k):
            dx[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += share
    return LayerGrad(dx)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Mean over the spatial plane; returns shape (n, c)."""
    _require_rank4(x)
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise ShapeError("global_avg_pool needs a non-empty plane")
    return x.mean(axis=(2, 3))


def global_avg_pool_backward(dout: np.ndarray, input_shape: tuple) -> LayerGrad:
    n, c, h, w = input_shape
    dx = np.broadcast_to((dout / dout.dtype.type(h * w)).reshape(n, c, 1, 1), input_shape)
    return LayerGrad(np.ascontiguousarray(dx))


# ---------------------------------------------------------------------------
# stochastic regularizers
# ---------------------------------------------------------------------------

def dropout_mask(shape: tuple, p: float, rng: np.random.Generator, dtype=DTYPE) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability p, else 1/(1-p)."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if p == 0:
        return np.ones(shape, dtype=dtype)
    keep = rng.random(shape) >= p
    return (keep / (1.0 - p)).astype(dtype)


def dropout(x: np.ndarray, p: float = DROPOUT_P, mode: str = "train",
            rng: np.random.Generator | None = None) -> np.ndarray:
    if mode == "eval" or p == 0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an explicit rng")
    return x * dropout_mask(x.shape, p, rng, x.dtype)


@lru_cache(maxsize=256)
def _dropblock_seed_rate(h: int, w: int, block: int, keep_prob: float) -> float:
    # Solve mean_p (1 - rate) ** cover(p) == keep_prob, where cover(p) counts the
    # valid block positions that contain pixel p.
    def cover(size):
        valid = size - block + 1
        counts = np.zeros(size)
        for start in range(valid):
            counts[start:start + block] += 1
        return counts

    cover2d = np.outer(cover(h), cover(w)).ravel()
    lo, hi = 0.0, 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        kept = np.mean((1.0 - mid) ** cover2d)
        if kept > keep_prob:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class DropBlockOutput:
    output: np.ndarray
    mask: np.ndarray
    fallback: bool = False


def drop_block_mask(shape: tuple, keep_prob: float, rng: np.random.Generator,
                    block: int = DROPBLOCK_SIZE, dtype=DTYPE) -> tuple[np.ndarray, bool]:
    """Multiplier that zeroes whole ``block`` x ``block`` squares per channel.

    Block seeds are drawn only where the square fits, at a rate solved so the
    expected kept fraction equals ``keep_prob``.  Survivors are rescaled by
    ``size / kept``.  Planes smaller than the block fall back to element
    dropout and report ``fallback=True``.
    """
    if not 0 < keep_prob <= 1:
        raise ValueError(f"keep_prob must lie in (0, 1], got {keep_prob}")
    n, c, h, w = shape
    if keep_prob == 1:
        return np.ones(shape, dtype=dtype), False
    if h < block or w < block:
        return dropout_mask(shape, 1.0 - keep_prob, rng, dtype), True
    rate = _dropblock_seed_rate(h, w, block, float(keep_prob))
    vh, vw = h - block + 1, w - block + 1
    seeds = rng.random((n, c, vh, vw)) < rate
    dropped = np.zeros(shape, dtype=bool)
    for i in range(block):
        for j in range(block):
            dropped[:, :, i:i + vh, j:j + vw] |= seeds
    keep = ~dropped
    kept = int(keep.sum())
    scale = keep.size / kept if kept else 0.0
    return (keep * scale).astype(dtype), False


def drop_block(x: np.ndarray, keep_prob: float = DROPBLOCK_KEEP, mode: str = "train",
               rng: np.random.Generator | None = None, block: int = DROPBLOCK_SIZE) -> DropBlockOutput:
    _require_rank4(x)
    if mode == "eval" or keep_prob == 1:
        return DropBlockOutput(x, np.ones_like(x), False)
    if rng is None:
        raise ValueError("drop_block in train mode needs an explicit rng")
    mask, fallback = drop_block_mask(x.shape, keep_prob, rng, block, x.dtype)
    return DropBlockOutput(x * mask, mask, fallback)


def masked_backward(dout: np.ndarray, mask: np.ndarray) -> LayerGrad:
    """Backward of ``x * mask`` for a constant mask (dropout, DropBlock)."""
    return LayerGrad(dout * mask)


# ---------------------------------------------------------------------------
# rearrangement and elementwise
# ---------------------------------------------------------------------------

def pixel_shuffle(x: np.ndarray, r: int) -> np.ndarray:
    """Depth-to-space: (n, c*r*r, h, w) -> (n, c, h*r, w*r)."""
    _require_rank4(x)
    n, c, h, w = x.shape
    if r < 1 or c % (r * r):
        raise ShapeError(f"pixel_shuffle: channels {c} not divisible by r^2 = {r * r}")
    co = c // (r * r)
    out = x.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(out.reshape(n, co, h * r, w * r))


def pixel_unshuffle(x: np.ndarray, r: int) -> np.ndarray:
    """Exact inverse of :func:`pixel_shuffle`."""
    _require_rank4(x)
    n, c, hr, wr = x.shape
    if r < 1 or hr % r or wr % r:
        raise ShapeError(f"pixel_unshuffle: spatial dims {hr}x{wr} not divisible by {r}")
    h, w = hr // r, wr // r
    out = x.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(out.reshape(n, c * r * r, h, w))


def pixel_shuffle_backward(dout: np.ndarray, r: int) -> LayerGrad:
    return LayerGrad(pixel_unshuffle(dout, r))


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _require_rank4(a, "a")
    _require_rank4(b, "b")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: non-channel dims differ {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=1)


def concat_channels_backward(dout: np.ndarray, ca: int) -> tuple[np.ndarray, np.ndarray]:
    return dout[:, :ca], dout[:, ca:]


def broadcast_shape(a_shape: tuple, b_shape: tuple) -> tuple:
    """Result shape under the restricted channel/spatial broadcast rules.

    Batch sizes must agree.  Channels either agree or one side is 1.  The
    spatial plane either agrees or one side is 1x1.
    """
    if len(a_shape) != 4 or len(b_shape) != 4:
        raise ShapeError(f"broadcast needs rank-4 shapes, got {a_shape} and {b_shape}")
    if a_shape[0] != b_shape[0]:
        raise ShapeError(f"batch dims differ: {a_shape} vs {b_shape}")
    ca, cb = a_shape[1], b_shape[1]
    if ca != cb and 1 not in (ca, cb):
        raise ShapeError(f"channel dims not broadcastable: {a_shape} vs {b_shape}")
    sa, sb = tuple(a_shape[2:]), tuple(b_shape[2:])
    if sa != sb and (1, 1) not in (sa, sb):
        raise ShapeError(f"spatial dims not broadcastable: {a_shape} vs {b_shape}")
    return (a_shape[0], max(ca, cb)) + (sb if sa == (1, 1) else sa)


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    broadcast_shape(a.shape, b.shape)
    return a + b


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    broadcast_shape(a.shape, b.shape)
    return a * b


def add_backward(dout: np.ndarray, a_shape: tuple, b_shape: tuple) -> tuple[np.ndarray, np.ndarray]:
    return _reduce_to(dout, a_shape), _reduce_to(dout, b_shape)


def mul_backward(dout: np.ndarray, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return _reduce_to(dout * b, a.shape), _reduce_to(dout * a, b.shape)


# ---------------------------------------------------------------------------
# finite-difference gradient check
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    tolerance: float
    per_input: dict[str, float]
    checked: int

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max_rel_err={self.max_rel_error:.3e} tol={self.tolerance:.0e} ({self.checked} entries)"


OpClosure = Callable[[Mapping[str, np.ndarray]], tuple[np.ndarray, Callable[[np.ndarray], Mapping[str, np.ndarray]]]]


def grad_check(op: OpClosure, inputs: Mapping[str, np.ndarray], eps: float = 1e-3, tolerance: float = 1e-4,
               seed: int = 0, max_entries: int | None = None, floor: float = 1e-6) -> GradCheckReport:
    """Compare an analytic backward pass with central finite differences.

    ``op(inputs)`` returns ``(output, backward)`` where ``backward(dout)``
    maps input names to gradients.  Everything is promoted to float64 first.
    The scalar probed is ``sum(output * R)`` for a fixed random ``R``.

    Per entry the relative error is ``|a - n| / max(|a|, |n|, floor')`` where
    ``floor'`` is the larger of ``floor`` and the float64 rounding noise of
    the difference quotient divided by ``tolerance``, so entries whose true
    gradient is zero are not failed on roundoff alone.  With ``max_entries``
    only that many randomly chosen entries per input are perturbed.
    """
    rng = np.random.default_rng(seed)
    x64 = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    out, backward = op(x64)
    check_finite(out, "grad_check forward")
    probe = rng.standard_normal(out.shape)
    analytic = backward(probe)
    noise = 4 * np.finfo(np.float64).eps * float(np.sum(np.abs(out * probe))) / eps
    floor = max(floor, noise / tolerance)

    def loss(vals):
        o, _ = op(vals)
        check_finite(o, "grad_check forward")
        return float(np.sum(o * probe))

    per_input: dict[str, float] = {}
    checked = 0
    for name, value in x64.items():
        if name not in analytic:
            continue
        grad = np.asarray(analytic[name], dtype=np.float64).reshape(value.shape)
        check_finite(grad, f"analytic grad {name}")
        flat_idx = np.arange(value.size)
        if max_entries is not None and value.size > max_entries:
            flat_idx = rng.choice(value.size, size=max_entries, replace=False)
        worst = 0.0
        for fi in flat_idx:
            idx = np.unravel_index(fi, value.shape)
            orig = value[idx]
            value[idx] = orig + eps
            lp = loss(x64)
            value[idx] = orig - eps
            lm = loss(x64)
            value[idx] = orig
            num = (lp - lm) / (2 * eps)
            a = grad[idx]
            rel = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, rel)
            checked += 1
        per_input[name] = worst
    max_rel = max(per_input.values(), default=0.0)
    return GradCheckReport(max_rel, max_rel < tolerance, tolerance, per_input, checked)
