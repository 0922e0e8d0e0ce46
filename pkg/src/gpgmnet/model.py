"""GPGMNet: global-priors-guided modulation network for joint SR and inverse tone mapping.

Forward pass::

    out = CL(Up(CB(JMRM_N(... JMRM_1(CF(x), v) ..., v)))) + bicubic(x)
    v   = [ccp_branch(x), ssp_branch(x)]          # computed once, shared

Every block is written as ``block(x, params, name, trace) -> (out, back)``.
When the :class:`Trace` tracks gradients, ``back(dout)`` accumulates
parameter gradients into ``trace.grads`` and returns the input gradient;
otherwise ``back`` is ``None``.  Thin wrappers with the plain
``*_forward`` names return just the output.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor_core as tc
from .errors import ConfigError, ShapeError
from .image_ops import FilterConfig, bicubic_resize, guided_filter

MODULATIONS = ("GSMB", "SFT", "GFM")
BRANCH_MASKS = ("both", "ccp_only", "ssp_only")
SPCB_KERNELS = (3, 5, 7, 9)


@dataclass
class ModelConfig:
    scale: int = 4
    n_jmrm: int = 5
    channels: int = 64
    n_cccb: int = 5
    n_sscb: int = 3
    prior_dim_c: int = 6
    prior_dim_s: int = 6
    modulation: str = "GSMB"
    ccp_guided_filter: bool = True
    branch_mask: str = "both"
    gf_radius: int = 5
    gf_eps: float = 0.01
    cccb_width: int = 32
    sscb_width: int = 32
    spcb_width: int = 8
    cond_width: int = 32
    ccp_last_norm: bool = False
    leaky_slope: float = tc.LEAKY_SLOPE
    dropout_p: float = tc.DROPOUT_P
    dropblock_keep: float = tc.DROPBLOCK_KEEP
    bn_momentum: float = tc.BN_MOMENTUM
    norm_eps: float = tc.NORM_EPS

    def __post_init__(self):
        self.modulation = str(self.modulation).upper()
        self.branch_mask = str(self.branch_mask).lower()
        if self.scale not in (2, 4):
            raise ConfigError(f"scale must be 2 or 4, got {self.scale}")
        if self.modulation not in MODULATIONS:
            raise ConfigError(f"modulation must be one of {MODULATIONS}, got {self.modulation!r}")
        if self.branch_mask not in BRANCH_MASKS:
            raise ConfigError(f"branch_mask must be one of {BRANCH_MASKS}, got {self.branch_mask!r}")
        for name in ("n_jmrm", "channels", "n_cccb", "n_sscb", "prior_dim_c", "prior_dim_s",
                     "cccb_width", "sscb_width", "spcb_width", "cond_width", "gf_radius"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def prior_dim(self) -> int:
        return self.prior_dim_c + self.prior_dim_s

    @property
    def uses_priors(self) -> bool:
        return self.modulation in ("GSMB", "GFM")

    @property
    def min_input_size(self) -> int:
        if not self.uses_priors:
            return 1
        return 2 ** self.n_cccb if self.branch_mask != "ssp_only" else 1

    def cccb_normalized(self, index: int) -> bool:
        # GAP(Conv1x1(IN(z))) == W @ beta + b for every input, so the last
        # block skips IN unless explicitly requested.
        return index < self.n_cccb - 1 or self.ccp_last_norm

    @property
    def filter(self) -> FilterConfig:
        return FilterConfig(self.gf_radius, self.gf_eps)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, values: dict) -> "ModelConfig":
        return cls(**_coerce_fields(cls, values))

    @classmethod
    def from_file(cls, path) -> "ModelConfig":
        return cls.from_mapping(read_kv_file(path))


def _parse_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _coerce_fields(cls, values: dict) -> dict:
    known = {f.name: f for f in fields(cls)}
    out = {}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r} for {cls.__name__}")
        default = known[key].default
        try:
            if isinstance(default, bool):
                out[key] = raw if isinstance(raw, bool) else _parse_bool(raw)
            elif isinstance(default, int):
                out[key] = int(raw)
            elif isinstance(default, float):
                out[key] = float(raw)
            else:
                out[key] = raw
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return out


def read_kv_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

RUNNING_SUFFIXES = (".running_mean", ".running_var")


def is_learnable(name: str) -> bool:
    return not name.endswith(RUNNING_SUFFIXES)


class ModelParams(dict):
    """Parameter path -> array.  Running batch-norm statistics live here too."""

    def learnable(self) -> dict:
        return {k: v for k, v in self.items() if is_learnable(k)}

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams({k: v.astype(dtype) for k, v in self.items()})


def _conv_spec(specs, name, ci, co, k):
    specs[f"{name}.weight"] = (co, ci, k, k)
    specs[f"{name}.bias"] = (co,)


def _fc_spec(specs, name, d_in, d_out):
    specs[f"{name}.weight"] = (d_out, d_in)
    specs[f"{name}.bias"] = (d_out,)


def _norm_spec(specs, name, c, running=False):
    specs[f"{name}.gamma"] = (c,)
    specs[f"{name}.beta"] = (c,)
    if running:
        specs[f"{name}.running_mean"] = (c,)
        specs[f"{name}.running_var"] = (c,)


def param_specs(cfg: ModelConfig) -> dict[str, tuple]:
    """Every parameter path with its shape, in a stable order."""
    C = cfg.channels
    specs: dict[str, tuple] = {}
    _conv_spec(specs, "cf", 3, C, 3)
    if cfg.uses_priors:
        if cfg.branch_mask in ("both", "ccp_only"):
            ci = 3
            for i in range(cfg.n_cccb):
                _conv_spec(specs, f"gpem.ccp.cccb{i}.conv", ci, cfg.cccb_width, 1)
                if cfg.cccb_normalized(i):
                    _norm_spec(specs, f"gpem.ccp.cccb{i}.norm", cfg.cccb_width)
                ci = cfg.cccb_width
            _conv_spec(specs, "gpem.ccp.out", ci, cfg.prior_dim_c, 1)
        if cfg.branch_mask in ("both", "ssp_only"):
            ci = 3
            for i in range(cfg.n_sscb):
                _conv_spec(specs, f"gpem.ssp.sscb{i}.conv", ci, cfg.sscb_width, 3)
                _norm_spec(specs, f"gpem.ssp.sscb{i}.bn", cfg.sscb_width, running=True)
                ci = cfg.sscb_width
            _conv_spec(specs, "gpem.ssp.out", ci, cfg.prior_dim_s, 3)
    if cfg.modulation == "SFT":
        _conv_spec(specs, "cond.conv1", 3, cfg.cond_width, 3)
        _conv_spec(specs, "cond.conv2", cfg.cond_width, cfg.cond_width, 3)
    for j in range(cfg.n_jmrm):
        p = f"jmrm{j}"
        _conv_spec(specs, f"{p}.bb.conv1", C, C, 3)
        _conv_spec(specs, f"{p}.bb.conv2", C, C, 3)
        if cfg.modulation == "GSMB":
            w = cfg.spcb_width
            _conv_spec(specs, f"{p}.spcb.reduce", C, w, 1)
            for k in SPCB_KERNELS:
                _conv_spec(specs, f"{p}.spcb.k{k}", w, w, k)
            _conv_spec(specs, f"{p}.spcb.fuse", w * len(SPCB_KERNELS), 1, 1)
        if cfg.modulation in ("GSMB", "GFM"):
            mod = cfg.modulation.lower()
            _fc_spec(specs, f"{p}.{mod}.fc_gamma", cfg.prior_dim, C)
            _fc_spec(specs, f"{p}.{mod}.fc_beta", cfg.prior_dim, C)
        else:
            _conv_spec(specs, f"{p}.sft.gamma", cfg.cond_width, C, 1)
            _conv_spec(specs, f"{p}.sft.beta", cfg.cond_width, C, 1)
    _conv_spec(specs, "cb", C, C, 3)
    for i in range(int(round(math.log2(cfg.scale)))):
        _conv_spec(specs, f"up.{i}", C, 4 * C, 3)
    _conv_spec(specs, "cl", C, 3, 3)
    return specs


# Last layers of residual and modulation branches start small so the stacked
# gamma * F products stay near the identity at initialization.
BRANCH_OUTPUT_LAYERS = (".bb.conv2", ".spcb.fuse", ".fc_gamma", ".fc_beta", ".sft.gamma", ".sft.beta", "cl")
BRANCH_INIT_SCALE = 0.1
# sub-pixel convs start with the r*r filters of each output channel equal
# (ICNR), so the untrained upsampler is nearest-neighbour rather than a checkerboard
SUBPIXEL_LAYERS = ("up.",)


def init_params(cfg: ModelConfig, rng: np.random.Generator | int = 0) -> ModelParams:
    """Fan-in scaled normal weights (std sqrt(2 / fan_in)), zero biases and betas, unit gammas.

    Branch output layers (``BRANCH_OUTPUT_LAYERS``) are further scaled by ``BRANCH_INIT_SCALE``;
    sub-pixel conv weights are drawn per output channel and repeated over the shuffle group.
    """
    rng = np.random.default_rng(rng)
    params = ModelParams()
    for name, shape in param_specs(cfg).items():
        base, leaf = name.rsplit(".", 1)
        if leaf == "weight":
            fan_in = int(np.prod(shape[1:]))
            if base.startswith(SUBPIXEL_LAYERS):
                value = np.repeat(rng.standard_normal((shape[0] // 4, *shape[1:])), 4, axis=0)
            else:
                value = rng.standard_normal(shape)
            value *= math.sqrt(2.0 / fan_in)
            if base.endswith(BRANCH_OUTPUT_LAYERS):
                value *= BRANCH_INIT_SCALE
        elif leaf in ("gamma", "running_var"):
            value = np.ones(shape)
        else:
            value = np.zeros(shape)
        params[name] = value.astype(tc.DTYPE)
    return params


def zero_params(cfg: ModelConfig) -> ModelParams:
    """All learnable tensors zero; running variances one so eval mode is defined."""
    return ModelParams({name: (np.ones(s) if name.endswith(".running_var") else np.zeros(s)).astype(tc.DTYPE)
                        for name, s in param_specs(cfg).items()})


def param_count(params) -> int:
    """Total learnable scalars (running statistics excluded)."""
    return int(sum(v.size for k, v in params.items() if is_learnable(k)))


def param_breakdown(params) -> dict[str, int]:
    """Learnable scalar counts grouped by module (``jmrm`` blocks split into sub-blocks)."""
    groups: dict[str, int] = {}
    for name, value in params.items():
        if not is_learnable(name):
            continue
        parts = name.split(".")
        if parts[0] == "gpem" or parts[0].startswith("jmrm"):
            key = ".".join(parts[:2])
        else:
            key = parts[0]
        groups[key] = groups.get(key, 0) + int(value.size)
    return groups


def validate_params(params, cfg: ModelConfig) -> list[str]:
    """Differences between ``params`` and the layout ``cfg`` declares (empty when they agree)."""
    specs = param_specs(cfg)
    problems = [f"missing {k} {s}" for k, s in specs.items() if k not in params]
    problems += [f"extra {k} {tuple(params[k].shape)}" for k in params if k not in specs]
    problems += [f"shape {k}: expected {s}, got {tuple(params[k].shape)}"
                 for k, s in specs.items() if k in params and tuple(params[k].shape) != tuple(s)]
    return problems


# ---------------------------------------------------------------------------
# evaluation context
# ---------------------------------------------------------------------------

Probe = Callable[[str, np.ndarray], "np.ndarray | None"]


class Trace:
    """Evaluation settings plus (optionally) a gradient store.

    ``probe(stage, value)`` is called at named stages and may return a
    replacement value; used by tests to instrument the graph.
    """

    def __init__(self, cfg: ModelConfig, mode: str = "eval", rng: np.random.Generator | None = None,
                 track: bool = False, probe: Probe | None = None, update_stats: bool = True):
        if mode not in ("train", "eval"):
            raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
        if mode == "train" and rng is None:
            raise ConfigError("train mode needs an rng for dropout / DropBlock")
        self.cfg = cfg
        self.mode = mode
        self.rng = rng
        self.grads: dict[str, np.ndarray] | None = {} if track else None
        self.probe = probe
        self.update_stats = update_stats

    @property
    def tracking(self) -> bool:
        return self.grads is not None

    def accumulate(self, prefix: str, param_grads: dict) -> None:
        for leaf, g in param_grads.items():
            key = f"{prefix}.{leaf}"
            if key in self.grads:
                self.grads[key] = self.grads[key] + g
            else:
                self.grads[key] = g

    def tap(self, stage: str, value: np.ndarray) -> np.ndarray:
        if self.probe is None:
            return value
        replaced = self.probe(stage, value)
        return value if replaced is None else replaced


def _chain(*backs):
    """Compose backward closures listed in forward order."""
    def back(d):
        for b in reversed(backs):
            d = b(d)
        return d
    return back


def conv(x, P, name, tr: Trace, stride: int = 1, need_input_grad: bool = True):
    w, b = P[f"{name}.weight"], P[f"{name}.bias"]
    out = tc.conv2d(x, w, b, stride=stride)
    if not tr.tracking:
        return out, None

    def back(d):
        g = tc.conv2d_backward(d, x, w, stride=stride, need_input_grad=need_input_grad)
        tr.accumulate(name, g.param_grads)
        return g.input_grad
    return out, back


def fc(v, P, name, tr: Trace):
    w, b = P[f"{name}.weight"], P[f"{name}.bias"]
    out = tc.linear(v, w, b)
    if not tr.tracking:
        return out, None

    def back(d):
        g = tc.linear_backward(d, v, w)
        tr.accumulate(name, g.param_grads)
        return g.input_grad
    return out, back


def _relu(x, tr):
    return tc.relu(x), (lambda d: tc.relu_backward(d, x).input_grad) if tr.tracking else None


def _leaky(x, tr):
    s = tr.cfg.leaky_slope
    return tc.leaky_relu(x, s), (lambda d: tc.leaky_relu_backward(d, x, s).input_grad) if tr.tracking else None


# ---------------------------------------------------------------------------
# global priors extraction
# ---------------------------------------------------------------------------

def cccb(x, P, name, tr: Trace, need_input_grad: bool = True, normalize: bool = True):
    """Color condition block: Conv1x1 -> avgpool(2) -> LeakyReLU -> InstanceNorm."""
    if min(x.shape[2:]) < 2:
        raise ShapeError(f"{name}: spatial dims {x.shape[2:]} too small to pool")
    z1, b1 = conv(x, P, f"{name}.conv", tr, need_input_grad=need_input_grad)
    z2 = tc.avg_pool(z1, 2, 2)
    z3, b3 = _leaky(z2, tr)
    back_pool = lambda d: tc.avg_pool_backward(d, z1.shape).input_grad  # noqa: E731
    if not normalize:
        return z3, (_chain(b1, back_pool, b3) if tr.tracking else None)
    gamma, beta = P[f"{name}.norm.gamma"], P[f"{name}.norm.beta"]
    eps = tr.cfg.norm_eps
    out = tc.instance_norm(z3, gamma, beta, eps)
    if not tr.tracking:
        return out, None

    def back_norm(d):
        g = tc.instance_norm_backward(d, z3, gamma, eps)
        tr.accumulate(f"{name}.norm", g.param_grads)
        return g.input_grad
    return out, _chain(b1, back_pool, b3, back_norm)


def ccp(x, P, tr: Trace):
    """Color conformity prior: GAP(Conv1x1(Dropout(CCCB^N(GF(x)))))."""
    cfg = tr.cfg
    need = 2 ** cfg.n_cccb
    if min(x.shape[2:]) < need:
        raise ShapeError(f"CCP branch with {cfg.n_cccb} CCCBs needs inputs of at least {need}x{need}, "
                         f"got {x.shape[2]}x{x.shape[3]}")
    h = guided_filter(x, cfg.filter) if cfg.ccp_guided_filter else x
    backs = []
    for i in range(cfg.n_cccb):
        h, b = cccb(h, P, f"gpem.ccp.cccb{i}", tr, need_input_grad=i > 0, normalize=cfg.cccb_normalized(i))
        backs.append(b)
    if tr.mode == "train" and cfg.dropout_p > 0:
        mask = tc.dropout_mask(h.shape, cfg.dropout_p, tr.rng, h.dtype)
        h = h * mask
        backs.append(lambda d: d * mask)
    z, b = conv(h, P, "gpem.ccp.out", tr)
    backs.append(b)
    z = tr.tap("ccp.gap_input", z)
    v = tc.global_avg_pool(z)
    if not tr.tracking:
        return v, None
    shape = z.shape
    backs.append(lambda d: tc.global_avg_pool_backward(d, shape).input_grad)
    return v, _chain(*backs)


def sscb(x, P, name, tr: Trace, need_input_grad: bool = True):
    """Structural similarity condition block: Conv3x3/stride 2 -> ReLU -> BatchNorm."""
    if min(x.shape[2:]) < 2:
        raise ShapeError(f"{name}: spatial dims {x.shape[2:]} too small to downsample")
    z1, b1 = conv(x, P, f"{name}.conv", tr, stride=2, need_input_grad=need_input_grad)
    z2, b2 = _relu(z1, tr)
    cfg = tr.cfg
    gamma, beta = P[f"{name}.bn.gamma"], P[f"{name}.bn.beta"]
    stats = tc.RunningStats(P[f"{name}.bn.running_mean"], P[f"{name}.bn.running_var"])
    out = tc.batch_norm(z2, gamma, beta, stats, tr.mode, cfg.bn_momentum, cfg.norm_eps,
                        update_stats=tr.update_stats)
    if not tr.tracking:
        return out, None

    def back_bn(d):
        g = tc.batch_norm_backward(d, z2, gamma, stats, tr.mode, cfg.norm_eps)
        tr.accumulate(f"{name}.bn", g.param_grads)
        return g.input_grad
    return out, _chain(b1, b2, back_bn)


def ssp(x, P, tr: Trace):
    """Structural similarity prior: GAP(Conv3x3(DropBlock(SSCB^N(x))))."""
    cfg = tr.cfg
    h = x
    backs = []
    for i in range(cfg.n_sscb):
        h, b = sscb(h, P, f"gpem.ssp.sscb{i}", tr, need_input_grad=i > 0)
        backs.append(b)
    if tr.mode == "train":
        dropped = tc.drop_block(h, cfg.dropblock_keep, "train", tr.rng)
        h, mask = dropped.output, dropped.mask
        backs.append(lambda d: d * mask)
    z, b = conv(h, P, "gpem.ssp.out", tr)
    backs.append(b)
    v = tc.global_avg_pool(z)
    if not tr.tracking:
        return v, None
    shape = z.shape
    backs.append(lambda d: tc.global_avg_pool_backward(d, shape).input_grad)
    return v, _chain(*backs)


def gpem(x, P, tr: Trace):
    """Global priors vector [V_c | V_s]; a masked-off branch contributes zeros."""
    cfg = tr.cfg
    n = x.shape[0]
    dc = cfg.prior_dim_c
    back_c = back_s = None
    if cfg.branch_mask in ("both", "ccp_only"):
        vc, back_c = ccp(x, P, tr)
    else:
        vc = np.zeros((n, dc), dtype=x.dtype)
    if cfg.branch_mask in ("both", "ssp_only"):
        vs, back_s = ssp(x, P, tr)
    else:
        vs = np.zeros((n, cfg.prior_dim_s), dtype=x.dtype)
    v = tr.tap("gpem.output", np.concatenate([vc, vs], axis=1))
    if not tr.tracking:
        return v, None

    def back(d):
        if back_c is not None:
            back_c(d[:, :dc])
        if back_s is not None:
            back_s(d[:, dc:])
        return None
    return v, back


# ---------------------------------------------------------------------------
# joint modulated residual module
# ---------------------------------------------------------------------------

def bb(F, P, name, tr: Trace):
    """Base block: Conv3x3 -> ReLU -> Conv3x3."""
    z1, b1 = conv(F, P, f"{name}.conv1", tr)
    z2, b2 = _relu(z1, tr)
    out, b3 = conv(z2, P, f"{name}.conv2", tr)
    return out, (_chain(b1, b2, b3) if tr.tracking else None)


def spcb(F, P, name, tr: Trace):
    """Spatial pyramid conv block: 1x1 reduce, parallel 3/5/7/9 convs, concat, 1x1 fuse to one channel."""
    r, b_r = conv(F, P, f"{name}.reduce", tr)
    outs, backs = [], []
    for k in SPCB_KERNELS:
        o, b = conv(r, P, f"{name}.k{k}", tr)
        outs.append(o)
        backs.append(b)
    cat = np.concatenate(outs, axis=1)
    s, b_f = conv(cat, P, f"{name}.fuse", tr)
    if not tr.tracking:
        return s, None
    w = r.shape[1]

    def back(d):
        dcat = b_f(d)
        dr = sum(b(dcat[:, i * w:(i + 1) * w]) for i, b in enumerate(backs))
        return b_r(dr)
    return s, back


def _channel_maps(v, P, name, tr):
    m1, b1 = fc(v, P, f"{name}.fc_gamma", tr)
    m2, b2 = fc(v, P, f"{name}.fc_beta", tr)
    n, c = m1.shape
    return m1.reshape(n, c, 1, 1), m2.reshape(n, c, 1, 1), b1, b2


def gsmb(F, v, S, P, name, tr: Trace):
    """gamma = M1(v) + S, beta = M2(v) + S (broadcast); out = gamma * F + beta."""
    if S.ndim != 4 or S.shape[1] != 1 or S.shape[0] != F.shape[0] or S.shape[2:] != F.shape[2:]:
        raise ShapeError(f"{name}: spatial map {S.shape} incompatible with features {F.shape}")
    if v.shape != (F.shape[0], tr.cfg.prior_dim):
        raise ShapeError(f"{name}: priors vector {v.shape}, expected {(F.shape[0], tr.cfg.prior_dim)}")
    m1, m2, b1, b2 = _channel_maps(v, P, name, tr)
    gamma = tc.add(m1, S)
    beta = tc.add(m2, S)
    out = gamma * F + beta
    if not tr.tracking:
        return out, None

    def back(d):
        dgamma = d * F
        dF = d * gamma
        dm1 = dgamma.sum(axis=(2, 3))
        dm2 = d.sum(axis=(2, 3))
        dS = (dgamma + d).sum(axis=1, keepdims=True)
        dv = b1(dm1) + b2(dm2)
        return dF, dv, dS
    return out, back


def gfm(F, v, P, name, tr: Trace):
    """Channel-wise modulation from the priors vector only."""
    if v.shape != (F.shape[0], tr.cfg.prior_dim):
        raise ShapeError(f"{name}: priors vector {v.shape}, expected {(F.shape[0], tr.cfg.prior_dim)}")
    m1, m2, b1, b2 = _channel_maps(v, P, name, tr)
    out = tc.mul(F, m1) + m2
    if not tr.tracking:
        return out, None

    def back(d):
        dm1 = (d * F).sum(axis=(2, 3))
        dm2 = d.sum(axis=(2, 3))
        return d * m1, b1(dm1) + b2(dm2)
    return out, back


def sft(F, cond, P, name, tr: Trace):
    """Spatial feature transform with full-resolution gamma / beta from condition maps."""
    if cond.shape[0] != F.shape[0] or cond.shape[2:] != F.shape[2:]:
        raise ShapeError(f"{name}: condition maps {cond.shape} incompatible with features {F.shape}")
    gamma, bg = conv(cond, P, f"{name}.gamma", tr)
    beta, bb_ = conv(cond, P, f"{name}.beta", tr)
    out = gamma * F + beta
    if not tr.tracking:
        return out, None

    def back(d):
        return d * gamma, bg(d * F) + bb_(d)
    return out, back


def condition_head(x, P, tr: Trace):
    """Two-conv condition network feeding the SFT ablation."""
    z1, b1 = conv(x, P, "cond.conv1", tr, need_input_grad=False)
    z2, b2 = _leaky(z1, tr)
    out, b3 = conv(z2, P, "cond.conv2", tr)
    return out, (_chain(b1, b2, b3) if tr.tracking else None)


def jmrm(F, v, cond, P, index: int, tr: Trace):
    """JMRM(F) = Modulate(BB(F) | priors, SPCB(BB(F))) + F.

    ``back(d)`` returns ``(dF, dv, dcond)`` with ``None`` for unused inputs.
    """
    name = f"jmrm{index}"
    kind = tr.cfg.modulation
    B, b_bb = bb(F, P, f"{name}.bb", tr)
    if kind == "GSMB":
        S, b_sp = spcb(B, P, f"{name}.spcb", tr)
        M, b_mod = gsmb(B, v, S, P, f"{name}.gsmb", tr)
    elif kind == "GFM":
        M, b_mod = gfm(B, v, P, f"{name}.gfm", tr)
    else:
        M, b_mod = sft(B, cond, P, f"{name}.sft", tr)
    out = M + F
    if not tr.tracking:
        return out, None

    def back(d):
        dv = dcond = None
        if kind == "GSMB":
            dB, dv, dS = b_mod(d)
            dB = dB + b_sp(dS)
        elif kind == "GFM":
            dB, dv = b_mod(d)
        else:
            dB, dcond = b_mod(d)
        return d + b_bb(dB), dv, dcond
    return out, back


def up(F, P, scale: int, tr: Trace):
    """One (Conv3x3 C -> 4C, pixel shuffle x2) stage per factor of two."""
    if scale not in (2, 4):
        raise ConfigError(f"upsampler scale must be 2 or 4, got {scale}")
    backs = []
    h = F
    for i in range(int(round(math.log2(scale)))):
        z, b = conv(h, P, f"up.{i}", tr)
        h = tc.pixel_shuffle(z, 2)
        backs += [b, lambda d: tc.pixel_unshuffle(d, 2)]
    return h, (_chain(*backs) if tr.tracking else None)


def network(x, P, tr: Trace):
    """Full GPGMNet forward; ``back(dout)`` fills ``tr.grads``."""
    cfg = tr.cfg
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"network input must be (n, 3, h, w), got {x.shape}")
    need = cfg.min_input_size
    if min(x.shape[2:]) < need:
        raise ShapeError(f"input {x.shape[2]}x{x.shape[3]} too small for the prior branches (needs >= {need})")
    F0, b_cf = conv(x, P, "cf", tr, need_input_grad=False)
    v = cond = None
    b_gp = b_cond = None
    if cfg.uses_priors:
        v, b_gp = gpem(x, P, tr)
    else:
        cond, b_cond = condition_head(x, P, tr)
    F = F0
    jbacks = []
    for j in range(cfg.n_jmrm):
        F, b = jmrm(F, v, cond, P, j, tr)
        jbacks.append(b)
    G, b_cb = conv(F, P, "cb", tr)
    U, b_up = up(G, P, cfg.scale, tr)
    R, b_cl = conv(U, P, "cl", tr)
    out = R + bicubic_resize(x, cfg.scale)
    if not tr.tracking:
        return out, None

    def back(dout):
        dF = b_cb(b_up(b_cl(dout)))
        dv = np.zeros_like(v) if v is not None else None
        dcond = np.zeros_like(cond) if cond is not None else None
        for b in reversed(jbacks):
            dF, dvj, dcj = b(dF)
            if dvj is not None:
                dv += dvj
            if dcj is not None:
                dcond += dcj
        b_cf(dF)
        if b_gp is not None:
            b_gp(dv)
        if b_cond is not None:
            b_cond(dcond)
        return None
    return out, back


# ---------------------------------------------------------------------------
# public wrappers
# ---------------------------------------------------------------------------

def _trace(cfg, mode="eval", rng=None, probe=None):
    return Trace(cfg or ModelConfig(), mode, rng, probe=probe)


def cccb_forward(x, params, mode="eval", name="gpem.ccp.cccb0", cfg: ModelConfig | None = None):
    return cccb(x, params, name, _trace(cfg, mode, np.random.default_rng(0)))[0]


def ccp_branch(frame, params, cfg: ModelConfig, mode="eval", rng=None, probe: Probe | None = None):
    return ccp(frame, params, _trace(cfg, mode, rng, probe))[0]


def sscb_forward(x, params, mode="eval", name="gpem.ssp.sscb0", cfg: ModelConfig | None = None):
    return sscb(x, params, name, _trace(cfg, mode, np.random.default_rng(0)))[0]


def ssp_branch(frame, params, cfg: ModelConfig, mode="eval", rng=None):
    return ssp(frame, params, _trace(cfg, mode, rng))[0]


def gpem_forward(frame, params, cfg: ModelConfig, mode="eval", rng=None, probe: Probe | None = None):
    return gpem(frame, params, _trace(cfg, mode, rng, probe))[0]


def base_block(F, params, name="jmrm0.bb"):
    return bb(F, params, name, _trace(None))[0]


def spcb_forward(F, params, name="jmrm0.spcb"):
    return spcb(F, params, name, _trace(None))[0]


def gsmb_forward(F, v, S, params, name="jmrm0.gsmb", cfg: ModelConfig | None = None):
    cfg = cfg or ModelConfig(channels=F.shape[1], prior_dim_c=v.shape[1] // 2, prior_dim_s=v.shape[1] - v.shape[1] // 2)
    return gsmb(F, v, S, params, name, _trace(cfg))[0]


def gfm_forward(F, v, params, name="jmrm0.gfm", cfg: ModelConfig | None = None):
    cfg = cfg or ModelConfig(channels=F.shape[1], prior_dim_c=v.shape[1] // 2, prior_dim_s=v.shape[1] - v.shape[1] // 2,
                             modulation="GFM")
    return gfm(F, v, params, name, _trace(cfg))[0]


def sft_forward(F, cond, params, name="jmrm0.sft"):
    return sft(F, cond, params, name, _trace(None))[0]


def jmrm_forward(F, v, params, cfg: ModelConfig, index: int = 0, cond=None):
    return jmrm(F, v, cond, params, index, _trace(cfg))[0]


def upsampler(F, params, scale: int):
    return up(F, params, scale, _trace(None))[0]


def gpgmnet_forward(x, params, cfg: ModelConfig, mode="eval", rng=None, probe: Probe | None = None):
    """Predict the HR HDR frame (n, 3, h*s, w*s) from normalized LR SDR YUV (n, 3, h, w)."""
    return network(x, params, _trace(cfg, mode, rng, probe))[0]


def forward_backward(x, params, cfg: ModelConfig, mode="train", rng=None, update_stats: bool = True):
    """Forward pass plus a closure ``backward(dout) -> {param path: gradient}``."""
    tr = Trace(cfg, mode, rng, track=True, update_stats=update_stats)
    out, back = network(x, params, tr)

    def backward(dout):
        tr.grads.clear()
        back(dout)
        return {k: tr.grads.get(k, np.zeros_like(v)) for k, v in params.items() if is_learnable(k)}
    return out, backward
