"""L2 loss, Adam, and a small deterministic training loop with checkpoints.

Every iteration draws its randomness (batch positions, dropout masks) from
``np.random.default_rng([seed, iteration])``, so a run resumed from a
checkpoint needs only the parameters, the optimizer moments and the
iteration number to replay the uninterrupted trajectory exactly.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import data_io
from .errors import ConfigError, NumericalError, ShapeError
from .image_ops import bicubic_resize
from .metrics import psnr
from .model import ModelConfig, ModelParams, _coerce_fields, forward_backward, gpgmnet_forward, init_params, \
    is_learnable, read_kv_file


def l2_loss(pred, target) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient ``2 (pred - target) / N``."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"l2_loss shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target.astype(pred.dtype)
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    return loss, (2.0 / diff.size) * diff


@dataclass
class OptimState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict, **hyper) -> "OptimState":
        zeros = {k: np.zeros_like(v) for k, v in params.items() if is_learnable(k)}
        return cls(m=zeros, v={k: z.copy() for k, z in zeros.items()}, **hyper)

    def hyper(self) -> dict:
        return dict(step=self.step, lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)


def adam_step(params: dict, grads: dict, state: OptimState) -> dict:
    """One bias-corrected Adam update, applied in place; returns ``params``."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            raise ShapeError(f"no optimizer state for {name}")
        m, v = state.m[name], state.v[name]
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"adam shapes differ for {name}: param {p.shape}, grad {g.shape}, state {m.shape}")
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * (g * g)
        step = (state.lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        p -= step.astype(p.dtype)
    return params


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = np.float32(max_norm / norm)
        for g in grads.values():
            g *= scale
    return norm


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    """Loop settings.  ``checkpoint_every``/``eval_every`` of 0 mean "only at the end"."""
    lr: float = 1e-4
    batch_size: int = 32
    iterations: int = 1000
    seed: int = 0
    checkpoint_every: int = 0
    eval_every: int = 0
    patch_lr: int = 40
    fixed_batch: bool = False
    grad_clip: float = 0.0
    holdout: int = 1

    def __post_init__(self):
        if not (self.lr > 0 and self.batch_size > 0 and self.iterations > 0 and self.patch_lr > 0):
            raise ConfigError("lr, batch_size, iterations and patch_lr must be positive")
        if min(self.checkpoint_every, self.eval_every, self.holdout, self.seed) < 0 or self.grad_clip < 0:
            raise ConfigError("checkpoint_every, eval_every, holdout, seed and grad_clip must be non-negative")

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        return cls(**_coerce_fields(cls, values))


def load_run_config(path) -> tuple[ModelConfig, TrainConfig]:
    """Split one key=value file into model and training settings; unknown keys are rejected."""
    values = read_kv_file(path)
    train_keys = {f.name for f in fields(TrainConfig)}
    model_keys = {f.name for f in fields(ModelConfig)}
    unknown = sorted(set(values) - train_keys - model_keys)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    model = ModelConfig.from_mapping({k: v for k, v in values.items() if k in model_keys})
    train = TrainConfig.from_mapping({k: v for k, v in values.items() if k in train_keys})
    return model, train


def write_run_config(model: ModelConfig, train: TrainConfig, path) -> None:
    lines = [f"{k}={v}" for k, v in {**model.to_dict(), **asdict(train)}.items()]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalResult:
    iteration: int
    psnr: float
    bicubic_psnr: float

    @property
    def gain(self) -> float:
        return self.psnr - self.bicubic_psnr


def predict(lr_frame_or_pixels, params, cfg: ModelConfig) -> np.ndarray:
    """Eval-mode forward, clipped to the representable [0, 1] range."""
    x = lr_frame_or_pixels
    if isinstance(x, data_io.Frame):
        x = data_io.to_yuv444(x).pixels
    return np.clip(gpgmnet_forward(np.asarray(x, dtype=np.float32), params, cfg, mode="eval"), 0.0, 1.0)


def evaluate(pairs, params, cfg: ModelConfig, iteration: int = 0) -> EvalResult:
    """Mean held-out PSNR of the model and of the bicubic baseline (YUV, joint planes)."""
    ours, base = [], []
    for lr, hr in pairs:
        x = data_io.to_yuv444(lr).pixels.astype(np.float32)
        ref = data_io.to_yuv444(hr).pixels
        ours.append(psnr(predict(x, params, cfg), ref))
        base.append(psnr(np.clip(bicubic_resize(x, cfg.scale), 0.0, 1.0), ref))
    return EvalResult(iteration, float(np.mean(ours)), float(np.mean(base)))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def checkpoint_dir(out_dir, iteration: int) -> Path:
    return Path(out_dir) / f"ckpt_{iteration:06d}"


def save_checkpoint(path, params: dict, state: OptimState, iteration: int) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    data_io.save_weights(params, path / "weights.bin")
    moments = {f"m.{k}": v for k, v in state.m.items()}
    moments.update({f"v.{k}": v for k, v in state.v.items()})
    data_io.save_weights(moments, path / "optim.bin")
    (path / "state.json").write_text(json.dumps({"iteration": iteration, **state.hyper()}, sort_keys=True) + "\n")
    return path


def load_checkpoint(path, cfg: ModelConfig) -> tuple[ModelParams, OptimState, int]:
    path = Path(path)
    meta = json.loads((path / "state.json").read_text())
    params = data_io.load_weights(path / "weights.bin", cfg)
    moments = data_io.load_weights(path / "optim.bin")
    state = OptimState(m={k[2:]: v for k, v in moments.items() if k.startswith("m.")},
                       v={k[2:]: v for k, v in moments.items() if k.startswith("v.")},
                       step=int(meta["step"]), lr=float(meta["lr"]), beta1=float(meta["beta1"]),
                       beta2=float(meta["beta2"]), eps=float(meta["eps"]))
    return params, state, int(meta["iteration"])


# ---------------------------------------------------------------------------
# loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: ModelParams
    losses: list            # (iteration, loss)
    evals: list             # EvalResult
    state: OptimState


def _first_nonfinite(tensors: dict) -> str | None:
    for name, value in tensors.items():
        if not np.all(np.isfinite(value)):
            return name
    return None


def _batch(pairs, tcfg: TrainConfig, rng: np.random.Generator):
    picks = rng.integers(0, len(pairs), tcfg.batch_size)
    lrs, hrs = [], []
    for i in picks:
        lr, hr = data_io.sample_patches(pairs[i], tcfg.patch_lr, 1, rng)
        lrs.append(lr)
        hrs.append(hr)
    return np.concatenate(lrs), np.concatenate(hrs)


def split_pairs(pairs: list, holdout: int) -> tuple[list, list]:
    """Last ``holdout`` pairs are held out; with a single pair it is used for both."""
    if not pairs:
        raise ConfigError("training needs at least one pair")
    if holdout == 0:
        return pairs, []
    if len(pairs) <= holdout:
        return pairs, pairs[-1:]
    return pairs[:-holdout], pairs[-holdout:]


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, manifest, out_dir=None, resume=None,
          params: dict | None = None, log: Callable[[str], None] | None = None) -> TrainResult:
    """Run the loop over a :class:`DatasetManifest` (or a list of (lr, hr) Frame pairs).

    ``out_dir`` receives ``loss.log`` (``iter<TAB>loss``), ``ckpt_NNNNNN``
    directories, ``eval.log`` and the final ``weights.bin``.  ``resume`` is a
    checkpoint directory to continue from.
    """
    pairs = manifest.load_pairs() if isinstance(manifest, data_io.DatasetManifest) else list(manifest)
    if isinstance(manifest, data_io.DatasetManifest) and manifest.scale != model_cfg.scale:
        raise ConfigError(f"manifest scale {manifest.scale} != model scale {model_cfg.scale}")
    train_pairs, held_out = split_pairs(pairs, train_cfg.holdout)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    start = 0
    if resume is not None:
        params, state, start = load_checkpoint(resume, model_cfg)
        state.lr = train_cfg.lr
    else:
        if params is None:
            params = init_params(model_cfg, np.random.default_rng([train_cfg.seed, 0x5EED]))
        params = ModelParams({k: np.array(v, dtype=np.float32) for k, v in params.items()})
        state = OptimState.for_params(params, lr=train_cfg.lr)

    loss_log = eval_log = None
    if out is not None:
        kept = []
        if resume is not None and (out / "loss.log").exists():
            kept = [ln for ln in (out / "loss.log").read_text().splitlines() if int(ln.split("\t")[0]) <= start]
        (out / "loss.log").write_text("".join(ln + "\n" for ln in kept))
        loss_log = open(out / "loss.log", "a")
        eval_log = open(out / "eval.log", "a" if resume is not None else "w")

    fixed = _batch(train_pairs, train_cfg, np.random.default_rng([train_cfg.seed, 0])) if train_cfg.fixed_batch else None
    losses, evals = [], []
    try:
        for it in range(start + 1, train_cfg.iterations + 1):
            rng = np.random.default_rng([train_cfg.seed, it])
            x, y = fixed if fixed is not None else _batch(train_pairs, train_cfg, rng)
            pred, backward = forward_backward(x, params, model_cfg, mode="train", rng=rng)
            loss, dpred = l2_loss(pred, y)
            if not math.isfinite(loss):
                bad = _first_nonfinite({"prediction": pred}) or "loss"
                raise NumericalError(f"iteration {it}: non-finite loss (first non-finite tensor: {bad})")
            grads = backward(dpred)
            bad = _first_nonfinite({f"grad:{k}": g for k, g in grads.items()})
            if bad:
                raise NumericalError(f"iteration {it}: non-finite gradient in {bad}")
            if train_cfg.grad_clip > 0:
                clip_gradients(grads, train_cfg.grad_clip)
            adam_step(params, grads, state)
            bad = _first_nonfinite(params)
            if bad:
                raise NumericalError(f"iteration {it}: parameter {bad} became non-finite")
            losses.append((it, loss))
            if loss_log is not None:
                loss_log.write(f"{it}\t{loss:.9e}\n")
            last = it == train_cfg.iterations
            if held_out and ((train_cfg.eval_every and it % train_cfg.eval_every == 0) or last):
                ev = evaluate(held_out, params, model_cfg, it)
                evals.append(ev)
                if eval_log is not None:
                    eval_log.write(f"{it}\t{ev.psnr:.6f}\t{ev.bicubic_psnr:.6f}\n")
                if log:
                    log(f"iter {it}: held-out PSNR {ev.psnr:.3f} dB (bicubic {ev.bicubic_psnr:.3f} dB)")
            if out is not None and ((train_cfg.checkpoint_every and it % train_cfg.checkpoint_every == 0) or last):
                save_checkpoint(checkpoint_dir(out, it), params, state, it)
            if log and (it == start + 1 or last or it % max(1, train_cfg.iterations // 10) == 0):
                log(f"iter {it}: loss {loss:.6e}")
    finally:
        if loss_log is not None:
            loss_log.close()
            eval_log.close()
    if out is not None:
        data_io.save_weights(params, out / "weights.bin")
    return TrainResult(params, losses, evals, state)


def read_loss_log(path) -> list[tuple[int, float]]:
    rows = []
    for line in Path(path).read_text().splitlines():
        it, loss = line.split("\t")
        rows.append((int(it), float(loss)))
    return rows


# ---------------------------------------------------------------------------
# color transition test
# ---------------------------------------------------------------------------

@dataclass
class ColorBarResult:
    input: data_io.Frame
    output: data_io.Frame
    reference: data_io.Frame
    bars: list          # (name, output score, reference score)

    @property
    def output_score(self) -> float:
        return float(np.mean([b[1] for b in self.bars]))

    @property
    def reference_score(self) -> float:
        return float(np.mean([b[2] for b in self.bars]))


def infer_frame(frame: data_io.Frame, params, cfg: ModelConfig) -> data_io.Frame:
    """Model output as a 10-bit BT.2020 PQ frame (values already on the 10-bit grid)."""
    out = predict(frame, params, cfg)
    codes = data_io.cm.dequantize(data_io.cm.quantize(out[0], 10), 10).astype(np.float32)
    return data_io.Frame.from_pixels(codes, gamut=data_io.Gamut.BT2020, transfer=data_io.Transfer.PQ,
                                     bit_depth=10, chroma=data_io.Chroma.YUV444)


def color_bar_test(params, cfg: ModelConfig, width: int = 96, height: int = 56) -> ColorBarResult:
    """Run the model on the color bar and score ramp smoothness per bar against the ground-truth mapping."""
    from .metrics import row_smoothness
    bar = data_io.color_bar(width, height)
    out = infer_frame(bar, params, cfg)
    ref = data_io.color_bar_reference(width, height, cfg.scale)
    s_out = row_smoothness(out.pixels)
    s_ref = row_smoothness(ref.pixels)
    bars = []
    for name, r0, r1 in bar.meta["bars"]:
        rows = slice(r0 * cfg.scale, r1 * cfg.scale)
        bars.append((name, float(s_out[rows].mean()), float(s_ref[rows].mean())))
    return ColorBarResult(bar, out, ref, bars)
