"""Finite-difference gradient checks for every layer and for the whole network.

Each check builds an op closure for :func:`tensor_core.grad_check` and runs it
in float64.  Layer checks use ``tolerance=1e-4``; the end-to-end checks use
``tolerance=1e-3``.  Composite blocks and the network contain ReLUs fed by
biases, so they use smaller steps: a bias nudged by 1e-3 shifts a whole
channel and some pre-activation almost surely crosses zero inside the stencil.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as M
from . import tensor_core as tc

LAYER_TOLERANCE = 1e-4
NETWORK_TOLERANCE = 1e-3
LAYER_EPS = 1e-3
BLOCK_EPS = 1e-5
NETWORK_EPS = 1e-6


@dataclass
class CheckResult:
    name: str
    report: tc.GradCheckReport

    @property
    def passed(self) -> bool:
        return self.report.passed

    def line(self) -> str:
        return f"{self.name}\t{self.report}"


def small_config(modulation: str = "GSMB", **overrides) -> M.ModelConfig:
    """Tiny network used by the end-to-end checks (runs in well under a second)."""
    base = dict(scale=2, n_jmrm=2, channels=8, n_cccb=2, n_sscb=2, cccb_width=4, sscb_width=4,
                spcb_width=4, cond_width=4, modulation=modulation)
    base.update(overrides)
    return M.ModelConfig(**base)


def _away_from_zero(rng, shape, margin=0.05):
    """Normal samples pushed at least ``margin`` away from 0 (keeps ReLU kinks out of the stencil)."""
    x = rng.standard_normal(shape)
    return np.where(x >= 0, x + margin, x - margin)


# ---------------------------------------------------------------------------
# primitive layers
# ---------------------------------------------------------------------------

def _layer_cases(rng):
    cases = {}

    for k, stride in ((1, 1), (3, 1), (3, 2), (5, 1)):
        def op(v, k=k, stride=stride):
            out = tc.conv2d(v["x"], v["weight"], v["bias"], stride=stride)
            return out, lambda d: {"x": (g := tc.conv2d_backward(d, v["x"], v["weight"], stride)).input_grad,
                                   **g.param_grads}
        cases[f"conv2d k{k} s{stride}"] = (op, {"x": rng.standard_normal((2, 3, 7, 7)),
                                               "weight": rng.standard_normal((4, 3, k, k)),
                                               "bias": rng.standard_normal(4)})

    def linear(v):
        g = lambda d: tc.linear_backward(d, v["x"], v["weight"])  # noqa: E731
        return tc.linear(v["x"], v["weight"], v["bias"]), lambda d: {"x": (r := g(d)).input_grad, **r.param_grads}
    cases["linear"] = (linear, {"x": rng.standard_normal((3, 5)), "weight": rng.standard_normal((4, 5)),
                                "bias": rng.standard_normal(4)})

    cases["relu"] = (lambda v: (tc.relu(v["x"]), lambda d: {"x": tc.relu_backward(d, v["x"]).input_grad}),
                     {"x": _away_from_zero(rng, (2, 3, 4, 4))})
    cases["leaky_relu"] = (lambda v: (tc.leaky_relu(v["x"]),
                                      lambda d: {"x": tc.leaky_relu_backward(d, v["x"]).input_grad}),
                           {"x": _away_from_zero(rng, (2, 3, 4, 4))})

    def inorm(v):
        out = tc.instance_norm(v["x"], v["gamma"], v["beta"])
        return out, lambda d: {"x": (g := tc.instance_norm_backward(d, v["x"], v["gamma"])).input_grad,
                               **g.param_grads}
    cases["instance_norm"] = (inorm, {"x": rng.standard_normal((2, 3, 5, 5)), "gamma": rng.standard_normal(3),
                                      "beta": rng.standard_normal(3)})

    for mode in ("train", "eval"):
        stats = tc.RunningStats(rng.standard_normal(3), rng.uniform(0.5, 2.0, 3))

        def bnorm(v, mode=mode, stats=stats):
            out = tc.batch_norm(v["x"], v["gamma"], v["beta"], stats, mode, update_stats=False)
            return out, lambda d: {"x": (g := tc.batch_norm_backward(d, v["x"], v["gamma"], stats, mode)).input_grad,
                                   **g.param_grads}
        cases[f"batch_norm {mode}"] = (bnorm, {"x": rng.standard_normal((3, 3, 4, 4)),
                                               "gamma": rng.standard_normal(3), "beta": rng.standard_normal(3)})

    cases["avg_pool"] = (lambda v: (tc.avg_pool(v["x"]),
                                    lambda d: {"x": tc.avg_pool_backward(d, v["x"].shape).input_grad}),
                         {"x": rng.standard_normal((2, 3, 6, 6))})
    cases["global_avg_pool"] = (lambda v: (tc.global_avg_pool(v["x"]),
                                           lambda d: {"x": tc.global_avg_pool_backward(d, v["x"].shape).input_grad}),
                                {"x": rng.standard_normal((2, 3, 5, 4))})

    dmask = tc.dropout_mask((2, 3, 5, 5), 0.5, np.random.default_rng(1), np.float64)
    cases["dropout"] = (lambda v: (v["x"] * dmask, lambda d: {"x": tc.masked_backward(d, dmask).input_grad}),
                        {"x": rng.standard_normal((2, 3, 5, 5))})
    bmask, _ = tc.drop_block_mask((2, 3, 8, 8), 0.9, np.random.default_rng(2), dtype=np.float64)
    cases["drop_block"] = (lambda v: (v["x"] * bmask, lambda d: {"x": tc.masked_backward(d, bmask).input_grad}),
                           {"x": rng.standard_normal((2, 3, 8, 8))})

    cases["pixel_shuffle"] = (lambda v: (tc.pixel_shuffle(v["x"], 2),
                                         lambda d: {"x": tc.pixel_shuffle_backward(d, 2).input_grad}),
                              {"x": rng.standard_normal((2, 8, 3, 3))})

    def concat(v):
        ca = v["a"].shape[1]
        return tc.concat_channels(v["a"], v["b"]), lambda d: dict(zip("ab", tc.concat_channels_backward(d, ca)))
    cases["concat_channels"] = (concat, {"a": rng.standard_normal((2, 2, 3, 3)), "b": rng.standard_normal((2, 3, 3, 3))})

    def add(v):
        return tc.add(v["a"], v["b"]), lambda d: dict(zip("ab", tc.add_backward(d, v["a"].shape, v["b"].shape)))
    cases["add broadcast"] = (add, {"a": rng.standard_normal((2, 4, 3, 3)), "b": rng.standard_normal((2, 1, 3, 3))})

    def mul(v):
        return tc.mul(v["a"], v["b"]), lambda d: dict(zip("ab", tc.mul_backward(d, v["a"], v["b"])))
    cases["mul broadcast"] = (mul, {"a": rng.standard_normal((2, 4, 3, 3)), "b": rng.standard_normal((2, 4, 1, 1))})
    return cases


# ---------------------------------------------------------------------------
# network blocks
# ---------------------------------------------------------------------------

def _block_case(cfg, prefix, block, data: dict, rng):
    """Wrap ``block(inputs..., P, tr) -> (out, back)``; parameters under ``prefix`` are checked too."""
    P = M.init_params(cfg, rng)
    names = [k for k in P if k.startswith(prefix) and M.is_learnable(k)]
    fixed = {k: v.astype(np.float64) for k, v in P.items() if k not in names}
    inputs = {**data, **{k: P[k] for k in names}}

    def op(v):
        params = M.ModelParams({**fixed, **{k: v[k] for k in names}})
        tr = M.Trace(cfg, "eval", track=True)
        out, back = block({k: v[k] for k in data}, params, tr)

        def backward(d):
            tr.grads.clear()
            din = back(d)
            din = din if isinstance(din, tuple) else (din,)
            grads = {k: g for k, g in zip(data, din) if g is not None}
            grads.update(tr.grads)
            return grads
        return out, backward
    return op, inputs


def _block_cases(rng):
    cfg = small_config()
    c = cfg.channels
    feat = lambda: rng.standard_normal((2, c, 6, 6))  # noqa: E731
    cases = {
        "cccb": _block_case(cfg, "gpem.ccp.cccb0", lambda d, P, tr: M.cccb(d["x"], P, "gpem.ccp.cccb0", tr),
                            {"x": rng.standard_normal((2, 3, 6, 6))}, rng),
        "sscb": _block_case(cfg, "gpem.ssp.sscb1", lambda d, P, tr: M.sscb(d["x"], P, "gpem.ssp.sscb1", tr),
                            {"x": rng.standard_normal((2, cfg.sscb_width, 6, 6))}, rng),
        "base_block": _block_case(cfg, "jmrm0.bb", lambda d, P, tr: M.bb(d["F"], P, "jmrm0.bb", tr),
                                  {"F": feat()}, rng),
        "spcb": _block_case(cfg, "jmrm0.spcb", lambda d, P, tr: M.spcb(d["F"], P, "jmrm0.spcb", tr),
                            {"F": feat()}, rng),
        "gsmb": _block_case(cfg, "jmrm0.gsmb", lambda d, P, tr: M.gsmb(d["F"], d["v"], d["S"], P, "jmrm0.gsmb", tr),
                            {"F": feat(), "v": rng.standard_normal((2, cfg.prior_dim)),
                             "S": rng.standard_normal((2, 1, 6, 6))}, rng),
        "upsampler": _block_case(cfg, "up", lambda d, P, tr: M.up(d["F"], P, cfg.scale, tr), {"F": feat()}, rng),
    }
    gcfg = small_config("GFM")
    cases["gfm"] = _block_case(gcfg, "jmrm0.gfm", lambda d, P, tr: M.gfm(d["F"], d["v"], P, "jmrm0.gfm", tr),
                               {"F": feat(), "v": rng.standard_normal((2, gcfg.prior_dim))}, rng)
    scfg = small_config("SFT")
    cases["sft"] = _block_case(scfg, "jmrm0.sft", lambda d, P, tr: M.sft(d["F"], d["cond"], P, "jmrm0.sft", tr),
                               {"F": feat(), "cond": rng.standard_normal((2, scfg.cond_width, 6, 6))}, rng)
    cases["jmrm"] = _block_case(cfg, "jmrm0", _jmrm_adapter,
                                {"F": feat(), "v": rng.standard_normal((2, cfg.prior_dim))}, rng)
    return cases


def _jmrm_adapter(d, P, tr):
    # drop the unused condition-map gradient from (dF, dv, dcond)
    out, back = M.jmrm(d["F"], d["v"], None, P, 0, tr)
    return out, lambda g: back(g)[:2]


def layer_checks(seed: int = 0, include_blocks: bool = True) -> list[CheckResult]:
    """Every primitive layer (and network block) against central differences at 1e-4."""
    rng = np.random.default_rng(seed)
    cases = {name: (case, LAYER_EPS) for name, case in _layer_cases(rng).items()}
    if include_blocks:
        cases.update({name: (case, BLOCK_EPS) for name, case in _block_cases(rng).items()})
    results = []
    for name, ((op, inputs), eps) in cases.items():
        rep = tc.grad_check(op, inputs, eps=eps, tolerance=LAYER_TOLERANCE, seed=seed, max_entries=12)
        results.append(CheckResult(name, rep))
    return results


def network_checks(seed: int = 0, modulations=("GSMB", "GFM", "SFT"), modes=("eval", "train"),
                   max_entries: int = 3) -> list[CheckResult]:
    """End-to-end checks of the small config; the input and every learnable tensor are probed."""
    results = []
    for mod in modulations:
        cfg = small_config(mod)
        P = M.init_params(cfg, seed + 1)
        x = np.random.default_rng(seed).random((2, 3, 16, 16))
        names = [k for k in P if M.is_learnable(k)]
        base = P.astype(np.float64)
        for mode in modes:
            def op(v, mode=mode, cfg=cfg, base=base, names=names):
                Q = M.ModelParams(base.copy())
                Q.update({k: v[k] for k in names})
                return M.forward_backward(v["x"], Q, cfg, mode=mode, rng=np.random.default_rng(seed + 5),
                                          update_stats=False)
            inputs = {"x": x, **{k: P[k] for k in names}}
            rep = tc.grad_check(op, inputs, eps=NETWORK_EPS, tolerance=NETWORK_TOLERANCE, seed=seed,
                                max_entries=max_entries)
            results.append(CheckResult(f"network {mod} {mode}", rep))
    return results
