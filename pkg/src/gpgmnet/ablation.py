"""Ablation grids: expand variant settings, train each under one budget, tabulate.

A grid file uses the run-config syntax.  Keys ``branch_mask``,
``ccp_guided_filter`` and ``modulation`` may hold comma-separated values and
span the grid; every other key is a shared model or training setting::

    branch_mask = ccp_only, ssp_only, both
    ccp_guided_filter = false, true
    modulation = GSMB
    iterations = 400

Variants that differ only in settings with no effect (the guided filter when
the color branch is off, branch settings under SFT) are collapsed, so the
example above yields the five prior-branch variants a..e.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .model import ModelConfig, _parse_bool, init_params, param_count, read_kv_file
from .training import TrainConfig, TrainResult, train

GRID_AXES = ("branch_mask", "ccp_guided_filter", "modulation")

# prior-branch variants by (branch_mask, guided filter), GSMB modulation
BRANCH_LETTERS = {("ccp_only", False): "a", ("ccp_only", True): "b", ("ssp_only", None): "c",
                  ("both", False): "d", ("both", True): "e"}


@dataclass(frozen=True)
class Variant:
    branch_mask: str
    ccp_guided_filter: bool | None
    modulation: str

    @property
    def key(self) -> str:
        gf = {True: "gf", False: "nogf", None: "na"}[self.ccp_guided_filter]
        return f"{self.modulation.lower()}_{self.branch_mask}_{gf}"

    @property
    def label(self) -> str:
        if self.modulation == "SFT":
            return "SFT"
        parts = []
        if self.branch_mask in ("both", "ccp_only"):
            parts.append("CCP (w/ GF)" if self.ccp_guided_filter else "CCP (w/o GF)")
        if self.branch_mask in ("both", "ssp_only"):
            parts.append("SSP")
        return f"{self.modulation}: " + " + ".join(parts)

    @property
    def letter(self) -> str:
        if self.modulation != "GSMB":
            return "-"
        return BRANCH_LETTERS.get((self.branch_mask, self.ccp_guided_filter), "-")

    def model_config(self, base: ModelConfig) -> ModelConfig:
        values = base.to_dict()
        values.update(modulation=self.modulation, branch_mask=self.branch_mask,
                      ccp_guided_filter=bool(self.ccp_guided_filter))
        return ModelConfig(**values)


def canonical(branch_mask: str, gf: bool, modulation: str) -> Variant:
    modulation = modulation.upper()
    branch_mask = branch_mask.lower()
    if modulation == "SFT":
        return Variant("both", None, "SFT")
    return Variant(branch_mask, None if branch_mask == "ssp_only" else bool(gf), modulation)


@dataclass
class Grid:
    variants: list
    model: ModelConfig
    train: TrainConfig


def parse_grid(path) -> Grid:
    values = read_kv_file(path)
    axes = {k: [s.strip() for s in values.pop(k).split(",") if s.strip()] for k in GRID_AXES if k in values}
    defaults = ModelConfig()
    axes.setdefault("branch_mask", [defaults.branch_mask])
    axes.setdefault("ccp_guided_filter", [str(defaults.ccp_guided_filter)])
    axes.setdefault("modulation", [defaults.modulation])
    train_keys = {f.name for f in fields(TrainConfig)}
    model_keys = {f.name for f in fields(ModelConfig)}
    unknown = sorted(set(values) - train_keys - model_keys)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    model = ModelConfig.from_mapping({k: v for k, v in values.items() if k in model_keys})
    tcfg = TrainConfig.from_mapping({k: v for k, v in values.items() if k in train_keys})
    return Grid(expand(axes["branch_mask"], [_parse_bool(v) for v in axes["ccp_guided_filter"]],
                       axes["modulation"]), model, tcfg)


def expand(branch_masks, guided, modulations) -> list[Variant]:
    """Cartesian product in the given order, with equivalent variants collapsed."""
    out = []
    for mod, mask, gf in itertools.product(modulations, branch_masks, guided):
        v = canonical(mask, gf, mod)
        ModelConfig(modulation=v.modulation, branch_mask=v.branch_mask)   # validates names
        if v not in out:
            out.append(v)
    return out


def standard_variants() -> list[Variant]:
    """Prior-branch variants a..e plus the GFM and SFT modulation baselines."""
    return expand(["ccp_only", "ssp_only", "both"], [False, True], ["GSMB"]) + \
        [canonical("both", True, "GFM"), canonical("both", True, "SFT")]


@dataclass
class AblationRow:
    variant: Variant
    params: int
    psnr: float
    bicubic_psnr: float
    final_loss: float

    def cells(self) -> list[str]:
        v = self.variant
        gf = "-" if v.ccp_guided_filter is None else str(v.ccp_guided_filter).lower()
        return [v.letter, v.key, v.label, v.modulation, v.branch_mask, gf, str(self.params),
                f"{self.psnr:.4f}", f"{self.bicubic_psnr:.4f}", f"{self.final_loss:.6e}"]


TABLE_HEADER = ["col", "variant", "description", "modulation", "branch_mask", "guided_filter", "params",
                "heldout_psnr", "bicubic_psnr", "final_loss"]


def tail_loss(result: TrainResult, fraction: float = 0.1) -> float:
    """Mean loss over the last ``fraction`` of iterations (less noisy than the last batch)."""
    losses = [l for _, l in result.losses]
    k = max(1, int(len(losses) * fraction))
    return float(np.mean(losses[-k:]))


def run_ablation(variants, base: ModelConfig, tcfg: TrainConfig, data, out_dir=None, log=None) -> list[AblationRow]:
    """Train every variant with the same seed, budget and data; variants run sequentially."""
    rows = []
    for v in variants:
        cfg = v.model_config(base)
        vdir = None if out_dir is None else Path(out_dir) / v.key
        if log:
            log(f"== {v.key} ({v.label})")
        res = train(cfg, tcfg, data, out_dir=vdir, log=log)
        if not res.evals:
            raise ConfigError("ablation needs a held-out pair (holdout >= 1)")
        ev = res.evals[-1]
        rows.append(AblationRow(v, param_count(init_params(cfg, 0)), ev.psnr, ev.bicubic_psnr, tail_loss(res)))
    if out_dir is not None:
        write_table(rows, Path(out_dir) / "ablation.tsv")
    return rows


def format_table(rows) -> str:
    lines = ["\t".join(TABLE_HEADER)] + ["\t".join(r.cells()) for r in rows]
    return "\n".join(lines) + "\n"


def write_table(rows, path) -> None:
    Path(path).write_text(format_table(rows))


def at_least(a: AblationRow, b: AblationRow) -> bool:
    """``a`` >= ``b`` in held-out PSNR, exact ties broken by lower final loss."""
    if a.psnr != b.psnr:
        return a.psnr > b.psnr
    return a.final_loss <= b.final_loss


def direction_checks(rows) -> list[tuple[str, bool]]:
    """Orderings the ablation is expected to show: dual branch >= single branch, GSMB >= GFM."""
    by_letter = {r.variant.letter: r for r in rows if r.variant.letter != "-"}
    by_mod = {r.variant.modulation: r for r in rows if r.variant.branch_mask == "both"
              and r.variant.ccp_guided_filter in (True, None)}
    claims = []
    for dual, single in (("d", "a"), ("d", "c"), ("e", "b"), ("e", "c")):
        if dual in by_letter and single in by_letter:
            claims.append((f"{dual} >= {single}", at_least(by_letter[dual], by_letter[single])))
    if "GSMB" in by_mod and "GFM" in by_mod:
        claims.append(("GSMB >= GFM", at_least(by_mod["GSMB"], by_mod["GFM"])))
    return claims
