"""``gpgmnet`` command line: data generation, training, inference, evaluation and checks.

Every command prints its fully resolved settings as the first output line.
Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical or check failure.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

from . import ablation, checks, data_io
from . import metrics as mt
from .errors import ConfigError, DataError, NumericalError, ShapeError
from .model import ModelConfig, init_params, param_breakdown, param_count
from .training import color_bar_test, infer_frame, load_run_config, train, write_run_config

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

# Table 1 targets and the accepted bands around them
PARAM_BANDS = {4: (920_000, 740_000, 1_100_000), 2: (770_000, 620_000, 920_000)}


class UsageError(Exception):
    pass


def _echo_config(command: str, settings: dict) -> None:
    print("config\t" + json.dumps({"command": command, **settings}, sort_keys=True, default=str))


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(t) for t in text.lower().split("x"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"size must look like WxH, got {text!r}") from exc
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("size must be positive")
    return w, h


def _model_config_for(weights: Path, config: str | None) -> ModelConfig:
    """Explicit --config, else ``config.txt`` beside the weights, else defaults."""
    path = Path(config) if config else weights.parent / "config.txt"
    if path.is_file():
        return load_run_config(path)[0]
    if config:
        raise UsageError(f"config file {config} not found")
    return ModelConfig()


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} {p} not found")
    return p


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    w, h = args.size
    _echo_config("gen-data", dict(out=args.out, scenes=args.scenes, size=f"{w}x{h}", scale=args.scale,
                                  seed=args.seed, patch_lr=args.patch_lr))
    if args.scenes < 0:
        raise UsageError("--scenes must be >= 0")
    path = data_io.generate_dataset(args.out, args.scenes, w, h, args.scale, args.seed, args.patch_lr)
    print(f"wrote {args.scenes} pairs, manifest {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg_path = _require_file(args.config, "config")
    manifest_path = _require_file(args.data, "manifest")
    model_cfg, train_cfg = load_run_config(cfg_path)
    if args.iterations is not None:
        train_cfg.iterations = args.iterations
    _echo_config("train", dict(model=model_cfg.to_dict(), train=asdict(train_cfg), data=str(manifest_path),
                               out=args.out, resume=args.resume))
    manifest = data_io.read_manifest(manifest_path)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_run_config(model_cfg, train_cfg, out / "config.txt")
    result = train(model_cfg, train_cfg, manifest, out_dir=out, resume=args.resume, log=print)
    if result.losses:
        first, last = result.losses[0][1], result.losses[-1][1]
        print(f"loss first {first:.6e} last {last:.6e} ratio {first / last:.2f}")
    return EXIT_OK


def cmd_infer(args) -> int:
    weights = _require_file(args.weights, "weights")
    src = _require_file(args.inp, "input")
    cfg = _model_config_for(weights, args.config)
    _echo_config("infer", dict(model=cfg.to_dict(), weights=str(weights), input=str(src), output=args.out))
    params = data_io.load_weights(weights, cfg)
    frames = data_io.read_yuv_frames(src)
    outs = []
    start = time.perf_counter()
    for f in frames:
        outs.append(infer_frame(f, params, cfg))
    elapsed = time.perf_counter() - start
    data_io.write_yuv(outs, args.out)
    o = outs[0]
    print(f"{len(outs)} frame(s) {frames[0].width}x{frames[0].height} -> {o.width}x{o.height} "
          f"in {elapsed:.3f} s ({elapsed / len(outs):.3f} s/frame)")
    return EXIT_OK


EVAL_METRICS = ("psnr", "psnr-planes", "ssim", "ms-ssim", "mpsnr", "lab-mse", "lab-mse-l")


def _eval_reports(pred: data_io.Frame, ref: data_io.Frame, names) -> list[mt.MetricReport]:
    p, r = data_io.to_yuv444(pred).pixels, data_io.to_yuv444(ref).pixels
    gamut = data_io.Gamut(ref.gamut)
    reports = []
    for name in names:
        if name == "psnr":
            reports.append(mt.MetricReport("psnr", mt.psnr(p, r), "YUV", {"peak": 1.0, "planes": "joint"}))
        elif name == "psnr-planes":
            for plane, v in zip("YUV", mt.psnr_per_plane(p, r)):
                reports.append(mt.MetricReport(f"psnr-{plane}", v, "YUV", {"peak": 1.0}))
        elif name == "ssim":
            reports.append(mt.MetricReport("ssim", mt.ssim(p, r), "YUV",
                                           {"plane": "Y", "window": 11, "sigma": 1.5, "k1": 0.01, "k2": 0.03}))
        elif name == "ms-ssim":
            scales = mt.ms_ssim_scales(*p.shape[2:])
            reports.append(mt.MetricReport("ms-ssim", mt.ms_ssim(p, r), "YUV", {"plane": "Y", "scales": scales}))
        elif name == "mpsnr":
            reports.append(mt.MetricReport("mpsnr", mt.mpsnr(data_io.frame_to_linear(pred),
                                                             data_io.frame_to_linear(ref)),
                                           "YUV", {"stops": list(mt.MPSNR_STOPS), "gamma": 2.2, "white_nits": 100}))
        elif name in ("lab-mse", "lab-mse-l"):
            mode = "LAB" if name == "lab-mse" else "L_ONLY"
            value = mt.lab_mse(data_io.frame_to_linear(pred), data_io.frame_to_linear(ref), mode, gamut)
            reports.append(mt.MetricReport(name, value, mode, {"gamut": gamut.value, "white_nits": 100}))
    return reports


def cmd_eval(args) -> int:
    names = [m.strip().lower() for m in args.metrics.split(",") if m.strip()]
    unknown = [m for m in names if m not in EVAL_METRICS]
    if unknown:
        raise UsageError(f"unknown metrics {unknown}; choose from {', '.join(EVAL_METRICS)}")
    _echo_config("eval", dict(pred=args.pred, ref=args.ref, metrics=names, report=args.report, hist=args.hist))
    pred = data_io.read_yuv(_require_file(args.pred, "prediction"))
    ref = data_io.read_yuv(_require_file(args.ref, "reference"))
    if (pred.width, pred.height) != (ref.width, ref.height):
        raise ShapeError(f"prediction {pred.width}x{pred.height} vs reference {ref.width}x{ref.height}")
    reports = _eval_reports(pred, ref, names)
    for rep in reports:
        print(rep.line())
    if args.report:
        mt.write_report(reports, args.report)
    if args.hist:
        hp = mt.color_histogram(data_io.to_yuv444(pred).pixels)
        hr = mt.color_histogram(data_io.to_yuv444(ref).pixels)
        norm = mt.normalize_histogram(hp, hr)
        lines = ["bin\t" + "\t".join(f"{w}_{c}" for w in ("pred", "ref", "norm") for c in "YUV")]
        for b in range(hp.shape[1]):
            cells = [str(int(v)) for v in hp[:, b]] + [str(int(v)) for v in hr[:, b]] + [f"{v:.6f}" for v in norm[:, b]]
            lines.append(f"{b}\t" + "\t".join(cells))
        Path(args.hist).write_text("\n".join(lines) + "\n")
        print(f"histogram\t{args.hist}\tcounts_per_channel={int(hp[0].sum())}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    _echo_config("grad-check", dict(seed=args.seed, layer_tolerance=checks.LAYER_TOLERANCE,
                                    network_tolerance=checks.NETWORK_TOLERANCE,
                                    small_config=checks.small_config().to_dict()))
    results = checks.layer_checks(args.seed) + checks.network_checks(args.seed)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} passed")
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_param_count(args) -> int:
    if args.config:
        configs = [load_run_config(_require_file(args.config, "config"))[0]]
    else:
        configs = [ModelConfig(scale=4), ModelConfig(scale=2)]
    _echo_config("param-count", dict(models=[c.to_dict() for c in configs]))
    ok = True
    for cfg in configs:
        params = init_params(cfg, 0)
        total = param_count(params)
        print(f"scale x{cfg.scale}: total {total} ({total / 1e6:.3f}M)")
        for group, n in param_breakdown(params).items():
            print(f"  {group}\t{n}")
        target, lo, hi = PARAM_BANDS[cfg.scale]
        inside = lo <= total <= hi
        ok &= inside or args.config is not None
        print(f"  target {target / 1e6:.2f}M band [{lo / 1e6:.2f}M, {hi / 1e6:.2f}M]: {'PASS' if inside else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_color_bar(args) -> int:
    weights = _require_file(args.weights, "weights")
    cfg = _model_config_for(weights, args.config)
    w, h = args.size
    _echo_config("color-bar", dict(model=cfg.to_dict(), weights=str(weights), out=args.out, size=f"{w}x{h}"))
    params = data_io.load_weights(weights, cfg)
    res = color_bar_test(params, cfg, w, h)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_io.write_ppm16(data_io.frame_to_display_rgb(res.input), out / "input.ppm")
    data_io.write_ppm16(data_io.frame_to_display_rgb(res.output), out / "output.ppm")
    data_io.write_ppm16(data_io.frame_to_display_rgb(res.reference), out / "reference.ppm")
    lines = ["bar\toutput_score\treference_score\tratio"]
    for name, so, sr in res.bars:
        lines.append(f"{name}\t{so:.6e}\t{sr:.6e}\t{so / sr if sr > 0 else float('inf'):.4f}")
    lines.append(f"mean\t{res.output_score:.6e}\t{res.reference_score:.6e}\t"
                 f"{res.output_score / res.reference_score:.4f}")
    text = "\n".join(lines) + "\n"
    (out / "scores.tsv").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_ablate(args) -> int:
    grid = ablation.parse_grid(_require_file(args.grid, "grid"))
    manifest_path = _require_file(args.data, "manifest")
    _echo_config("ablate", dict(model=grid.model.to_dict(), train=asdict(grid.train), data=str(manifest_path),
                                variants=[v.key for v in grid.variants], out=args.out))
    manifest = data_io.read_manifest(manifest_path)
    pairs = manifest.load_pairs()
    rows = ablation.run_ablation(grid.variants, grid.model, grid.train, pairs, out_dir=args.out)
    print(ablation.format_table(rows), end="")
    for claim, ok in ablation.direction_checks(rows):
        print(f"check\t{claim}\t{'PASS' if ok else 'FAIL'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gpgmnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write synthetic LR-SDR / HR-HDR pairs and a manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--size", type=_parse_size, required=True, help="HR size WxH")
    p.add_argument("--scale", type=int, choices=(2, 4), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patch-lr", type=int, choices=(40, 80), default=40)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train from a key=value config on a manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint directory to continue from")
    p.add_argument("--iterations", type=int, help="override the configured iteration count")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="upscale + inverse tone map a YUV file")
    p.add_argument("--weights", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="model config (default: config.txt beside the weights)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="compare a prediction with a reference")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--metrics", default="psnr,ssim,ms-ssim", help=f"comma list of {', '.join(EVAL_METRICS)}")
    p.add_argument("--report", help="machine-readable JSON report path")
    p.add_argument("--hist", help="write 128-bin per-channel histograms (TSV)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grad-check", help="finite-difference checks of every layer and the network")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("param-count", help="parameter totals with per-module breakdown")
    p.add_argument("--config")
    p.set_defaults(func=cmd_param_count)

    p = sub.add_parser("color-bar", help="color transition test with 16-bit PPM dumps")
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--size", type=_parse_size, default=(96, 56), help="LR color-bar size WxH")
    p.set_defaults(func=cmd_color_bar)

    p = sub.add_parser("ablate", help="train a grid of variants and tabulate held-out PSNR")
    p.add_argument("--grid", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ShapeError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
