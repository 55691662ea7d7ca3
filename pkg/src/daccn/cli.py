"""``daccn`` command line: train, eval, gradcheck, stretch, ablate, config, export."""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from typing import Optional, Sequence

from threadpoolctl import threadpool_limits

from . import checks, config as cfgmod, fileio
from .errors import (CheckpointError, ConfigurationError, DegenerateError, DomainError,
                     GenerationError, NumericError)
from .metrics import MetricsReport, depth_metrics, mean_reports
from .model import forward_macs, load_checkpoint, save_checkpoint
from .synthdata import dataset, split
from .train import evaluate, format_trace, predict_depth, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_GRADCHECK = 4

DESK_SCALE_NOTE = ("desk-scale synthetic reproduction of the experimental methodology; "
                   "values are not comparable with published benchmark numbers")


def _say(msg: str = "") -> None:
    print(msg, flush=True)


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _write(path: str, text: str) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _load_run(args) -> cfgmod.RunConfig:
    run = cfgmod.load(getattr(args, "config", None), getattr(args, "set", None) or ())
    if getattr(args, "out", None):
        run = dataclasses.replace(run, output_dir=args.out)
    return run


def _out_dir(run: cfgmod.RunConfig) -> str:
    try:
        os.makedirs(run.output_dir, exist_ok=True)
    except OSError as exc:
        raise ConfigurationError(f"output directory {run.output_dir!r} not writable: {exc}")
    if not os.access(run.output_dir, os.W_OK):
        raise ConfigurationError(f"output directory {run.output_dir!r} not writable")
    return run.output_dir


def _data(run: cfgmod.RunConfig):
    samples = list(dataset(run.data.scene, run.data.count, run.data.seed))
    return split(samples)


def _metrics_text(report: MetricsReport) -> str:
    return MetricsReport.record_header() + "\n" + report.to_record() + "\n"


def _run_training(run: cfgmod.RunConfig, label: str = ""):
    tr, va = _data(run)
    every = max(1, run.iterations // 10)

    def log(row):
        if row.iteration % every == 0 or row.iteration == run.iterations - 1:
            _progress(f"{label}iter {row.iteration:5d}  L={row.loss:.6f}  "
                      f"L_p={row.photometric:.6f}  L_s={row.smoothness:.6f}")

    return train(run, tr, va, log=log)


# -- commands -----------------------------------------------------------------

def cmd_config(args) -> int:
    _say(cfgmod.dump(_load_run(args)).rstrip("\n"))
    return EXIT_OK


def cmd_train(args) -> int:
    run = _load_run(args)
    out = _out_dir(run)
    _write(os.path.join(out, "config.yaml"), cfgmod.dump(run))
    result = _run_training(run)
    _write(os.path.join(out, "loss_trace.tsv"), format_trace(result.trace))
    save_checkpoint(result.model, os.path.join(out, "checkpoint.npz"))
    _write(os.path.join(out, "metrics.tsv"), _metrics_text(result.report))
    table = result.report.to_table("held-out")
    _write(os.path.join(out, "metrics.txt"), table + "\n")
    if result.trace:
        first, last = result.window_means()
        _say(f"loss (windowed mean): initial {first:.6f}  final {last:.6f}")
    _say(table)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg_path = args.config
    if cfg_path is None and args.checkpoint:
        candidate = os.path.join(os.path.dirname(args.checkpoint), "config.yaml")
        cfg_path = candidate if os.path.exists(candidate) else None
    run = cfgmod.load(cfg_path, args.set or ())
    _, va = _data(run)
    if args.oracle:
        reports = [depth_metrics(s.gt_depth, s.gt_depth, median_scaling=run.median_scaling,
                                 clamp=(run.model.d_min, run.model.d_max),
                                 sq_rel_convention=run.sq_rel_convention) for s in va]
        report, model = mean_reports(reports), None
        label = "oracle (gt as prediction)"
    else:
        if not args.checkpoint:
            raise ConfigurationError("eval needs --checkpoint (or --oracle)")
        model = load_checkpoint(args.checkpoint, expected=run.model)
        report = evaluate(model, va, run.median_scaling, run.sq_rel_convention)
        label = "held-out"
    if args.dump:
        os.makedirs(args.dump, exist_ok=True)
        for i, s in enumerate(va):
            depth = s.gt_depth if model is None else predict_depth(model, s.target[None])[0]
            fileio.write_ppm(os.path.join(args.dump, f"image_{i:03d}.ppm"), s.target)
            fileio.write_pfm(os.path.join(args.dump, f"pred_{i:03d}.pfm"), depth)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write(os.path.join(args.out, "eval_metrics.tsv"), _metrics_text(report))
    _say(report.to_table(label))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cases = list(checks.REGISTRY.values())
    if args.only:
        unknown = set(args.only) - set(checks.REGISTRY)
        if unknown:
            raise ConfigurationError(f"unknown op(s): {sorted(unknown)}")
        cases = [checks.REGISTRY[n] for n in args.only]
    if args.negative_control:
        cases.append(checks.NEGATIVE_CONTROL)
    results = checks.run_all(cases, seed=args.seed)
    _say(checks.format_results(results, timings=args.timings))
    return EXIT_OK if all(r.passed for r in results) else EXIT_GRADCHECK


STRETCH_ROWS = (("original", 1, 1), ("horizontal stretch", 1, 2),
                ("vertical stretch", 2, 1), ("equal stretch", 2, 2))


def stretch_variants(run: cfgmod.RunConfig):
    """(label, RunConfig) for the four input-ratio settings."""
    out = []
    for label, fy, fx in STRETCH_ROWS:
        h, w = run.model.input_h * fy, run.model.input_w * fx
        model = dataclasses.replace(run.model, input_h=h, input_w=w)
        scene = dataclasses.replace(run.data.scene, image_h=h, image_w=w)
        out.append((label, dataclasses.replace(
            run, model=model, data=dataclasses.replace(run.data, scene=scene))))
    return out


def format_stretch(rows) -> str:
    """rows: (label, h, w, abs_rel, rmse, macs)."""
    base = rows[0][5]
    lines = [f"{'setting':<20} | {'input':>9} | {'Abs Rel':>8} | {'RMSE':>8} | "
             f"{'FLOPs-estimate (MACs)':>22} | {'x orig':>6}"]
    lines.append("-" * len(lines[0]))
    for label, h, w, abs_rel, rmse, macs in rows:
        lines.append(f"{label:<20} | {f'{h}x{w}':>9} | {abs_rel:>8.4f} | {rmse:>8.4f} | "
                     f"{macs:>22d} | {macs / base:>6.2f}")
    return "\n".join(lines)


def cmd_stretch(args) -> int:
    run = _load_run(args)
    out = _out_dir(run)
    rows = []
    for label, variant in stretch_variants(run):
        _progress(f"stretch: {label} ({variant.model.input_h}x{variant.model.input_w})")
        result = _run_training(variant, label=f"[{label}] ")
        r = result.report
        rows.append((label, variant.model.input_h, variant.model.input_w, r.abs_rel, r.rmse,
                     forward_macs(variant.model)))
    table = format_stretch(rows)
    lines = [f"# {DESK_SCALE_NOTE}", table]
    by = {r[0]: r for r in rows}
    v_better_h = by["vertical stretch"][3] < by["horizontal stretch"][3]
    lines.append(f"observation (non-blocking): vertical stretch Abs Rel "
                 f"{'<' if v_better_h else '>='} horizontal stretch Abs Rel")
    text = "\n".join(lines)
    _write(os.path.join(out, "stretch.txt"), text + "\n")
    _say(text)
    return EXIT_OK


ABLATION_ROWS = (("neither", False, False), ("DaM", True, False), ("CC", False, True),
                 ("DaM + CC", True, True))


def ablation_variants(run: cfgmod.RunConfig):
    return [(label, dataclasses.replace(
        run, model=dataclasses.replace(run.model, enable_dam=dam, enable_cc=cc)))
        for label, dam, cc in ABLATION_ROWS]


def format_ablation(rows) -> str:
    """rows: (label, dam, cc, abs_rel, rmse, delta1)."""
    lines = [f"{'variant':<10} | {'DaM':^5} | {'CC':^5} | {'Abs Rel':>8} | {'RMSE':>8} | "
             f"{'d<1.25':>7}"]
    lines.append("-" * len(lines[0]))
    for label, dam, cc, abs_rel, rmse, d1 in rows:
        lines.append(f"{label:<10} | {'x' if dam else '':^5} | {'x' if cc else '':^5} | "
                     f"{abs_rel:>8.4f} | {rmse:>8.4f} | {d1:>7.4f}")
    return "\n".join(lines)


def cmd_ablate(args) -> int:
    run = _load_run(args)
    out = _out_dir(run)
    rows, scale_lines = [], []
    for (label, variant), (_, dam, cc) in zip(ablation_variants(run), ABLATION_ROWS):
        _progress(f"ablate: {label}")
        result = _run_training(variant, label=f"[{label}] ")
        r = result.report
        rows.append((label, dam, cc, r.abs_rel, r.rmse, r.delta1))
        if dam:
            scales = result.model.learned_scales()
            for b, (sx, sy) in enumerate(scales):
                scale_lines.append(f"{label}: branch {b} s_x={sx:.6f} s_y={sy:.6f} "
                                   f"(s_y > s_x: {'yes' if sy > sx else 'no'})")
    by = {r[0]: r for r in rows}
    best_single = min(by["DaM"][3], by["CC"][3])
    lines = [f"# {DESK_SCALE_NOTE}", format_ablation(rows), "learned direction scales:"]
    lines += scale_lines
    lines.append(f"observation (non-blocking): DaM + CC Abs Rel "
                 f"{'<=' if by['DaM + CC'][3] <= best_single else '>'} best single-module Abs Rel")
    text = "\n".join(lines)
    _write(os.path.join(out, "ablation.txt"), text + "\n")
    _say(text)
    return EXIT_OK


def cmd_export(args) -> int:
    run = _load_run(args)
    for i, s in enumerate(dataset(run.data.scene, args.count, run.data.seed)):
        for p in fileio.export_sample(s, args.dir, stem=f"scene_{i:03d}"):
            _say(p)
    return EXIT_OK


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="daccn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p, out=True):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key, e.g. --set optimizer.lr=3e-4")
        if out:
            p.add_argument("--out", help="output directory (overrides output_dir)")
        return p

    with_config(sub.add_parser("config", help="print the effective configuration"), out=False)
    with_config(sub.add_parser("train", help="self-supervised training run"))
    p = with_config(sub.add_parser("eval", help="evaluate a checkpoint on the held-out split"))
    p.add_argument("--checkpoint")
    p.add_argument("--oracle", action="store_true", help="use ground truth as the prediction")
    p.add_argument("--dump", help="write PPM images and PFM depth predictions here")
    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--only", nargs="+", metavar="OP")
    p.add_argument("--negative-control", action="store_true",
                   help="add an op with a deliberately wrong backward rule")
    p.add_argument("--timings", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    with_config(sub.add_parser("stretch", help="input-ratio experiment (four settings)"))
    with_config(sub.add_parser("ablate", help="DaM / CC ablation (four variants)"))
    p = with_config(sub.add_parser("export-samples", help="write scenes as PPM + PFM"),
                    out=False)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--dir", required=True)
    return parser


COMMANDS = {"config": cmd_config, "train": cmd_train, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck, "stretch": cmd_stretch, "ablate": cmd_ablate,
            "export-samples": cmd_export}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    with threadpool_limits(limits=1):
        try:
            return COMMANDS[args.command](args)
        except (ConfigurationError, CheckpointError, GenerationError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except (NumericError, DomainError, DegenerateError) as exc:
            print(f"numeric failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
