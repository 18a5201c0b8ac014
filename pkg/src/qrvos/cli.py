"""Command-line entry point: gen-data, train, eval, infer, visualize, grad-check."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import typing
from dataclasses import fields
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import engine
from .config import RunConfig
from .data import VOCAB, SynthConfig, generate_dataset, read_dataset, write_dataset, write_pnm
from .errors import ConfigError, DataError, QrvosError
from .metrics import report_csv, report_table

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    """One flag per RunConfig field; booleans also get a --no-<name> form."""
    hints = typing.get_type_hints(RunConfig)
    g = p.add_argument_group("run configuration (override the --config file)")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        kind = hints[f.name]
        if kind is bool:
            g.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=argparse.SUPPRESS)
        else:
            g.add_argument(flag, dest=f.name, default=argparse.SUPPRESS, metavar=f.name.upper(),
                           help=f"default {getattr(RunConfig(), f.name)!r}")


def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    for f in fields(RunConfig):
        if hasattr(args, f.name):
            v = getattr(args, f.name)
            overrides[f.name] = ("true" if v else "false") if isinstance(v, bool) else str(v)
    return cfg.with_strings(overrides)


def _pick(samples, index: int):
    if not 0 <= index < len(samples):
        raise DataError(f"sample index {index} out of range (dataset has {len(samples)})")
    return samples[index]


# ------------------------------------------------------------------ verbs
def cmd_gen_data(args) -> int:
    cfg = SynthConfig(T=args.frames, H=args.size, W=args.size, n_objects=args.objects,
                      minimal_expression=args.minimal).validate()
    samples = generate_dataset(args.num, args.seed, cfg, workers=args.workers)
    write_dataset(samples, args.out, cfg)
    print(f"wrote {len(samples)} clips to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    samples = read_dataset(cfg.data_dir)
    if not samples:
        raise DataError(f"no samples in {cfg.data_dir}")
    out = Path(cfg.out_dir)
    print(f"training on {len(samples)} clips -> {out} (vl_fusion={cfg.vl_fusion}, rel_coords={cfg.rel_coords})")
    result = engine.train(cfg, samples, out_dir=out)
    from .plotting import plot_loss_curves

    if result.history:
        plot_loss_curves(result.history, out / "loss.png")
    print(f"{result.steps} steps in {result.seconds:.0f}s; checkpoint {result.checkpoint}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = engine.load_model(args.run)
    samples = read_dataset(args.data)
    result = engine.evaluate(model, samples)
    report = result["report"]
    out = Path(args.out or Path(args.run) / "eval")
    out.mkdir(parents=True, exist_ok=True)
    text = report_csv(report, engine.EVAL_COLUMNS)
    (out / "report.csv").write_text(text)
    table = report_table(report, engine.EVAL_COLUMNS)
    (out / "report.txt").write_text(table)
    with open(out / "samples.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(result["samples"][0]), lineterminator="\n")
        w.writeheader()
        w.writerows(result["samples"])
    from .plotting import plot_report

    plot_report(report, out / "metrics.png", title=str(args.data))
    print(table, end="")
    print(text, end="")
    return EXIT_OK


def cmd_infer(args) -> int:
    model = engine.load_model(args.run)
    sample = _pick(read_dataset(args.data), args.index)
    tokens = VOCAB.encode(args.expression) if args.expression else sample.tokens
    res = engine.infer(model, sample.frames, tokens)
    summary = {
        "selected": res.selected,
        "mean_probs": [round(float(p), 6) for p in res.probs.mean(axis=0)],
        "boxes": [[round(float(v), 6) for v in b] for b in res.boxes],
        "mask_area": [int(m.sum()) for m in res.masks],
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for t, m in enumerate(res.masks):
            write_pnm(out / f"pred_mask_{t:02d}.pgm", m.astype(np.uint8) * 255)
        (out / "inference.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary))
    return EXIT_OK


def cmd_visualize(args) -> int:
    model = engine.load_model(args.run)
    sample = _pick(read_dataset(args.data), args.index)
    paths = engine.visualize(model, sample, args.out)
    print(f"wrote {len(paths)} overlays to {args.out}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from .diagnostics import micro_gradcheck

    errors = micro_gradcheck(seed=args.seed, entries=args.entries)
    worst = max(errors.values())
    for name, err in sorted(errors.items(), key=lambda kv: -kv[1])[: args.show]:
        print(f"{err:.3e}  {name}")
    ok = worst < args.tol
    print(f"{'PASS' if ok else 'FAIL'}: worst error {worst:.3e} over {len(errors)} checks (tolerance {args.tol:g})")
    return EXIT_OK if ok else EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qrvos", description="Referring video object segmentation on synthetic clips.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render a synthetic dataset to disk")
    g.add_argument("--out", required=True)
    g.add_argument("--num", type=int, default=16)
    g.add_argument("--seed", type=int, default=0, help="seed of the first clip; clip i uses seed+i")
    g.add_argument("--objects", type=int, default=2)
    g.add_argument("--frames", type=int, default=5)
    g.add_argument("--size", type=int, default=96)
    g.add_argument("--minimal", action="store_true", help="shortest unambiguous expressions")
    g.add_argument("--workers", type=int, default=1)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help="key = value file; flags below override it")
    _add_run_flags(t)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a run on a dataset; writes CSV, table and figure")
    e.add_argument("--run", required=True, help="run directory holding checkpoint.qrv and config.txt")
    e.add_argument("--data", required=True)
    e.add_argument("--out", help="report directory (default <run>/eval)")
    e.set_defaults(fn=cmd_eval)

    i = sub.add_parser("infer", help="segment one clip")
    i.add_argument("--run", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--index", type=int, default=0)
    i.add_argument("--expression", help="replace the clip's own expression")
    i.add_argument("--out", help="directory for predicted masks")
    i.set_defaults(fn=cmd_infer)

    v = sub.add_parser("visualize", help="write mask/box overlays for one clip")
    v.add_argument("--run", required=True)
    v.add_argument("--data", required=True)
    v.add_argument("--index", type=int, default=0)
    v.add_argument("--out", required=True)
    v.set_defaults(fn=cmd_visualize)

    c = sub.add_parser("grad-check", help="finite-difference check of the full loss on a micro model")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--entries", type=int, default=3)
    c.add_argument("--tol", type=float, default=1e-4)
    c.add_argument("--show", type=int, default=10)
    c.set_defaults(fn=cmd_grad_check)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (QrvosError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
