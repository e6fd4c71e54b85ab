"""``bioscatter`` command line.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""
from __future__ import annotations

import argparse
import glob
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .config import PipelineSettings, parse_config
from .dataio import (
    colormap,
    load_checkpoint,
    read_manifest,
    save_checkpoint,
    write_manifest,
    write_pgm,
    write_ppm,
)
from .errors import BioscatterError
from .labels import threshold_mask
from .metrics import check_table, format_report_csv, read_table_csv, relative_improvement
from .pipeline import load_samples, manifest_digests, model_report, render, split_train_val, threshold_report
from .radar import read_sweep
from .synth import MANIFEST_NAME, SceneParams, generate_corpus
from .trainer import finetune, train
from .unet import UNetConfig, UNetModel, build_unet, predict_mask

log = logging.getLogger("bioscatter")

_LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


def _settings(args) -> PipelineSettings:
    settings = PipelineSettings()
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            settings = parse_config(fh.read())
    changes = {}
    if getattr(args, "grid", None) is not None:
        changes["grid"] = args.grid
    if getattr(args, "max_range_m", None) is not None:
        changes["max_range_m"] = args.max_range_m
    if getattr(args, "lo", None) is not None:
        changes["band_lo"] = args.lo
    if getattr(args, "hi", None) is not None:
        changes["band_hi"] = args.hi
    if getattr(args, "threshold", None) is not None:
        changes["predict_threshold"] = args.threshold
    if getattr(args, "seed", None) is not None:
        changes["train"] = replace(settings.train, seed=args.seed)
    return replace(settings, **changes) if changes else settings


def _unet_config(settings) -> UNetConfig:
    return UNetConfig(depth=settings.depth, base_channels=settings.base_channels,
                      padding_mode=settings.padding_mode)


def _sweep_inputs(path):
    """Sweep files named by a manifest, a directory or a single file."""
    if os.path.isdir(path):
        manifest = os.path.join(path, MANIFEST_NAME)
        if os.path.exists(manifest):
            return [s for s, _, _ in read_manifest(manifest)]
        files = sorted(glob.glob(os.path.join(path, "*.rsef")))
        if not files:
            raise BioscatterError(f"no sweeps found in {path}")
        return files
    if path.endswith(".tsv"):
        return [s for s, _, _ in read_manifest(path)]
    return [path]


def _manifest_path(path):
    if os.path.isdir(path):
        return os.path.join(path, MANIFEST_NAME)
    return path


def _stem(path):
    return os.path.splitext(os.path.basename(path))[0]


# -- subcommands ---------------------------------------------------------------

def cmd_synth(args):
    settings = _settings(args)
    params = SceneParams(grid=settings.grid, max_range_m=settings.max_range)
    seed = args.seed if args.seed is not None else 0
    entries = generate_corpus(args.sweeps, params, seed, args.out)
    log.info("wrote %d samples to %s", len(entries), args.out)


def cmd_render(args):
    settings = _settings(args)
    os.makedirs(args.out, exist_ok=True)
    for path in _sweep_inputs(args.inp):
        image = render(read_sweep(path), settings)
        write_pgm(image, os.path.join(args.out, _stem(path) + ".pgm"))
        if args.colormap:
            write_ppm(colormap(image.values, image.valid), os.path.join(args.out, _stem(path) + ".ppm"))


def cmd_label(args):
    settings = _settings(args)
    os.makedirs(args.out, exist_ok=True)
    entries = []
    out_abs = os.path.abspath(args.out)
    for path in _sweep_inputs(args.inp):
        mask = threshold_mask(render(read_sweep(path), settings), settings.band_lo, settings.band_hi)
        name = _stem(path) + "_label.pgm"
        write_pgm(mask, os.path.join(args.out, name))
        entries.append((os.path.relpath(os.path.abspath(path), out_abs), name, 0))
    write_manifest(entries, os.path.join(args.out, MANIFEST_NAME))


def _train_common(args, labels, start=None):
    settings = _settings(args)
    samples = load_samples(_manifest_path(args.data), settings, labels)
    split = split_train_val(samples, settings.val_fraction, settings.train.seed)
    cfg = _unet_config(settings)
    if start is not None:
        ckpt, history = finetune(start, split, settings.train, cfg)
    else:
        model = build_unet(cfg, settings.train.seed)
        ckpt, history = train(model, split, settings.train)
    ckpt.metadata["stage"] = args.command
    save_checkpoint(ckpt, args.out)
    if args.report:
        with open(args.report, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(history.to_csv())
    log.info("%s: best %s after %d epochs", args.command, ckpt.metadata.get("checkpoint_id", "epoch0000"),
             len(history.entries))


def cmd_pretrain(args):
    _train_common(args, "noisy")


def cmd_train(args):
    _train_common(args, "truth")


def cmd_finetune(args):
    if not args.pretrain_manifest and not args.allow_overlap:
        raise UsageError("finetune needs --pretrain-manifest (or --allow-overlap to skip the disjointness check)")
    if args.pretrain_manifest:
        shared = manifest_digests(_manifest_path(args.pretrain_manifest)) & manifest_digests(_manifest_path(args.data))
        if shared and not args.allow_overlap:
            raise BioscatterError(
                f"{len(shared)} sweeps appear in both the pretraining and fine-tuning corpora; "
                "pass --allow-overlap to proceed anyway")
    _train_common(args, "truth", start=load_checkpoint(args.ckpt))


def _named_ckpts(values):
    out = []
    for item in values or []:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = _stem(item), item
        out.append((name, path))
    return out


def cmd_eval(args):
    settings = _settings(args)
    samples = load_samples(_manifest_path(args.data), settings, "truth")
    reports = [threshold_report(samples, settings.band_lo, settings.band_hi, "threshold")]
    for name, path in _named_ckpts(args.ckpt):
        model = UNetModel.from_checkpoint(load_checkpoint(path))
        reports.append(model_report(model, samples, settings.predict_threshold, name))
    text = format_report_csv(reports)
    if args.report:
        with open(args.report, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_predict(args):
    settings = _settings(args)
    if not args.ckpt or len(args.ckpt) != 1:
        raise UsageError("predict needs exactly one --ckpt")
    model = UNetModel.from_checkpoint(load_checkpoint(_named_ckpts(args.ckpt)[0][1]))
    os.makedirs(args.out, exist_ok=True)
    for path in _sweep_inputs(args.inp):
        image = render(read_sweep(path), settings)
        mask = predict_mask(model, image, settings.predict_threshold)
        write_pgm(mask, os.path.join(args.out, _stem(path) + "_pred.pgm"))
        if args.colormap:
            rgb = colormap(image.values, image.valid)
            rgb[mask.bits.astype(bool)] = (255, 255, 0)
            write_ppm(rgb, os.path.join(args.out, _stem(path) + "_pred.ppm"))


def cmd_gradcheck(args):
    from .checks import run_gradchecks

    seed = args.seed if args.seed is not None else 0
    ok = True
    for name, err, bound in run_gradchecks(seed=seed, trials=args.trials):
        passed = err < bound
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name}: max rel err {err:.3e} (bound {bound:.0e})")
    return 0 if ok else 1


def cmd_report(args):
    with open(args.inp, encoding="utf-8") as fh:
        rows = read_table_csv(fh.read())
    ok = True
    lines = []
    for name, implied, gap, passed in check_table(rows, args.tolerance):
        ok &= passed
        lines.append(f"{'PASS' if passed else 'FAIL'} {name}: dice implied by P,R = {implied:.4f}%, gap {gap:.4f} pp")
    by_name = {r[0]: r for r in rows}
    if args.baseline or args.target:
        if args.baseline not in by_name or args.target not in by_name:
            raise BioscatterError("--baseline and --target must both name rows of the table")
        b, t = by_name[args.baseline], by_name[args.target]
        lines.append(f"dice improvement {args.target} vs {args.baseline}: {relative_improvement(t[3], b[3]):.2f}%")
        lines.append(f"recall improvement {args.target} vs {args.baseline}: {relative_improvement(t[2], b[2]):.2f}%")
    text = "\n".join(lines) + "\n"
    if args.report:
        with open(args.report, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return 0 if ok else 1


# -- parser --------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser():
    p = _Parser(prog="bioscatter", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--config", help="key = value settings file")
        sp.add_argument("--seed", type=int)
        return sp

    def grid_flags(sp):
        sp.add_argument("--grid", type=int, help="pixels per image side")
        sp.add_argument("--max-range-m", type=float, dest="max_range_m")

    sp = add("synth", cmd_synth, "generate a synthetic corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--sweeps", type=int, required=True)
    grid_flags(sp)

    sp = add("render", cmd_render, "render sweeps to 16-bit PGM images")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--colormap", action="store_true")
    grid_flags(sp)

    sp = add("label", cmd_label, "band-threshold labels for sweeps")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--lo", type=float)
    sp.add_argument("--hi", type=float)
    grid_flags(sp)

    for name, func, help_ in (
        ("pretrain", cmd_pretrain, "train on band-threshold labels"),
        ("train", cmd_train, "supervised training on clean labels"),
        ("finetune", cmd_finetune, "continue a checkpoint on clean labels"),
    ):
        sp = add(name, func, help_)
        sp.add_argument("--data", required=True, help="manifest or corpus directory")
        sp.add_argument("--out", required=True, help="checkpoint path")
        sp.add_argument("--report", help="history CSV path")
        sp.add_argument("--lo", type=float)
        sp.add_argument("--hi", type=float)
        grid_flags(sp)
        if name == "finetune":
            sp.add_argument("--ckpt", required=True)
            sp.add_argument("--pretrain-manifest", dest="pretrain_manifest")
            sp.add_argument("--allow-overlap", action="store_true", dest="allow_overlap")

    sp = add("eval", cmd_eval, "precision/recall/dice report")
    sp.add_argument("--data", required=True)
    sp.add_argument("--ckpt", action="append", help="[name=]path; repeatable")
    sp.add_argument("--report")
    sp.add_argument("--lo", type=float)
    sp.add_argument("--hi", type=float)
    sp.add_argument("--threshold", type=float)
    grid_flags(sp)

    sp = add("predict", cmd_predict, "predicted masks for sweeps")
    sp.add_argument("--ckpt", action="append", required=True)
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--colormap", action="store_true")
    grid_flags(sp)

    sp = add("gradcheck", cmd_gradcheck, "finite-difference check of every differentiable op")
    sp.add_argument("--trials", type=int, default=5)

    sp = add("report", cmd_report, "consistency checks on a results table")
    sp.add_argument("--in", dest="inp", required=True, help="CSV with model,precision_pct,recall_pct,dice_pct")
    sp.add_argument("--report")
    sp.add_argument("--baseline")
    sp.add_argument("--target")
    sp.add_argument("--tolerance", type=float, default=0.02, help="percentage points")
    return p


def run(argv=None) -> int:
    level = os.environ.get("BIOSCATTER_LOG", "quiet").lower()
    logging.basicConfig(level=_LOG_LEVELS.get(level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = None
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError("bioscatter: a subcommand is required")
        code = args.func(args)
        return int(code or 0)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except (BioscatterError, OSError, ValueError) as exc:
        print(f"bioscatter {getattr(args, 'command', '')}: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
