"""Command-line front end.

One executable, subcommand per task: dataset synthesis, training,
evaluation, inference, checkpoint ensembling, gradient self-check, and
checkpoint inspection.  Settings come from an INI config file plus
flags; flags win.  Every run writes a key-value manifest on the way
out, success or failure.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import datetime
import os
import sys
from dataclasses import fields

import numpy as np

from . import __version__
from .checkpoint import config_digest, read_container
from .data import (NormStats, load_dataset, load_raw_png, save_rgb_png,
                   synthesize_samples, write_dataset)
from .gradcheck import format_table, run_suite
from .isp import SyntheticISPParams, bilinear_demosaic
from .losses import LossConfig, load_feature_extractor, random_feature_extractor
from .model import ModelConfig, tiny_config
from .train import (TrainConfig, ensemble_evaluate, evaluate, load_checkpoint,
                    predict_display, train)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems with exit code 1, not 2."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(parser):
    parser.add_argument("--workdir", default=".", help="base directory for relative paths")
    parser.add_argument("--config", default=None, help="INI config file")
    parser.add_argument("--manifest", default="run-manifest.txt",
                        help="run manifest path (relative to workdir)")


def build_parser() -> _Parser:
    parser = _Parser(prog="rawtorgb", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="command",
                                parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic raw/RGB dataset")
    _common(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-sigma", type=float, default=0.01)
    p.add_argument("--max-shift", type=float, default=0.0, help="misalignment, px")
    p.add_argument("--max-rotate", type=float, default=0.0, help="misalignment, degrees")

    p = sub.add_parser("train", help="train a two-stage model")
    _common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", default=None, help="'start:stop' over pair indices")
    p.add_argument("--out-dir", default="run", help="checkpoint output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--stage1-epochs", type=int, default=None)
    p.add_argument("--stage2-epochs", type=int, default=None)
    p.add_argument("--stage1-steps", type=int, default=None)
    p.add_argument("--stage2-steps", type=int, default=None)
    p.add_argument("--lr", type=float, default=None, dest="lr_initial")
    p.add_argument("--lr-final", type=float, default=None)
    p.add_argument("--loss", default=None,
                   help="comma list from pixel,feat,color (default pixel)")
    p.add_argument("--tap", default=None, choices=["relu4_1", "relu5_1"])
    p.add_argument("--feature-extractor", default=None,
                   help="extractor container path; omit for a seeded random one")
    p.add_argument("--tiny", action="store_true", help="depth-2, 8-channel preset")
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--base-channels", type=int, default=None)

    p = sub.add_parser("eval", help="score a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--report", default=None, help="write the report here as well")
    p.add_argument("--stage", default="both", choices=["1", "both"])
    p.add_argument("--save-images", default=None,
                   help="directory for input|prediction|target triptych PNGs")

    p = sub.add_parser("infer", help="raw PNG in, RGB PNG out")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--raw", required=True, help="input mosaic PNG")
    p.add_argument("--out", required=True, help="output RGB PNG")
    p.add_argument("--stage", default="both", choices=["1", "both"])

    p = sub.add_parser("ensemble",
                       help="average the outputs of several checkpoints")
    _common(p)
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--report", default=None)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of every op and loss")
    _common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dtype", default="float32", choices=["float32", "float64"])

    p = sub.add_parser("inspect",
                       help="dump a checkpoint's manifest and metadata")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    return parser


def _resolve(args, path):
    if path is None or os.path.isabs(path):
        return path
    return os.path.join(args.workdir, path)


def _read_config(args) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if args.config:
        path = _resolve(args, args.config)
        if not os.path.isfile(path):
            raise FileNotFoundError(f"config file not found: {path}")
        cp.read(path)
    return cp


def _apply_section(obj, section) -> None:
    """Overlay an INI section onto a dataclass, coercing by field type."""
    by_name = {f.name: f for f in fields(obj)}
    for key, value in section.items():
        name = key.replace("-", "_")
        if name not in by_name:
            raise UsageError(f"unknown config key {key!r} in [{section.name}]")
        current = getattr(obj, name)
        if isinstance(current, bool):
            setattr(obj, name, value.strip().lower() in ("1", "true", "yes", "on"))
        elif isinstance(current, int):
            setattr(obj, name, int(value))
        elif isinstance(current, float):
            setattr(obj, name, float(value))
        elif current is None and name.endswith("steps"):
            setattr(obj, name, int(value))
        else:
            setattr(obj, name, value)


def _loss_config(args, cp) -> LossConfig:
    loss_cfg = LossConfig()
    if cp.has_section("loss"):
        _apply_section(loss_cfg, cp["loss"])
    if args.loss is not None:
        parts = {s.strip() for s in args.loss.split(",") if s.strip()}
        unknown = parts - {"pixel", "feat", "color"}
        if unknown:
            raise UsageError(f"unknown loss terms: {sorted(unknown)}")
        loss_cfg.use_pixel = "pixel" in parts
        loss_cfg.use_feat = "feat" in parts
        loss_cfg.use_color = "color" in parts
    if args.tap is not None:
        loss_cfg.feat_tap = args.tap
    loss_cfg.validate()
    return loss_cfg


def _model_config(args, cp) -> ModelConfig:
    model_cfg = tiny_config() if args.tiny else ModelConfig()
    if cp.has_section("model"):
        _apply_section(model_cfg, cp["model"])
    if args.depth is not None:
        model_cfg.depth = args.depth
    if args.base_channels is not None:
        model_cfg.base_channels = args.base_channels
    model_cfg.validate()
    return model_cfg


def _train_config(args, cp, loss_cfg) -> TrainConfig:
    train_cfg = TrainConfig(loss=loss_cfg)
    if cp.has_section("train"):
        _apply_section(train_cfg, cp["train"])
    for name in ("seed", "batch_size", "stage1_epochs", "stage2_epochs",
                 "stage1_steps", "stage2_steps", "lr_initial", "lr_final"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(train_cfg, name, value)
    train_cfg.validate()
    return train_cfg


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args, cp, artifacts) -> int:
    out = _resolve(args, args.out)
    params = SyntheticISPParams(noise_sigma=args.noise_sigma)
    samples = synthesize_samples(args.count, args.seed, size=args.size,
                                 params=params, max_shift=args.max_shift,
                                 max_rotate=args.max_rotate)
    write_dataset(samples, out, manifest_extra={
        "seed": args.seed, "size": args.size, "noise_sigma": args.noise_sigma,
        "max_shift": args.max_shift, "max_rotate": args.max_rotate,
    })
    artifacts.append(out)
    print(f"wrote {len(samples)} pairs to {out}")
    return 0


def cmd_train(args, cp, artifacts) -> int:
    loss_cfg = _loss_config(args, cp)
    model_cfg = _model_config(args, cp)
    train_cfg = _train_config(args, cp, loss_cfg)

    fx = None
    if loss_cfg.use_feat:
        if args.feature_extractor:
            fx = load_feature_extractor(_resolve(args, args.feature_extractor),
                                        tap=loss_cfg.feat_tap)
        else:
            fx = random_feature_extractor(seed=7, width_scale=0.25, tap=loss_cfg.feat_tap)
            print("note: no --feature-extractor given; using a seeded random one")

    samples = load_dataset(_resolve(args, args.data), args.split)
    out_dir = _resolve(args, args.out_dir)

    def log(record):
        parts = " ".join(f"{k}={record[k]:.6g}" for k in sorted(record)
                         if k not in ("phase", "epoch"))
        print(f"phase {record['phase']} epoch {record['epoch']}: {parts}")

    result = train(samples, model_cfg, train_cfg, fx=fx, out_dir=out_dir, log=log)
    artifacts.append(result.checkpoint_path)
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def _load_bundle(args, path):
    bundle = load_checkpoint(_resolve(args, path))
    if bundle.stats is None:
        raise ValueError(f"{path}: checkpoint has no normalization stats")
    return bundle


def cmd_eval(args, cp, artifacts) -> int:
    bundle = _load_bundle(args, args.checkpoint)
    samples = load_dataset(_resolve(args, args.data), args.split)
    report = evaluate(bundle.model, samples, bundle.stats, stage=args.stage)
    text = report.to_text()
    print(text, end="")
    if args.report:
        path = _resolve(args, args.report)
        with open(path, "w") as f:
            f.write(text)
        artifacts.append(path)
    if args.save_images:
        img_dir = _resolve(args, args.save_images)
        os.makedirs(img_dir, exist_ok=True)
        for i, s in enumerate(samples):
            pred = predict_display(bundle.model, s.raw[None], bundle.stats,
                                   stage=args.stage)[0]
            preview = np.clip(bilinear_demosaic(s.raw[0].astype(np.float64)),
                              0.0, 1.0) ** (1.0 / 2.2)
            gap = np.ones((3, s.raw.shape[1], 2))
            trip = np.concatenate([preview, gap, pred, gap,
                                   s.target_rgb.astype(np.float64)], axis=2)
            save_rgb_png(os.path.join(img_dir, f"{i:05d}.png"), trip)
        artifacts.append(img_dir)
    return 0


def cmd_infer(args, cp, artifacts) -> int:
    bundle = _load_bundle(args, args.checkpoint)
    raw = load_raw_png(_resolve(args, args.raw))
    divisor = 2 ** bundle.model.config.depth
    if raw.shape[1] % divisor or raw.shape[2] % divisor:
        raise ValueError(
            f"input {raw.shape[1]}x{raw.shape[2]} not divisible by {divisor} "
            f"(model depth {bundle.model.config.depth})")
    pred = predict_display(bundle.model, raw[None], bundle.stats, stage=args.stage)[0]
    out = _resolve(args, args.out)
    save_rgb_png(out, pred)
    artifacts.append(out)
    print(f"wrote {out}")
    return 0


def cmd_ensemble(args, cp, artifacts) -> int:
    bundles = [_load_bundle(args, p) for p in args.checkpoints]
    samples = load_dataset(_resolve(args, args.data), args.split)
    report = ensemble_evaluate([(b.model, b.stats) for b in bundles], samples)
    text = report.to_text()
    print(text, end="")
    if args.report:
        path = _resolve(args, args.report)
        with open(path, "w") as f:
            f.write(text)
        artifacts.append(path)
    return 0


def cmd_gradcheck(args, cp, artifacts) -> int:
    dtype = np.float32 if args.dtype == "float32" else np.float64
    results = run_suite(seed=args.seed, dtype=dtype)
    print(format_table(results))
    return 0 if all(r.passed for r in results) else 2


def cmd_inspect(args, cp, artifacts) -> int:
    container = read_container(_resolve(args, args.checkpoint))
    print(f"tensors: {len(container.tensors)}")
    for name in sorted(container.tensors):
        arr = container.tensors[name]
        print(f"  {name}\t{arr.dtype}\t{tuple(arr.shape)}\t{arr.nbytes} bytes")
    print("metadata:")
    for k in sorted(container.metadata):
        print(f"  {k} = {container.metadata[k]}")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "ensemble": cmd_ensemble,
    "gradcheck": cmd_gradcheck,
    "inspect": cmd_inspect,
}


def _write_manifest(args, argv, status, exit_code, artifacts) -> None:
    try:
        path = _resolve(args, args.manifest)
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        digest = config_digest({k: repr(v) for k, v in sorted(vars(args).items())
                                if k != "manifest"})
        lines = [
            f"command = rawtorgb {' '.join(argv)}",
            f"config_digest = {digest}",
            f"seed = {getattr(args, 'seed', None)}",
            f"version = {__version__}",
            f"started = {_write_manifest.started}",
            f"finished = {datetime.datetime.now(datetime.timezone.utc).isoformat()}",
            f"status = {status}",
            f"exit_code = {exit_code}",
            f"artifacts = {', '.join(str(a) for a in artifacts)}",
        ]
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")
    except OSError as e:
        print(f"warning: could not write run manifest: {e}", file=sys.stderr)


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    if args.command is None:
        parser.print_help()
        return 1

    _write_manifest.started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    artifacts: list = []
    try:
        cp = _read_config(args)
        code = _COMMANDS[args.command](args, cp, artifacts)
        _write_manifest(args, argv, "ok" if code == 0 else "failed", code, artifacts)
        return code
    except UsageError as e:
        _write_manifest(args, argv, "usage-error", 1, artifacts)
        print(str(e), file=sys.stderr)
        return 1
    except Exception as e:
        _write_manifest(args, argv, "error", 2, artifacts)
        print(f"error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
