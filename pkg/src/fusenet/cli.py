"""Command-line interface: ``fusenet {train,fuse,eval,metrics,split}``.

Exit codes: 0 success, 2 usage/configuration error, 3 I/O or data error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .dataio import PairManifest, load_pair, make_splits, read_png, save_image, scan_pairs
from .errors import ConfigError, FormatError, ShapeError, ValidationError
from .fusion import DEFAULT_STRATEGY, STRATEGIES
from .losses import LossConfig
from .metrics import compute_all
from .network import load_model
from .pipeline import evaluate_batch, fuse_images, plot_metrics, write_report_csv
from .training import TrainConfig, train

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 2, 3

_TRAIN_KEYS = {f.name: f for f in dataclasses.fields(TrainConfig)}
_LOSS_KEYS = {f.name: f for f in dataclasses.fields(LossConfig)}
CONFIG_KEYS = {"manifest"} | set(_TRAIN_KEYS) | set(_LOSS_KEYS)


class UsageError(Exception):
    pass


def _coerce(key: str, raw: str):
    """Parse an override value as JSON where possible, else keep the string."""
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_overrides(tokens: list[str]) -> dict:
    out = {}
    for tok in tokens:
        if not tok.startswith("--") or "=" not in tok:
            raise UsageError(f"unrecognised argument {tok!r}; overrides must look like --key=value")
        key, raw = tok[2:].split("=", 1)
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise UsageError(f"unknown config key {key!r}; valid keys: {', '.join(sorted(CONFIG_KEYS))}")
        out[key] = _coerce(key, raw)
    return out


def build_run_config(config_path: str | None, overrides: dict) -> tuple[str, TrainConfig, LossConfig]:
    """Merge a JSON config file with overrides into (manifest path, TrainConfig, LossConfig)."""
    cfg: dict = {}
    if config_path:
        try:
            cfg = json.loads(Path(config_path).read_text())
        except FileNotFoundError as exc:
            raise UsageError(f"config file not found: {config_path}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {config_path} is not valid JSON: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config file must contain a JSON object")
        unknown = sorted(set(cfg) - CONFIG_KEYS)
        if unknown:
            raise UsageError(f"unknown config keys {unknown}")
    cfg.update(overrides)
    manifest = cfg.pop("manifest", None)
    if not manifest:
        raise UsageError("no manifest given (set \"manifest\" in the config or pass --manifest=PATH)")
    try:
        tc = TrainConfig(**{k: v for k, v in cfg.items() if k in _TRAIN_KEYS})
        lc = LossConfig(**{k: v for k, v in cfg.items() if k in _LOSS_KEYS})
    except (TypeError, ConfigError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc
    return manifest, tc, lc


def cmd_train(args, extra) -> int:
    manifest_path, tc, lc = build_run_config(args.config, parse_overrides(extra))
    if args.ablate_mse:
        lc = dataclasses.replace(lc, ablate_to_mse=True)
    manifest = PairManifest.load_file(manifest_path)
    result = train(manifest, tc, lc)
    print(f"best epoch {result.best_epoch}; checkpoint {result.checkpoint}")
    return EXIT_OK


def cmd_fuse(args, extra) -> int:
    _no_extra(extra)
    model, _ = load_model(args.model)
    a, b = load_pair(args.input_a, args.input_b)
    fused = fuse_images(model, a, b, args.strategy)
    save_image(fused, args.out)
    return EXIT_OK


def cmd_eval(args, extra) -> int:
    _no_extra(extra)
    manifest = PairManifest.load_file(args.manifest)
    if not manifest.split_entries("test"):
        raise UsageError("the manifest has no test pairs")
    model, _ = load_model(args.model)
    reports, mean = evaluate_batch(manifest, model, args.strategy)
    write_report_csv(reports, args.report, mean)
    if args.plot:
        plot_metrics(mean, args.plot, title=args.strategy)
    return EXIT_OK


def cmd_metrics(args, extra) -> int:
    _no_extra(extra)
    fused = read_png(args.fused)
    a, b = load_pair(args.src_a, args.src_b)
    report = compute_all(fused, a, b)
    print(",".join(repr(float(v)) for v in report.values()))
    return EXIT_OK


def cmd_split(args, extra) -> int:
    _no_extra(extra)
    manifest = make_splits(scan_pairs(args.root, seed=args.seed), args.n_test, args.val_fraction, args.seed)
    manifest.save(args.out)
    counts = {s: len(manifest.ids(s)) for s in ("train", "val", "test")}
    print(json.dumps(counts))
    return EXIT_OK


def _no_extra(extra):
    if extra:
        raise UsageError(f"unrecognised arguments: {' '.join(extra)}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fusenet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train extractor + reconstructor",
                       epilog="Any config key may be overridden with --key=value.")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--ablate-mse", action="store_true", help="train with the MSE term only")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fuse", help="fuse one image pair")
    p.add_argument("--model", required=True)
    p.add_argument("--input-a", required=True)
    p.add_argument("--input-b", required=True)
    p.add_argument("--strategy", default=DEFAULT_STRATEGY, choices=STRATEGIES)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="evaluate the test split of a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--strategy", default=DEFAULT_STRATEGY, choices=STRATEGIES)
    p.add_argument("--report", required=True)
    p.add_argument("--plot")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("metrics", help="print psnr,ssim,fsim,mi,fmi_pixel,entropy for one fused image")
    p.add_argument("--fused", required=True)
    p.add_argument("--src-a", required=True)
    p.add_argument("--src-b", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("split", help="scan <root>/a and <root>/b and write a split manifest")
    p.add_argument("--root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-test", type=int, default=20)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_split)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:  # argparse reports usage errors by exiting with 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args, extra)
    except (UsageError, ConfigError, ValidationError, ShapeError) as exc:
        print(f"fusenet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FormatError) as exc:
        print(f"fusenet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
