"""Command line: train a variant on an exported dataset, or run inference.

The config file is a JSON mirror of TrainSpec; flags win over file values.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .predict import predict_files
from .training import TrainSpec, train

__all__ = ["main"]


def _load_spec(path: str | None) -> TrainSpec:
    if path is None:
        return TrainSpec()
    doc = json.loads(Path(path).read_text())
    known = {f.name for f in dataclasses.fields(TrainSpec)}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown TrainSpec key(s): {sorted(unknown)}")
    return TrainSpec(**doc)


def cmd_train(args: argparse.Namespace) -> int:
    spec = _load_spec(args.config)
    overrides = {}
    if args.variant is not None:
        overrides["variant"] = args.variant
    if args.epochs is not None:
        overrides["max_epochs"] = args.epochs
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.crop is not None:
        overrides["crop"] = args.crop
    if args.base_width is not None:
        overrides["base_width"] = args.base_width
    if overrides:
        spec = dataclasses.replace(spec, **overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "train_config.json").write_text(
        json.dumps(dataclasses.asdict(spec), indent=2, sort_keys=True) + "\n"
    )
    ckpt = train(args.data, spec, out)
    print(f"selected epoch {ckpt.epoch} (val L1 {ckpt.val_l1:.6g}) -> {ckpt.path}")
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    inputs = sorted(Path(args.inputs).glob("*_input.json"))
    if not inputs:
        raise ValueError(f"no *_input.json rasters under {args.inputs}")
    written = predict_files(args.checkpoint, inputs, args.out, method_name=args.name)
    print(f"wrote {len(written)} prediction raster(s) to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dixon-imputer",
        description="Conditional-GAN imputation of fat-fraction and R2* maps from two-point channels.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one variant on an exported dataset")
    p.add_argument("--data", required=True, help="exported dataset directory (with split_index.json)")
    p.add_argument("--out", required=True, help="run directory for checkpoints and the curve")
    p.add_argument("--config", help="JSON TrainSpec")
    p.add_argument("--variant", choices=("multi_task", "single_task_pdff", "single_task_r2star"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--crop", type=int)
    p.add_argument("--base-width", type=int, dest="base_width")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="run a checkpoint over input rasters")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--inputs", required=True, help="directory holding *_input rasters")
    p.add_argument("--out", required=True)
    p.add_argument("--name", help="method label used in output filenames (default: variant)")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
