"""Command-line entry point: phantom, fit, eval, export-ml, pipeline.

Every run writes its fully resolved configuration next to its outputs so any
result can be reproduced byte-for-byte from the recorded seed and settings.
Config files are JSON mirrors of the dataclass settings; command-line flags
win over config-file values.  Exit codes: 0 success, 2 usage or config
error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import metrics, pipeline as pl
from .estimators import fit_map
from .phantom import PhantomConfig, generate_phantom, render_acquisitions
from .raster import read_raster, write_raster

__all__ = ["main"]

OUT_ROOT_ENV = "DIXONKIT_OUT"

USAGE_ERROR = 2
RUNTIME_ERROR = 1


class UsageError(ValueError):
    """Bad flags or config contents; maps to exit code 2."""


def _load_run_config(path: str | None) -> tuple[PhantomConfig, pl.PipelineConfig]:
    """Config file layout: {"phantom": {...}, "pipeline": {...}}."""
    phantom_cfg = PhantomConfig()
    pipeline_cfg = pl.PipelineConfig()
    if path is None:
        return phantom_cfg, pipeline_cfg
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"malformed config {path}: {e}") from None
    unknown = set(doc) - {"phantom", "pipeline"}
    if unknown:
        raise UsageError(f"unknown config section(s): {sorted(unknown)}")
    try:
        if "phantom" in doc:
            phantom_cfg = pl.dataclass_from_dict(PhantomConfig, doc["phantom"])
        if "pipeline" in doc:
            pipeline_cfg = pl.dataclass_from_dict(pl.PipelineConfig, doc["pipeline"])
    except (ValueError, TypeError) as e:
        raise UsageError(str(e)) from None
    return phantom_cfg, pipeline_cfg


def _resolve_out(arg_out: str | None, subcommand: str) -> Path:
    if arg_out:
        return Path(arg_out)
    root = os.environ.get(OUT_ROOT_ENV)
    if root:
        return Path(root) / subcommand
    raise UsageError(f"--out is required (or set {OUT_ROOT_ENV})")


def _write_run_config(
    out: Path, command: str, phantom_cfg: PhantomConfig, pipeline_cfg: pl.PipelineConfig, extra: dict
) -> None:
    doc = {
        "command": command,
        "phantom": dataclasses.asdict(phantom_cfg),
        "pipeline": dataclasses.asdict(pipeline_cfg),
        **extra,
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.json").write_text(pl.canonical_json(doc))


def cmd_phantom(args: argparse.Namespace) -> int:
    if args.n < 1:
        raise UsageError(f"-n must be >= 1, got {args.n}")
    phantom_cfg, pipeline_cfg = _load_run_config(args.config)
    if args.seed is not None:
        pipeline_cfg = replace(pipeline_cfg, seed=args.seed)
    if args.sigma is not None:
        phantom_cfg = replace(phantom_cfg, noise_sigma=args.sigma)
    out = _resolve_out(args.out, "phantom")
    out.mkdir(parents=True, exist_ok=True)

    spectrum = pipeline_cfg.spectrum()
    subjects = []
    for i in range(args.n):
        sid = f"S{i:04d}"
        cfg_i = replace(phantom_cfg, rng_seed=pl.subject_seed(pipeline_cfg.seed, i, 0))
        ph = generate_phantom(cfg_i)
        dixon, ideal = render_acquisitions(
            ph,
            spectrum,
            pipeline_cfg.dixon_schedule(),
            pipeline_cfg.ideal_schedule(),
            phantom_cfg.noise_sigma,
            pl.subject_seed(pipeline_cfg.seed, i, 1),
        )
        write_raster(ph.to_raster(), out / f"{sid}_phantom")
        write_raster(dixon, out / f"{sid}_dixon")
        write_raster(ideal, out / f"{sid}_echoes")
        subjects.append(
            {"subject_id": sid, "phantom": f"{sid}_phantom", "dixon": f"{sid}_dixon", "echoes": f"{sid}_echoes"}
        )
    _write_run_config(out, "phantom", phantom_cfg, pipeline_cfg, {"n": args.n})
    (out / "phantom_manifest.json").write_text(
        pl.canonical_json({"format_version": 1, "subjects": subjects})
    )
    print(f"wrote {args.n} phantom(s) to {out}")
    return 0


METHODS = ("dixon", "baseline_r2s", "nlls")


def cmd_fit(args: argparse.Namespace) -> int:
    if args.method not in METHODS:
        raise UsageError(f"unknown method {args.method!r}; expected one of {METHODS}")
    manifest_path = Path(args.manifest)
    manifest = pl.read_manifest(manifest_path)
    root = manifest_path.parent
    out = _resolve_out(args.out, "fit")
    out.mkdir(parents=True, exist_ok=True)

    cfg = pl.dataclass_from_dict(pl.PipelineConfig, manifest.config["pipeline"])
    sigma = manifest.config["phantom"]["noise_sigma"]
    chosen = [s for s in manifest.samples if args.split in (None, "all") or s.split == args.split]
    if not chosen:
        raise UsageError(f"no samples in split {args.split!r}")
    for s in chosen:
        if args.method in ("dixon", "baseline_r2s"):
            img = read_raster(root / s.input)
            result = fit_map(img, args.method, dixon_schedule=cfg.dixon_schedule())
        else:
            img = read_raster(root / s.echoes)
            result = fit_map(
                img,
                "nlls",
                ideal_schedule=cfg.ideal_schedule(),
                spectrum=cfg.spectrum(),
                nlls_config=cfg.nlls,
                support_threshold=cfg.support_sigma_mult * sigma,
            )
        for name in result.channel_names:
            plane = result.with_data(result.channel(name)[None], (name,))
            write_raster(plane, out / f"{s.subject_id}_{args.method}_{name}")
    phantom_cfg = pl.dataclass_from_dict(PhantomConfig, manifest.config["phantom"])
    _write_run_config(
        out, "fit", phantom_cfg, cfg, {"method": args.method, "split": args.split, "n": len(chosen)}
    )
    print(f"fitted {len(chosen)} sample(s) with {args.method} into {out}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not methods:
        raise UsageError("--methods must name at least one method")
    manifest_path = Path(args.manifest)
    manifest = pl.read_manifest(manifest_path)
    out = _resolve_out(args.out, "eval")
    samples = pl.load_eval_samples(
        manifest, manifest_path.parent, methods, args.pred_dir, split=args.split
    )
    report = metrics.build_report(
        samples,
        methods,
        out_dir=out,
        metadata={
            "split": args.split,
            "methods": methods,
            "zero_exclusion": "truth==0 voxels excluded",
        },
    )
    if args.plots:
        _scatter_plots(report, out)
    phantom_cfg = pl.dataclass_from_dict(PhantomConfig, manifest.config["phantom"])
    pipeline_cfg = pl.dataclass_from_dict(pl.PipelineConfig, manifest.config["pipeline"])
    _write_run_config(out, "eval", phantom_cfg, pipeline_cfg, {"methods": methods, "split": args.split})
    print((out / "report.txt").read_text())
    return 0


def _scatter_plots(report: metrics.MetricReport, out: Path) -> None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise UsageError("--plots requires matplotlib") from None
    for quantity in metrics.QUANTITIES:
        fig, ax = plt.subplots(figsize=(5, 5))
        for method in sorted(report.mae):
            pts = [
                (mt, mp)
                for _, m, mp, mt, q in report.scatter
                if m == method and q == quantity
            ]
            if not pts:
                continue
            xs, ys = zip(*pts)
            ax.scatter(xs, ys, s=12, alpha=0.7, label=method)
        lims = ax.get_xlim()
        ax.plot(lims, lims, "r-", lw=1)
        ax.set_xlabel(f"mean truth {quantity}")
        ax.set_ylabel(f"mean predicted {quantity}")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / f"scatter_{quantity}.png", dpi=120)
        plt.close(fig)


def cmd_export_ml(args: argparse.Namespace) -> int:
    manifest_path = Path(args.manifest)
    manifest = pl.read_manifest(manifest_path)
    out = _resolve_out(args.out, "export-ml")
    index = pl.export_ml(manifest, manifest_path.parent, out, allow_unfiltered=args.allow_unfiltered)
    phantom_cfg = pl.dataclass_from_dict(PhantomConfig, manifest.config["phantom"])
    pipeline_cfg = pl.dataclass_from_dict(pl.PipelineConfig, manifest.config["pipeline"])
    _write_run_config(out, "export-ml", phantom_cfg, pipeline_cfg, {})
    print(f"exported {len(manifest.samples)} sample(s); split index at {index}")
    return 0


def cmd_pipeline(args: argparse.Namespace) -> int:
    if args.n < 1:
        raise UsageError(f"-n must be >= 1, got {args.n}")
    phantom_cfg, pipeline_cfg = _load_run_config(args.config)
    if args.seed is not None:
        pipeline_cfg = replace(pipeline_cfg, seed=args.seed)
    if args.sigma is not None:
        phantom_cfg = replace(phantom_cfg, noise_sigma=args.sigma)
    out = _resolve_out(args.out, "pipeline")
    cohort_dir = out / "cohort"

    manifest = pl.build_cohort(args.n, phantom_cfg, pipeline_cfg, cohort_dir, jobs=args.jobs)
    pl.write_manifest(manifest, cohort_dir / "manifest_raw.json")
    manifest = pl.mi_quality_filter(manifest, pipeline_cfg.mi_filter_quantile)
    manifest = pl.split_dataset(manifest, pipeline_cfg.split_fractions, seed=pipeline_cfg.seed)
    manifest_path = out / "cohort" / "manifest.json"
    pl.write_manifest(manifest, manifest_path)
    pl.validate_manifest(manifest, cohort_dir)
    pl.export_ml(manifest, cohort_dir, out / "ml")

    pred_dir = out / "predictions"
    for method in ("dixon", "baseline_r2s"):
        fit_args = argparse.Namespace(
            manifest=str(manifest_path), method=method, out=str(pred_dir), split="test"
        )
        cmd_fit(fit_args)
    eval_args = argparse.Namespace(
        manifest=str(manifest_path),
        pred_dir=str(pred_dir),
        methods="dixon,baseline_r2s,target",
        out=str(out / "report"),
        split="test",
        plots=args.plots,
    )
    cmd_eval(eval_args)
    _write_run_config(out, "pipeline", phantom_cfg, pipeline_cfg, {"n": args.n})
    print(f"pipeline complete under {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dixonkit",
        description="Synthetic water-fat MRI cohorts: simulate, fit, evaluate, export.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate phantoms and rendered acquisitions")
    p.add_argument("-n", type=int, required=True, help="number of subjects")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sigma", type=float, default=None, help="noise level override")
    p.add_argument("--config", help="JSON config file")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("fit", help="run an estimator over a cohort manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--method", required=True, help="dixon | baseline_r2s | nlls")
    p.add_argument("--out", help="output directory")
    p.add_argument("--split", default="all", help="train | val | test | all")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="metric tables and scatter data")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--methods", required=True, help="comma-separated prediction sources")
    p.add_argument("--out", help="output directory")
    p.add_argument("--split", default="test")
    p.add_argument("--plots", action="store_true", help="also write PNG scatter plots")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-ml", help="materialize train/val/test raster directories")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="output directory")
    p.add_argument("--allow-unfiltered", action="store_true")
    p.set_defaults(func=cmd_export_ml)

    p = sub.add_parser("pipeline", help="run all stages: cohort, gate, split, fit, eval, export")
    p.add_argument("-n", type=int, required=True, help="number of subjects")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sigma", type=float, default=None, help="noise level override")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--jobs", type=int, default=1, help="subject-level parallelism")
    p.add_argument("--plots", action="store_true")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except (ValueError, KeyError, OSError, pl.ManifestError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
