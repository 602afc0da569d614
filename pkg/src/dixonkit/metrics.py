"""Evaluation: masked MAE, region means, scatter regression, and reports.

Aggregation is per-sample-then-average so every subject weighs equally.
Voxels where the ground truth is exactly zero (background) are excluded
from error metrics.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .raster import BinaryMask, RasterImage

__all__ = [
    "MetricsError",
    "MetricReport",
    "masked_mae",
    "mean_region_value",
    "regression_r2",
    "build_report",
]

QUANTITIES = ("pdff", "r2star")
REGIONS = ("slice", "liver")


class MetricsError(ValueError):
    """Empty selection or malformed metric inputs."""


def _plane(img: RasterImage | np.ndarray) -> np.ndarray:
    if isinstance(img, RasterImage):
        if img.n_channels != 1:
            raise MetricsError(f"expected 1 channel, got {img.n_channels}")
        return img.data[0].astype(np.float64)
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise MetricsError(f"expected a 2D plane, got shape {arr.shape}")
    return arr


def masked_mae(
    pred: RasterImage | np.ndarray,
    truth: RasterImage | np.ndarray,
    mask: BinaryMask | None = None,
) -> float:
    """Mean |pred - truth| over mask voxels whose truth is non-zero."""
    p = _plane(pred)
    t = _plane(truth)
    if p.shape != t.shape:
        raise MetricsError(f"geometry mismatch: {p.shape} vs {t.shape}")
    sel = t != 0.0
    if mask is not None:
        if mask.data.shape != t.shape:
            raise MetricsError("mask geometry mismatch")
        sel &= mask.data
    if not sel.any():
        raise MetricsError("empty selection: no non-zero truth voxels in mask")
    return float(np.abs(p[sel] - t[sel]).mean())


def mean_region_value(img: RasterImage | np.ndarray, mask: BinaryMask | None = None) -> float:
    """Arithmetic mean over the mask (or the full image when mask is None)."""
    p = _plane(img)
    if mask is None:
        return float(p.mean())
    if mask.data.shape != p.shape:
        raise MetricsError("mask geometry mismatch")
    if mask.count == 0:
        raise MetricsError("empty mask")
    return float(p[mask.data].mean())


def regression_r2(xs, ys) -> tuple[float, float, float]:
    """Ordinary least squares of y on x: (slope, intercept, r_squared).

    r_squared is the squared Pearson correlation; constant xs are an error,
    constant ys yield r_squared 0 by convention.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise MetricsError("xs and ys must be 1D and equal length")
    if x.size < 3:
        raise MetricsError("need at least 3 points")
    xm = x - x.mean()
    ym = y - y.mean()
    sxx = (xm * xm).sum()
    if sxx <= 0:
        raise MetricsError("xs are constant")
    sxy = (xm * ym).sum()
    syy = (ym * ym).sum()
    slope = sxy / sxx
    intercept = y.mean() - slope * x.mean()
    r2 = (sxy * sxy) / (sxx * syy) if syy > 0 else 0.0
    return float(slope), float(intercept), float(r2)


@dataclass
class MetricReport:
    """Per-method MAE table plus mean-value scatter regressions."""

    n_samples: int
    # method -> {"pdff_mae", "liver_pdff_mae", "r2star_mae", "liver_r2star_mae"}
    mae: dict[str, dict[str, float]] = field(default_factory=dict)
    # method -> quantity -> {"slope", "intercept", "r_squared"}
    regression: dict[str, dict[str, dict[str, float]]] = field(default_factory=dict)
    # (sample_id, method, mean_pred, mean_truth, quantity)
    scatter: list[tuple[str, str, float, float, str]] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "mae": self.mae,
            "regression": self.regression,
            "metadata": self.metadata,
        }


def _fmt(v: float) -> str:
    return f"{v:.12g}"


def write_report_files(report: MetricReport, out_dir: str | Path) -> dict[str, Path]:
    """Emit report.csv / report.json / report.txt / scatter.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "csv": out / "report.csv",
        "json": out / "report.json",
        "txt": out / "report.txt",
        "scatter": out / "scatter.csv",
    }

    with paths["csv"].open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "metric", "region", "value", "n"])
        for method in sorted(report.mae):
            row = report.mae[method]
            for key in sorted(row):
                quantity = "pdff_mae" if "pdff" in key else "r2star_mae"
                region = "liver" if key.startswith("liver") else "slice"
                writer.writerow([method, quantity, region, _fmt(row[key]), report.n_samples])

    paths["json"].write_text(json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n")

    with paths["scatter"].open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "method", "mean_pred", "mean_truth", "quantity"])
        for sid, method, mp, mt, quantity in report.scatter:
            writer.writerow([sid, method, _fmt(mp), _fmt(mt), quantity])

    lines = [f"samples: {report.n_samples}", ""]
    header = f"{'method':<16}{'pdff_mae':>12}{'liver':>12}{'r2star_mae':>14}{'liver':>12}"
    lines.append(header)
    lines.append("-" * len(header))
    for method in sorted(report.mae):
        row = report.mae[method]

        def cell(key: str) -> str:
            return f"{row[key]:.4g}" if key in row else "-"

        lines.append(
            f"{method:<16}{cell('pdff_mae'):>12}{cell('liver_pdff_mae'):>12}"
            f"{cell('r2star_mae'):>14}{cell('liver_r2star_mae'):>12}"
        )
    lines.append("")
    for method in sorted(report.regression):
        for quantity in sorted(report.regression[method]):
            reg = report.regression[method][quantity]
            lines.append(
                f"{method}/{quantity}: slope={reg['slope']:.4g} "
                f"intercept={reg['intercept']:.4g} r2={reg['r_squared']:.4g}"
            )
    paths["txt"].write_text("\n".join(lines) + "\n")
    return paths


def build_report(
    samples: list[dict],
    methods: list[str],
    out_dir: str | Path | None = None,
    metadata: dict | None = None,
) -> MetricReport:
    """Aggregate metrics over evaluated samples.

    Each sample dict carries: "sample_id", "truth" ({quantity: plane}),
    "mask" (BinaryMask), and "pred" ({method: {quantity: plane}}).  A method
    contributes a quantity only if every sample provides it.  Per-sample
    metrics are averaged across samples; scatter pairs are per-sample means
    over the non-zero-truth slice region.
    """
    if not samples:
        raise MetricsError("no samples to evaluate")
    report = MetricReport(n_samples=len(samples), metadata=metadata or {})

    for method in methods:
        provided = {
            q
            for q in QUANTITIES
            if all(q in s["pred"].get(method, {}) for s in samples)
        }
        if not provided:
            continue
        sums: dict[str, float] = {}
        for s in samples:
            mask = s["mask"]
            for q in sorted(provided):
                truth = s["truth"][q]
                pred = s["pred"][method][q]
                key = f"{q}_mae"
                sums[key] = sums.get(key, 0.0) + masked_mae(pred, truth)
                lkey = f"liver_{q}_mae"
                sums[lkey] = sums.get(lkey, 0.0) + masked_mae(pred, truth, mask)
                t = _plane(truth)
                p = _plane(pred)
                nz = t != 0.0
                if not nz.any():
                    raise MetricsError(f"sample {s['sample_id']}: all-zero truth")
                report.scatter.append(
                    (s["sample_id"], method, float(p[nz].mean()), float(t[nz].mean()), q)
                )
        report.mae[method] = {k: v / len(samples) for k, v in sums.items()}
        report.regression[method] = {}
        for q in sorted(provided):
            pairs = [
                (mp, mt)
                for sid, m, mp, mt, qq in report.scatter
                if m == method and qq == q
            ]
            if len(pairs) >= 3:
                preds, truths = zip(*pairs)
                try:
                    slope, intercept, r2 = regression_r2(truths, preds)
                except MetricsError:
                    continue
                report.regression[method][q] = {
                    "slope": slope,
                    "intercept": intercept,
                    "r_squared": r2,
                }

    if out_dir is not None:
        write_report_files(report, out_dir)
    return report
