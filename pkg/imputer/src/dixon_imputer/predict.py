"""Inference: map two-point input rasters to physical-unit prediction maps.

Outputs are written one quantity per raster as ``<subject>_<name>_<quantity>``
so the evaluation harness can pick them up directly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .data import INPUT_CHANNELS, denormalize_target, normalize_input
from .models import crop_back, pad_to_multiple
from .rasters import Raster, RasterError, read_raster, write_raster
from .training import load_checkpoint

__all__ = ["predict_raster", "predict_files"]


@torch.no_grad()
def predict_raster(generator, spec, raster: Raster) -> dict[str, np.ndarray]:
    """Predicted physical maps keyed by quantity for one input raster."""
    if raster.channel_names != INPUT_CHANNELS:
        raise RasterError(
            f"input channels {raster.channel_names}, expected {INPUT_CHANNELS}"
        )
    x = torch.from_numpy(normalize_input(raster.data)).unsqueeze(0)
    xp, shape = pad_to_multiple(x, 2**spec.depth)
    pred = crop_back(generator(xp), shape)[0].numpy()
    phys = denormalize_target(pred, spec.target_channels)
    return {name: phys[i] for i, name in enumerate(spec.target_channels)}


def _subject_id(path: Path) -> str:
    stem = path.name
    for suffix in (".json", ".raw"):
        if stem.endswith(suffix):
            stem = stem[: -len(suffix)]
    return stem[: -len("_input")] if stem.endswith("_input") else stem


def predict_files(
    checkpoint_path: str | Path,
    input_paths: list[Path],
    out_dir: str | Path,
    method_name: str | None = None,
) -> list[Path]:
    """Run the selected generator over input rasters; returns written headers."""
    generator, info = load_checkpoint(checkpoint_path)
    name = method_name or info.spec.variant
    out = Path(out_dir)
    written: list[Path] = []
    for path in input_paths:
        raster = read_raster(path)
        maps = predict_raster(generator, info.spec, raster)
        sid = _subject_id(Path(path))
        for quantity, plane in maps.items():
            pred = Raster(
                data=plane[None].astype(np.float32),
                channel_names=(quantity,),
                spacing_mm=raster.spacing_mm,
                slice_thickness_mm=raster.slice_thickness_mm,
            )
            written.append(write_raster(pred, out / f"{sid}_{name}_{quantity}"))
    return written
