"""Dataset access and normalization for the imputer.

Samples come from a ``split_index.json`` written by the dataset exporter.
Inputs are the four two-point channels scaled per image by each channel's
99th percentile; targets are fat fraction / 100 and R2* / 500 clamped to
[0, 1.2] so both tasks share a comparable dynamic range.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch.utils.data import Dataset

from .rasters import Raster, RasterError, read_raster

INPUT_CHANNELS = ("in_phase", "opposed_phase", "water", "fat")
TARGET_CHANNELS = ("pdff", "r2star")

PDFF_SCALE = 100.0
R2STAR_SCALE = 500.0
R2STAR_NORM_MAX = 1.2

VARIANT_TARGETS = {
    "multi_task": ("pdff", "r2star"),
    "single_task_pdff": ("pdff",),
    "single_task_r2star": ("r2star",),
}


def normalize_input(planes: np.ndarray) -> np.ndarray:
    """Per-channel division by the per-image 99th percentile."""
    out = np.empty_like(planes, dtype=np.float32)
    for c in range(planes.shape[0]):
        ref = np.percentile(planes[c], 99.0)
        out[c] = planes[c] / max(float(ref), 1e-12)
    return out


def normalize_target(planes: np.ndarray, channels: tuple[str, ...]) -> np.ndarray:
    out = np.empty_like(planes, dtype=np.float32)
    for c, name in enumerate(channels):
        if name == "pdff":
            out[c] = planes[c] / PDFF_SCALE
        elif name == "r2star":
            out[c] = np.clip(planes[c] / R2STAR_SCALE, 0.0, R2STAR_NORM_MAX)
        else:
            raise ValueError(f"unknown target channel {name!r}")
    return out


def denormalize_target(planes: np.ndarray, channels: tuple[str, ...]) -> np.ndarray:
    """Invert normalization and clamp to the physical ranges."""
    out = np.empty_like(planes, dtype=np.float32)
    for c, name in enumerate(channels):
        if name == "pdff":
            out[c] = np.clip(planes[c] * PDFF_SCALE, 0.0, 100.0)
        elif name == "r2star":
            out[c] = np.clip(planes[c] * R2STAR_SCALE, 0.0, None)
        else:
            raise ValueError(f"unknown target channel {name!r}")
    return out


@dataclass
class SampleFiles:
    subject_id: str
    split: str
    input: Path
    target: Path
    mask: Path


def load_split_index(dataset_dir: str | Path) -> list[SampleFiles]:
    root = Path(dataset_dir)
    index_path = root / "split_index.json"
    try:
        doc = json.loads(index_path.read_text())
    except FileNotFoundError:
        raise RasterError(f"no split_index.json under {root}") from None
    samples = []
    for entry in doc["samples"]:
        samples.append(
            SampleFiles(
                subject_id=entry["subject_id"],
                split=entry["split"],
                input=root / entry["input"],
                target=root / entry["target"],
                mask=root / entry["mask"],
            )
        )
    if not samples:
        raise RasterError("split index lists no samples")
    return samples


class PairedSliceDataset(Dataset):
    """Normalized (input, target) tensors for one split and task variant.

    With ``crop`` set, a seeded random square crop is drawn per access
    (training augmentation); otherwise full slices are returned.
    """

    def __init__(
        self,
        dataset_dir: str | Path,
        split: str,
        variant: str,
        crop: int | None = None,
        seed: int = 0,
    ) -> None:
        if variant not in VARIANT_TARGETS:
            raise ValueError(f"unknown variant {variant!r}; expected {sorted(VARIANT_TARGETS)}")
        self.files = [s for s in load_split_index(dataset_dir) if s.split == split]
        if not self.files:
            raise RasterError(f"split {split!r} has no samples")
        self.variant = variant
        self.target_channels = VARIANT_TARGETS[variant]
        self.crop = crop
        self.rng = np.random.default_rng(seed)
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def __len__(self) -> int:
        return len(self.files)

    def _load(self, idx: int) -> tuple[np.ndarray, np.ndarray]:
        if idx not in self._cache:
            sample = self.files[idx]
            inp = read_raster(sample.input)
            tgt = read_raster(sample.target)
            if inp.channel_names != INPUT_CHANNELS:
                raise RasterError(
                    f"{sample.subject_id}: input channels {inp.channel_names}, "
                    f"expected {INPUT_CHANNELS}"
                )
            if tgt.channel_names != TARGET_CHANNELS:
                raise RasterError(
                    f"{sample.subject_id}: target channels {tgt.channel_names}, "
                    f"expected {TARGET_CHANNELS}"
                )
            x = normalize_input(inp.data)
            picked = np.stack([tgt.channel(c) for c in self.target_channels])
            y = normalize_target(picked, self.target_channels)
            self._cache[idx] = (x, y)
        return self._cache[idx]

    def __getitem__(self, idx: int) -> tuple[torch.Tensor, torch.Tensor]:
        x, y = self._load(idx)
        if self.crop is not None:
            rows, cols = x.shape[1:]
            size = min(self.crop, rows, cols)
            r0 = int(self.rng.integers(0, rows - size + 1))
            c0 = int(self.rng.integers(0, cols - size + 1))
            x = x[:, r0 : r0 + size, c0 : c0 + size]
            y = y[:, r0 : r0 + size, c0 : c0 + size]
        return torch.from_numpy(x.copy()), torch.from_numpy(y.copy())
